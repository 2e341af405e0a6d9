"""Turn eventuality paths into annotated word-level token sequences.

A path (E0, r0, E1, ...) verbalizes to ``E0-words conn(r0) E1-words ...``
where conn(r) is the representative connective for each discourse relation
("because" for Reason, "so" for Result, ...).  Tokenization is whitespace
word-level with lowercasing and an [UNK] cutoff; span annotations mark where
each eventuality and connective sits, which is what the masking strategies
operate on.  No sentence-final punctuation is emitted.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

from .errors import EmptyCorpusError, KgmlmError
from .graph import DISCOURSE_RELATIONS, KnowledgeGraph, RelationType
from .walks import EventualityPath

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
RESERVED_TOKENS: tuple[str, ...] = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_RESERVED = len(RESERVED_TOKENS)

DEFAULT_CONNECTIVES: dict[RelationType, tuple[str, ...]] = {
    RelationType.Precedence: ("then",),
    RelationType.Succession: ("after",),
    RelationType.Synchronous: ("meanwhile",),
    RelationType.Reason: ("because",),
    RelationType.Result: ("so",),
    RelationType.Condition: ("if",),
    RelationType.Contrast: ("but",),
    RelationType.Concession: ("although",),
    RelationType.Conjunction: ("and",),
    RelationType.Instantiation: ("for", "example"),
    RelationType.Restatement: ("in", "other", "words"),
    RelationType.Alternative: ("or",),
    RelationType.ChosenAlternative: ("instead",),
    RelationType.Exception: ("except",),
}


class UnknownNodeError(KgmlmError):
    pass


class IdOutOfRangeError(KgmlmError):
    pass


class ConnectiveLexicon:
    """Map from discourse relation to its connective word sequence."""

    def __init__(self, connectives: Mapping[RelationType, Sequence[str]] | None = None):
        table = dict(DEFAULT_CONNECTIVES)
        if connectives:
            for rel, words in connectives.items():
                table[rel] = tuple(w.lower() for w in words)
        for rel in DISCOURSE_RELATIONS:
            if rel not in table or not table[rel] or any(not w for w in table[rel]):
                raise ValueError(f"lexicon must give a nonempty connective for {rel.name}")
        table.pop(RelationType.CoOccurrence, None)
        self._table = {rel: tuple(table[rel]) for rel in DISCOURSE_RELATIONS}

    def words_for(self, relation: RelationType) -> tuple[str, ...]:
        if not relation.is_discourse:
            raise KeyError("CoOccurrence has no connective")
        return self._table[relation]

    def phrase_for(self, relation: RelationType) -> str:
        return " ".join(self.words_for(relation))

    def all_words(self) -> list[str]:
        """Every connective word, in relation order (may repeat across relations)."""
        out = []
        for rel in DISCOURSE_RELATIONS:
            out.extend(self._table[rel])
        return out

    @classmethod
    def from_json(cls, source: IO[str]) -> "ConnectiveLexicon":
        """Load overrides from a JSON map of relation name to connective string."""
        raw = json.load(source)
        overrides = {
            RelationType.from_name(name): tuple(phrase.split()) for name, phrase in raw.items()
        }
        return cls(overrides)


class Vocabulary:
    """Word-to-id map with fixed reserved ids 0..4 for the special tokens."""

    def __init__(self, words_in_id_order: Sequence[str], min_count: int = 1):
        tokens = list(RESERVED_TOKENS) + [w for w in words_in_id_order if w not in RESERVED_TOKENS]
        self.id_to_token: tuple[str, ...] = tuple(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")
        self.min_count = min_count

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, word: str) -> bool:
        return word in self.token_to_id

    def encode_word(self, word: str) -> int:
        return self.token_to_id.get(word.lower(), UNK_ID)

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.encode_word(w) for w in words]

    def decode(self, token_ids: Iterable[int]) -> list[str]:
        out = []
        for tid in token_ids:
            tid = int(tid)
            if not (0 <= tid < len(self.id_to_token)):
                raise IdOutOfRangeError(f"token id {tid} outside [0, {len(self.id_to_token)})")
            out.append(self.id_to_token[tid])
        return out

    def save(self, out: IO[str]) -> None:
        for i, tok in enumerate(self.id_to_token):
            out.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, source: Iterable[str]) -> "Vocabulary":
        pairs = []
        for line in source:
            line = line.rstrip("\n")
            if not line:
                continue
            tok, _, idx = line.partition("\t")
            pairs.append((int(idx), tok))
        pairs.sort()
        tokens = [tok for _, tok in pairs]
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError("vocab file ids must be dense from 0")
        if tokens[:NUM_RESERVED] != list(RESERVED_TOKENS):
            raise ValueError("vocab file must begin with the reserved tokens in order")
        return cls(tokens[NUM_RESERVED:])

    @classmethod
    def load_file(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls.load(f)


def build_vocab(
    corpus: Iterable[EventualityPath],
    graph: KnowledgeGraph,
    lexicon: ConnectiveLexicon,
    min_count: int = 1,
) -> Vocabulary:
    """Count every word the corpus verbalizes to and freeze a vocabulary.

    Node words below the count cutoff fall back to [UNK]; connective words
    are always kept.  Ids are assigned by descending count, ties broken
    lexicographically, so two builds over the same corpus agree exactly.
    """
    counts: Counter[str] = Counter()
    n_paths = 0
    for path in corpus:
        n_paths += 1
        for node_id in path.nodes:
            counts.update(graph.node(node_id).text)
        for rel in path.relations:
            counts.update(lexicon.words_for(rel))
    if n_paths == 0:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    connective_words = set(lexicon.all_words())
    kept = [w for w, c in counts.items() if c >= min_count or w in connective_words]
    kept.extend(w for w in connective_words if w not in counts)
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept, min_count=min_count)


@dataclass(frozen=True)
class TokenSequence:
    """Encoded verbalization with eventuality and connective span annotations.

    Spans are half-open [start, end) in token positions, non-overlapping,
    sorted, and tile the sequence exactly in the alternating order
    eventuality, connective, eventuality, ...
    """

    token_ids: tuple[int, ...]
    eventuality_spans: tuple[tuple[int, int, int], ...]  # (start, end, node id)
    connective_spans: tuple[tuple[int, int, RelationType], ...]

    def __len__(self) -> int:
        return len(self.token_ids)


def verbalize(
    path: EventualityPath,
    graph: KnowledgeGraph,
    lexicon: ConnectiveLexicon,
    vocab: Vocabulary,
) -> TokenSequence:
    """Render a path as connective-linked lowercase tokens with exact spans."""
    for node_id in path.nodes:
        if not (0 <= node_id < len(graph)):
            raise UnknownNodeError(f"path references unknown node {node_id}")
    ids: list[int] = []
    ev_spans = []
    conn_spans = []
    for i, node_id in enumerate(path.nodes):
        words = graph.node(node_id).text
        start = len(ids)
        ids.extend(vocab.encode(words))
        ev_spans.append((start, len(ids), node_id))
        if i < len(path.relations):
            rel = path.relations[i]
            start = len(ids)
            ids.extend(vocab.encode(lexicon.words_for(rel)))
            conn_spans.append((start, len(ids), rel))
    return TokenSequence(tuple(ids), tuple(ev_spans), tuple(conn_spans))


def decode(token_ids: Iterable[int], vocab: Vocabulary) -> list[str]:
    """Inverse of encoding for in-vocabulary tokens."""
    return vocab.decode(token_ids)
