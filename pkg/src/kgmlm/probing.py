"""Read-only inspection of a trained model.

Three probes, none of which mutate parameters:

* connective cloze: build "[CLS] left [MASK] right [SEP]" and rank connective
  words by the masked-token distribution at the [MASK] slot,
* binary choice: score each candidate's positive-class probability under the
  co-occurrence head on "[CLS] context [SEP] candidate [SEP]",
* held-out relation evaluation: verbalize unseen edges as one-hop sequences,
  mask the connective, and compare the relation head's argmax to the truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, KgmlmError
from .graph import Edge, KnowledgeGraph, RelationType
from .masking import apply_connective_mask
from .model import Batch, ModelConfig, collate, forward, pad_sequences
from .verbalizer import (
    CLS_ID,
    MASK_ID,
    NUM_RESERVED,
    SEP_ID,
    UNK_ID,
    ConnectiveLexicon,
    Vocabulary,
    verbalize,
)
from .walks import EventualityPath

_EMPTY = np.zeros(0, dtype=np.int64)


class EmptyAfterUnkingError(KgmlmError):
    pass


class TooFewCandidatesError(KgmlmError):
    pass


class EmptyHeldOutError(KgmlmError):
    pass


@dataclass(frozen=True)
class ProbeQuery:
    left: str
    right: str
    top_k: int = 5

    def __post_init__(self):
        if not self.left.strip() or not self.right.strip():
            raise ConfigError("probe query texts must be nonempty")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")


@dataclass(frozen=True)
class ChoiceTask:
    context: str
    candidates: tuple[str, ...]
    gold: int | None = None

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise TooFewCandidatesError("a choice task needs at least 2 candidates")
        if self.gold is not None and not (0 <= self.gold < len(self.candidates)):
            raise ConfigError("gold index outside candidate range")


def _encode_text(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.encode_word(w) for w in text.lower().split()]


def _softmax_1d(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def probe_connective(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    query: ProbeQuery,
    vocab: Vocabulary,
    lexicon: ConnectiveLexicon,
    restrict_to_connectives: bool = True,
) -> list[tuple[str, float]]:
    """Rank fillers for the masked slot between the two event texts.

    By default the distribution is restricted to the lexicon's connective
    words and renormalized, so rankings are comparable across checkpoints;
    with restrict_to_connectives=False the full vocabulary is ranked (the
    reserved tokens are still excluded).
    """
    left = _encode_text(query.left, vocab)
    right = _encode_text(query.right, vocab)
    if all(t == UNK_ID for t in left + right):
        raise EmptyAfterUnkingError("every query word is out of vocabulary")
    ids = [CLS_ID, *left, MASK_ID, *right, SEP_ID]
    mask_pos = 1 + len(left)
    input_ids, key_mask = pad_sequences([ids])
    batch = Batch(
        input_ids,
        key_mask,
        np.array([0], dtype=np.int64),
        np.array([mask_pos], dtype=np.int64),
        np.array([0], dtype=np.int64),  # dummy target; loss is never taken
        _EMPTY,
        _EMPTY,
        _EMPTY,
        _EMPTY,
        _EMPTY,
    )
    logits = forward(params, config, batch).mlm_logits[0]
    if restrict_to_connectives:
        words = sorted(set(lexicon.all_words()))
        word_ids = [vocab.encode_word(w) for w in words]
        probs = _softmax_1d(logits[word_ids])
        ranked = sorted(zip(words, probs), key=lambda wp: (-wp[1], wp[0]))
    else:
        probs = _softmax_1d(logits)
        order = np.argsort(-probs, kind="stable")
        ranked = [
            (vocab.id_to_token[i], probs[i]) for i in order if i >= NUM_RESERVED
        ]
    return [(w, float(p)) for w, p in ranked[: query.top_k]]


def score_choice(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    task: ChoiceTask,
    vocab: Vocabulary,
) -> tuple[int, list[float]]:
    """Positive-class co-occurrence probability per candidate; argmax wins,
    ties broken by the lowest index."""
    context = _encode_text(task.context, vocab)
    sequences = [
        [CLS_ID, *context, SEP_ID, *_encode_text(cand, vocab), SEP_ID]
        for cand in task.candidates
    ]
    input_ids, key_mask = pad_sequences(sequences)
    n = len(sequences)
    batch = Batch(
        input_ids,
        key_mask,
        _EMPTY,
        _EMPTY,
        _EMPTY,
        _EMPTY,
        _EMPTY,
        _EMPTY,
        np.arange(n, dtype=np.int64),
        np.zeros(n, dtype=np.int64),  # dummy labels; loss is never taken
    )
    logits = forward(params, config, batch).cooc_logits
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    scores = e[:, 1] / e.sum(axis=1)
    return int(np.argmax(scores)), [float(s) for s in scores]


@dataclass(frozen=True)
class HeldOutReport:
    accuracy: float
    per_relation: dict[RelationType, float]
    support: dict[RelationType, int]
    confusion: np.ndarray  # (num_relations, num_relations), rows = truth
    predictions: tuple[dict, ...]  # per-edge dump for independent recounts


def eval_relation_heldout(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    edges: Sequence[Edge],
    graph: KnowledgeGraph,
    lexicon: ConnectiveLexicon,
    vocab: Vocabulary,
    batch_size: int = 64,
) -> HeldOutReport:
    """Relation-head accuracy on edges the walks never saw.

    Each edge becomes a one-hop connective-masked sequence; the prediction is
    the relation head's argmax at the masked connective position.
    """
    if not edges:
        raise EmptyHeldOutError("no held-out edges to evaluate")
    for edge in edges:
        if not edge.relation.is_discourse:
            raise ConfigError("held-out evaluation requires discourse edges")
    instances = []
    for edge in edges:
        path = EventualityPath((edge.head, edge.tail), (edge.relation,))
        instances.append(apply_connective_mask(verbalize(path, graph, lexicon, vocab)))
    predicted: list[int] = []
    for start in range(0, len(instances), batch_size):
        batch = collate(instances[start : start + batch_size], config.max_len)
        rel_logits = forward(params, config, batch).rel_logits
        predicted.extend(int(i) for i in rel_logits.argmax(axis=1))
    confusion = np.zeros((config.num_relations, config.num_relations), dtype=np.int64)
    dump = []
    hits = 0
    for edge, pred in zip(edges, predicted):
        true = int(edge.relation)
        confusion[true, pred] += 1
        hits += int(pred == true)
        dump.append(
            {
                "head": edge.head,
                "tail": edge.tail,
                "relation": edge.relation.name,
                "predicted": RelationType(pred).name,
                "correct": pred == true,
            }
        )
    support = {
        RelationType(r): int(confusion[r].sum())
        for r in range(config.num_relations)
        if confusion[r].sum()
    }
    per_relation = {rel: float(confusion[int(rel), int(rel)] / n) for rel, n in support.items()}
    return HeldOutReport(
        hits / len(edges), per_relation, support, confusion, tuple(dump)
    )


def read_probe_queries(source: Iterable[str]) -> Iterator[ProbeQuery]:
    for line in source:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        yield ProbeQuery(obj["left"], obj["right"], int(obj.get("k", 5)))


def write_probe_results(
    results: Iterable[tuple[ProbeQuery, list[tuple[str, float]]]], out: IO[str]
) -> None:
    for query, ranked in results:
        out.write(
            json.dumps(
                {
                    "left": query.left,
                    "right": query.right,
                    "predictions": [[w, p] for w, p in ranked],
                },
                separators=(",", ":"),
            )
            + "\n"
        )


def read_choice_tasks(source: Iterable[str]) -> Iterator[ChoiceTask]:
    for line in source:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        gold = obj.get("gold")
        yield ChoiceTask(
            obj["context"],
            tuple(obj["candidates"]),
            None if gold is None else int(gold),
        )


def write_choice_results(
    results: Iterable[tuple[ChoiceTask, int, list[float]]], out: IO[str]
) -> None:
    for task, chosen, scores in results:
        obj = {
            "context": task.context,
            "candidates": list(task.candidates),
            "chosen": chosen,
            "scores": scores,
        }
        if task.gold is not None:
            obj["gold"] = task.gold
            obj["correct"] = chosen == task.gold
        out.write(json.dumps(obj, separators=(",", ":")) + "\n")


def write_heldout_predictions(report: HeldOutReport, out: IO[str]) -> None:
    for entry in report.predictions:
        out.write(json.dumps(entry, separators=(",", ":")) + "\n")
