"""Training-instance construction: whole-eventuality masking, connective
masking, and co-occurrence pair attachment.

Each verbalized sequence yields exactly one instance under one of two
strategies, drawn 50/50 by default:

* whole-eventuality: one eventuality span is corrupted token-wise with the
  standard 80/10/10 mix ([MASK] / random word / keep), subject to a masking
  budget of ceil(budget_fraction * n) tokens; if no span fits the budget the
  shortest span is masked anyway so every sequence yields supervision.
* connective: every connective span is replaced by pure [MASK] tokens and
  each span contributes one relation label at its first token.  No random
  replacement here: a random word would corrupt the relation supervision.

When the path's nodes have CoOccurrence neighbors, a candidate eventuality is
appended as ``[CLS] S [SEP] E_c [SEP]`` with a binary co-occurred label
(positive half the time), so the co-occurrence head trains on both strategies.
"""

from __future__ import annotations

import enum
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from math import ceil
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, KgmlmError
from .graph import KnowledgeGraph, RelationType
from .verbalizer import (
    CLS_ID,
    MASK_ID,
    NUM_RESERVED,
    SEP_ID,
    ConnectiveLexicon,
    TokenSequence,
    Vocabulary,
    verbalize,
)
from .walks import STREAM_MASK, EventualityPath, item_rng

MASK_PROB = 0.8
RANDOM_PROB = 0.1  # remaining 0.1 keeps the original token


class NoEventualitySpansError(KgmlmError):
    pass


class NoConnectiveSpansError(KgmlmError):
    pass


class NoPositiveCandidateError(KgmlmError):
    pass


class MaskingStrategy(enum.Enum):
    WHOLE_EVENTUALITY = "WholeEventuality"
    CONNECTIVE = "Connective"


@dataclass(frozen=True)
class MaskingConfig:
    budget_fraction: float = 0.25
    whole_eventuality_prob: float = 0.5
    cooc_positive_prob: float = 0.5
    attach_cooccurrence: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.budget_fraction <= 1.0):
            raise ConfigError("budget_fraction must be in (0, 1]")
        if not (0.0 <= self.whole_eventuality_prob <= 1.0):
            raise ConfigError("whole_eventuality_prob must be in [0, 1]")
        if not (0.0 <= self.cooc_positive_prob <= 1.0):
            raise ConfigError("cooc_positive_prob must be in [0, 1]")


@dataclass(frozen=True)
class CoocInstance:
    """A sequence/candidate pair for the binary co-occurrence task."""

    sequence_ids: tuple[int, ...]
    candidate_ids: tuple[int, ...]
    candidate_node: int
    label: int  # 1 = co-occurred, 0 = random negative

    def serialized_ids(self) -> tuple[int, ...]:
        return (CLS_ID, *self.sequence_ids, SEP_ID, *self.candidate_ids, SEP_ID)


@dataclass(frozen=True)
class TrainingInstance:
    """One model input with its MLM / relation / co-occurrence supervision.

    Positions index into input_ids, which always starts with [CLS]; when a
    co-occurrence candidate is attached the layout is
    ``[CLS] masked-S [SEP] E_c [SEP]``, otherwise ``[CLS] masked-S [SEP]``.
    """

    input_ids: tuple[int, ...]
    mlm_targets: dict[int, int]
    relation_targets: dict[int, RelationType]
    cooccurrence: tuple[tuple[int, ...], int] | None  # (candidate token ids, label)
    strategy: MaskingStrategy

    def __len__(self) -> int:
        return len(self.input_ids)


def _corrupt_token(original: int, rng: np.random.Generator, vocab_size: int) -> int:
    u = rng.random()
    if u < MASK_PROB:
        return MASK_ID
    if u < MASK_PROB + RANDOM_PROB:
        return int(rng.integers(NUM_RESERVED, vocab_size))
    return original


def apply_whole_eventuality_mask(
    seq: TokenSequence,
    rng: np.random.Generator,
    vocab: Vocabulary,
    budget_fraction: float = 0.25,
) -> TrainingInstance:
    """Mask exactly one eventuality span within the token budget.

    Spans longer than ceil(budget_fraction * n) are ineligible; when nothing
    fits, the shortest span (ties to the lowest start) is masked as a
    fallback.  The chosen span is corrupted 80/10/10 per position.
    """
    if not seq.eventuality_spans:
        raise NoEventualitySpansError("sequence has no eventuality spans")
    n = len(seq.token_ids)
    budget = ceil(budget_fraction * n)
    eligible = [s for s in seq.eventuality_spans if s[1] - s[0] <= budget]
    if eligible:
        span = eligible[int(rng.integers(0, len(eligible)))]
    else:
        span = min(seq.eventuality_spans, key=lambda s: (s[1] - s[0], s[0]))
    start, end, _ = span
    input_ids = [CLS_ID, *seq.token_ids, SEP_ID]
    mlm_targets: dict[int, int] = {}
    for pos in range(start, end):
        shifted = pos + 1  # [CLS] offset
        mlm_targets[shifted] = input_ids[shifted]
        input_ids[shifted] = _corrupt_token(input_ids[shifted], rng, len(vocab))
    return TrainingInstance(
        tuple(input_ids), mlm_targets, {}, None, MaskingStrategy.WHOLE_EVENTUALITY
    )


def apply_connective_mask(seq: TokenSequence) -> TrainingInstance:
    """Mask every connective span (pure [MASK]) and label each with its relation.

    Deterministic given the sequence.  The relation label sits at the first
    token of each span so multi-word connectives contribute one label.
    """
    if not seq.connective_spans:
        raise NoConnectiveSpansError("sequence has no connective spans")
    input_ids = [CLS_ID, *seq.token_ids, SEP_ID]
    mlm_targets: dict[int, int] = {}
    relation_targets: dict[int, RelationType] = {}
    for start, end, rel in seq.connective_spans:
        relation_targets[start + 1] = rel
        for pos in range(start, end):
            shifted = pos + 1
            mlm_targets[shifted] = input_ids[shifted]
            input_ids[shifted] = MASK_ID
    return TrainingInstance(
        tuple(input_ids), mlm_targets, relation_targets, None, MaskingStrategy.CONNECTIVE
    )


def cooccurrence_candidates(graph: KnowledgeGraph, path: EventualityPath) -> list[int]:
    """Union of CoOccurrence neighbors over the path's nodes, sorted."""
    pool: set[int] = set()
    for node_id in path.nodes:
        pool.update(graph.co_occurrence_neighbors(node_id))
    return sorted(pool)


def make_cooccurrence_instance(
    path: EventualityPath,
    graph: KnowledgeGraph,
    rng: np.random.Generator,
    vocab: Vocabulary,
    lexicon: ConnectiveLexicon,
    positive_prob: float = 0.5,
) -> CoocInstance:
    """Pair the verbalized path with a candidate eventuality and a label.

    Positives come uniformly from the CoOccurrence neighbors of the path's
    nodes; negatives uniformly from all other nodes (path nodes excluded).
    """
    positives = cooccurrence_candidates(graph, path)
    if not positives:
        raise NoPositiveCandidateError("path nodes have no CoOccurrence neighbors")
    seq = verbalize(path, graph, lexicon, vocab)
    excluded = set(positives) | set(path.nodes)
    # When every node co-occurs with the path the negative pool is empty;
    # fall back to a positive rather than fail on small dense graphs.
    want_positive = rng.random() < positive_prob or len(excluded) >= len(graph)
    if want_positive:
        candidate = positives[int(rng.integers(0, len(positives)))]
        label = 1
    else:
        while True:
            candidate = int(rng.integers(0, len(graph)))
            if candidate not in excluded:
                break
        label = 0
    candidate_ids = tuple(vocab.encode(graph.node(candidate).text))
    return CoocInstance(seq.token_ids, candidate_ids, candidate, label)


def build_instance(
    seq: TokenSequence,
    path: EventualityPath,
    graph: KnowledgeGraph,
    vocab: Vocabulary,
    lexicon: ConnectiveLexicon,
    rng: np.random.Generator,
    config: MaskingConfig,
) -> TrainingInstance:
    """One training instance: pick a strategy, mask, attach a cooc pair if possible."""
    if rng.random() < config.whole_eventuality_prob:
        instance = apply_whole_eventuality_mask(seq, rng, vocab, config.budget_fraction)
    else:
        instance = apply_connective_mask(seq)
    if config.attach_cooccurrence and cooccurrence_candidates(graph, path):
        cooc = make_cooccurrence_instance(
            path, graph, rng, vocab, lexicon, config.cooc_positive_prob
        )
        input_ids = (*instance.input_ids, *cooc.candidate_ids, SEP_ID)
        instance = TrainingInstance(
            input_ids,
            instance.mlm_targets,
            instance.relation_targets,
            (cooc.candidate_ids, cooc.label),
            instance.strategy,
        )
    return instance


def _build_item(graph, vocab, lexicon, config, indexed_path):
    index, path = indexed_path
    rng = item_rng(config.seed, STREAM_MASK, index)
    seq = verbalize(path, graph, lexicon, vocab)
    return build_instance(seq, path, graph, vocab, lexicon, rng, config)


_POOL_STATE: dict = {}


def _pool_init(graph, vocab, lexicon, config):
    _POOL_STATE["args"] = (graph, vocab, lexicon, config)


def _pool_build(indexed_path):
    graph, vocab, lexicon, config = _POOL_STATE["args"]
    return _build_item(graph, vocab, lexicon, config, indexed_path)


def build_instances(
    corpus: Sequence[EventualityPath],
    graph: KnowledgeGraph,
    vocab: Vocabulary,
    lexicon: ConnectiveLexicon,
    config: MaskingConfig,
    workers: int = 1,
) -> list[TrainingInstance]:
    """Instances for a whole corpus; reproducible from (config.seed, corpus)."""
    items = list(enumerate(corpus))
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_pool_init, initargs=(graph, vocab, lexicon, config)
        ) as pool:
            chunk = max(1, len(items) // (workers * 8))
            return list(pool.map(_pool_build, items, chunksize=chunk))
    return [_build_item(graph, vocab, lexicon, config, item) for item in items]


def instance_to_json_dict(instance: TrainingInstance) -> dict:
    obj: dict = {
        "input_ids": list(instance.input_ids),
        "mlm_targets": {str(p): t for p, t in sorted(instance.mlm_targets.items())},
        "relation_targets": {
            str(p): r.name for p, r in sorted(instance.relation_targets.items())
        },
        "strategy": instance.strategy.value,
    }
    if instance.cooccurrence is not None:
        candidate_ids, label = instance.cooccurrence
        obj["cooc"] = {"candidate_ids": list(candidate_ids), "label": label}
    return obj


def instance_from_json_dict(obj: dict) -> TrainingInstance:
    cooc = None
    if obj.get("cooc") is not None:
        cooc = (tuple(int(i) for i in obj["cooc"]["candidate_ids"]), int(obj["cooc"]["label"]))
    return TrainingInstance(
        tuple(int(i) for i in obj["input_ids"]),
        {int(p): int(t) for p, t in obj["mlm_targets"].items()},
        {int(p): RelationType.from_name(r) for p, r in obj["relation_targets"].items()},
        cooc,
        MaskingStrategy(obj["strategy"]),
    )


def write_instances_jsonl(instances: Iterable[TrainingInstance], out: IO[str]) -> None:
    for inst in instances:
        out.write(json.dumps(instance_to_json_dict(inst), separators=(",", ":")) + "\n")


def read_instances_jsonl(source: Iterable[str]) -> Iterator[TrainingInstance]:
    for line in source:
        line = line.strip()
        if line:
            yield instance_from_json_dict(json.loads(line))


def read_instances_file(path) -> list[TrainingInstance]:
    with open(path, encoding="utf-8") as f:
        return list(read_instances_jsonl(f))
