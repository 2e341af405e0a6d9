"""Constrained weighted random walks over the eventuality graph.

A walk yields an alternating node/relation path.  Three quality rules shape
the sampling:

1. start nodes must have frequency strictly greater than a cutoff (and at
   least one discourse out-edge), with sub-linear down-sampling of extremely
   frequent nodes;
2. two successive edges may repeat a relation only if that relation is
   transitive (temporal/causal chains compose, e.g. Precedence, Result);
3. a Reason edge directly after a Condition edge gets a multiplicative mass
   boost, raising the rate of if-then-because shaped paths.

CoOccurrence edges never appear inside walks.

Every sampled item draws from its own random stream derived from
``(seed, stage, item index)``, so corpora are byte-identical across runs and
independent of the worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

import numpy as np

from .errors import ConfigError, KgmlmError
from .graph import Edge, KnowledgeGraph, RelationType
from .sampling import AliasSampler

# Stream namespaces so different pipeline stages never share random streams
# even when configured with the same seed.
STREAM_WALK = 0
STREAM_MASK = 1
STREAM_TRAIN = 2
STREAM_SYNTH = 3

DEFAULT_TRANSITIVE_RELATIONS = frozenset(
    {
        RelationType.Precedence,
        RelationType.Succession,
        RelationType.Reason,
        RelationType.Result,
    }
)


class NoEligibleStartNodesError(KgmlmError):
    pass


class SamplingStalledError(KgmlmError):
    pass


def item_rng(seed: int, stage: int, index: int) -> np.random.Generator:
    """Independent per-item random stream."""
    return np.random.default_rng(np.random.SeedSequence([seed, stage, index]))


@dataclass(frozen=True)
class WalkConfig:
    min_start_frequency: int = 5
    max_hops: int = 5
    min_hops: int = 1
    transitive_relations: frozenset[RelationType] = DEFAULT_TRANSITIVE_RELATIONS
    pattern_boost: float = 2.0
    downsample_percentile: float = 0.999
    downsample_power: float = 0.5
    seed: int = 0
    num_sequences: int = 1000
    retry_budget: int = 100

    def __post_init__(self):
        if self.min_hops < 1 or self.min_hops > self.max_hops:
            raise ConfigError(f"need 1 <= min_hops <= max_hops, got {self.min_hops}..{self.max_hops}")
        if self.min_start_frequency < 0:
            raise ConfigError("min_start_frequency must be >= 0")
        if self.pattern_boost < 1.0:
            raise ConfigError("pattern_boost must be >= 1")
        if not (0.0 < self.downsample_percentile <= 1.0):
            raise ConfigError("downsample_percentile must be in (0, 1]")
        if not (0.0 <= self.downsample_power <= 1.0):
            raise ConfigError("downsample_power must be in [0, 1]")
        if self.num_sequences < 1:
            raise ConfigError("num_sequences must be >= 1")
        if self.retry_budget < 1:
            raise ConfigError("retry_budget must be >= 1")
        if RelationType.CoOccurrence in self.transitive_relations:
            raise ConfigError("CoOccurrence cannot be transitive (never walked)")


@dataclass(frozen=True)
class EventualityPath:
    """Alternating node/relation sequence (E0, r0, E1, ..., r_{l-1}, E_l)."""

    nodes: tuple[int, ...]
    relations: tuple[RelationType, ...]

    def __post_init__(self):
        if len(self.nodes) != len(self.relations) + 1:
            raise ValueError("path must have one more node than relations")
        if not self.relations:
            raise ValueError("path must contain at least one relation")

    @property
    def num_hops(self) -> int:
        return len(self.relations)


def check_path(path: EventualityPath, config: WalkConfig) -> None:
    """Raise ValueError if ``path`` violates any walk invariant."""
    if not (config.min_hops <= path.num_hops <= config.max_hops):
        raise ValueError(f"hop count {path.num_hops} outside [{config.min_hops}, {config.max_hops}]")
    for r in path.relations:
        if not r.is_discourse:
            raise ValueError("CoOccurrence relation inside a walk")
    for a, b in zip(path.relations, path.relations[1:]):
        if a is b and a not in config.transitive_relations:
            raise ValueError(f"repeated non-transitive relation {a.name}")


class StartSampler:
    """Weighted categorical distribution over eligible start nodes.

    Eligibility: frequency strictly greater than the cutoff and at least one
    discourse out-edge.  Mass is min(freq, cap) ** power with the cap at a
    high frequency percentile, damping pathologically frequent nodes.
    """

    def __init__(self, graph: KnowledgeGraph, config: WalkConfig):
        cap = graph.frequency_percentile(config.downsample_percentile)
        ids = []
        masses = []
        for n in graph.nodes:
            if n.frequency <= config.min_start_frequency:
                continue
            if not any(e.relation.is_discourse for e in graph.neighbors(n.id, True)):
                continue
            ids.append(n.id)
            masses.append(min(n.frequency, cap) ** config.downsample_power)
        if not ids:
            raise NoEligibleStartNodesError(
                f"no node has frequency > {config.min_start_frequency} and a discourse out-edge"
            )
        self.node_ids = np.asarray(ids, dtype=np.int64)
        self.masses = np.asarray(masses, dtype=np.float64)
        self._alias = AliasSampler(self.masses)

    @property
    def probabilities(self) -> np.ndarray:
        return self.masses / self.masses.sum()

    def sample(self, rng: np.random.Generator, size=None):
        idx = self._alias.sample(rng, size=size)
        if size is None:
            return int(self.node_ids[idx])
        return self.node_ids[idx]


def build_start_sampler(graph: KnowledgeGraph, config: WalkConfig) -> StartSampler:
    return StartSampler(graph, config)


def candidate_masses(
    graph: KnowledgeGraph,
    current: int,
    previous_relation: RelationType | None,
    config: WalkConfig,
) -> tuple[list[Edge], np.ndarray]:
    """Admissible next edges and their unnormalized masses at a walk state."""
    candidates = []
    masses = []
    block_repeat = (
        previous_relation is not None and previous_relation not in config.transitive_relations
    )
    boost_reason = previous_relation is RelationType.Condition
    for e in graph.neighbors(current, include_co_occurrence=False):
        if block_repeat and e.relation is previous_relation:
            continue
        mass = e.weight
        if boost_reason and e.relation is RelationType.Reason:
            mass *= config.pattern_boost
        candidates.append(e)
        masses.append(mass)
    return candidates, np.asarray(masses, dtype=np.float64)


def next_edge(
    graph: KnowledgeGraph,
    current: int,
    previous_relation: RelationType | None,
    rng: np.random.Generator,
    config: WalkConfig,
) -> Edge | None:
    """Draw the next edge proportionally to boosted weights, or None at a dead end."""
    candidates, masses = candidate_masses(graph, current, previous_relation, config)
    if not candidates:
        return None
    cum = np.cumsum(masses)
    r = rng.random() * cum[-1]
    return candidates[min(int(np.searchsorted(cum, r, side="right")), len(candidates) - 1)]


def sample_path(
    graph: KnowledgeGraph,
    start_sampler: StartSampler,
    rng: np.random.Generator,
    config: WalkConfig,
) -> EventualityPath | None:
    """One walk attempt.

    Draws a start node, then a target hop count uniform on
    [min_hops, max_hops], walks until the target or a dead end, and returns
    None when fewer than min_hops edges were traversed.
    """
    start = start_sampler.sample(rng)
    target = int(rng.integers(config.min_hops, config.max_hops + 1))
    nodes = [start]
    relations: list[RelationType] = []
    previous: RelationType | None = None
    while len(relations) < target:
        edge = next_edge(graph, nodes[-1], previous, rng, config)
        if edge is None:
            break
        nodes.append(edge.tail)
        relations.append(edge.relation)
        previous = edge.relation
    if len(relations) < config.min_hops:
        return None
    return EventualityPath(tuple(nodes), tuple(relations))


@dataclass
class LengthHistogram:
    """Paths per hop count, the corpus length report."""

    counts: dict[int, int] = field(default_factory=dict)

    def record(self, hops: int) -> None:
        self.counts[hops] = self.counts.get(hops, 0) + 1

    def total(self) -> int:
        return sum(self.counts.values())

    def to_json_dict(self) -> dict[str, int]:
        return {str(h): self.counts[h] for h in sorted(self.counts)}

    def save(self, out: IO[str]) -> None:
        json.dump(self.to_json_dict(), out, indent=2)
        out.write("\n")

    @classmethod
    def load(cls, source: IO[str]) -> "LengthHistogram":
        return cls({int(k): int(v) for k, v in json.load(source).items()})

    def render(self, width: int = 40) -> str:
        """ASCII bar chart, one line per hop count."""
        if not self.counts:
            return "(empty)"
        peak = max(self.counts.values())
        lines = []
        for h in sorted(self.counts):
            c = self.counts[h]
            bar = "#" * max(1, round(width * c / peak))
            lines.append(f"hops={h}  {c:>8}  {bar}")
        return "\n".join(lines)


def _sample_item(
    graph: KnowledgeGraph,
    start_sampler: StartSampler,
    config: WalkConfig,
    index: int,
) -> EventualityPath:
    rng = item_rng(config.seed, STREAM_WALK, index)
    for _ in range(config.retry_budget):
        path = sample_path(graph, start_sampler, rng, config)
        if path is not None:
            return path
    raise SamplingStalledError(
        f"{config.retry_budget} consecutive failed walks for sequence {index}; "
        "graph may lack usable paths of the requested length"
    )


_POOL_STATE: dict = {}


def _pool_init(graph, start_sampler, config):
    _POOL_STATE["args"] = (graph, start_sampler, config)


def _pool_sample(index: int) -> EventualityPath:
    graph, start_sampler, config = _POOL_STATE["args"]
    return _sample_item(graph, start_sampler, config, index)


def sample_corpus(
    graph: KnowledgeGraph, config: WalkConfig, workers: int = 1
) -> tuple[list[EventualityPath], LengthHistogram]:
    """Sample exactly config.num_sequences paths plus their length histogram.

    Fully determined by config.seed; the worker count only affects wall time.
    """
    sampler = build_start_sampler(graph, config)
    indices = range(config.num_sequences)
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_pool_init, initargs=(graph, sampler, config)
        ) as pool:
            chunk = max(1, config.num_sequences // (workers * 8))
            paths = list(pool.map(_pool_sample, indices, chunksize=chunk))
    else:
        paths = [_sample_item(graph, sampler, config, i) for i in indices]
    histogram = LengthHistogram()
    for p in paths:
        histogram.record(p.num_hops)
    return paths, histogram


def path_to_json_dict(path: EventualityPath) -> dict:
    return {"nodes": list(path.nodes), "relations": [r.name for r in path.relations]}


def path_from_json_dict(obj: dict) -> EventualityPath:
    return EventualityPath(
        tuple(int(n) for n in obj["nodes"]),
        tuple(RelationType.from_name(r) for r in obj["relations"]),
    )


def write_corpus_jsonl(paths: Iterable[EventualityPath], out: IO[str]) -> None:
    for p in paths:
        out.write(json.dumps(path_to_json_dict(p), separators=(",", ":")) + "\n")


def read_corpus_jsonl(source: Iterable[str]) -> Iterator[EventualityPath]:
    for line in source:
        line = line.strip()
        if line:
            yield path_from_json_dict(json.loads(line))


def read_corpus_file(path) -> list[EventualityPath]:
    with open(path, encoding="utf-8") as f:
        return list(read_corpus_jsonl(f))
