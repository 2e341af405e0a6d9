"""Deterministic synthetic knowledge graph with recoverable structure.

Nodes are split into groups; the first token of a node's text names its
group, so group membership is visible to the model.  Every ordered group
pair carries exactly one discourse relation, assigned by a seeded shuffle
whose marginals follow the requested relation weights.  A fraction of the
discourse edges is held out of the emitted graph: a model trained on walks
over the remaining edges can still be scored on them, because a held-out
edge's relation is determined by its group pair.

Each group also has a fixed set of partner groups, the group itself first;
a node co-occurs with exactly the other nodes of its partner groups.  With
one partner group a candidate co-occurs iff its group token already appears
in the sequence, a token-match signal a small encoder picks up reliably.

A sidecar answer key records the true relation of every discourse edge,
including the held-out ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from .errors import ConfigError
from .graph import (
    DISCOURSE_RELATIONS,
    Edge,
    Eventuality,
    KnowledgeGraph,
    RelationType,
)
from .probing import ChoiceTask
from .walks import STREAM_SYNTH, item_rng

FILLER_WORDS = ("quickly", "slowly", "quietly", "loudly", "together")
_HUB_STRIDE = 97  # every 97th node gets a boosted frequency (heavy tail)
_HUB_FACTOR = 50
_START_CUTOFF = 5  # default walk start-frequency rule, used only as a safety net


class InvalidSpecError(ConfigError):
    pass


@dataclass(frozen=True)
class PatternSpec:
    """Shape of the planted structure.

    relation_weights are target marginal proportions over the 14 discourse
    relations in enum order; None means uniform.
    """

    num_nodes: int = 300
    num_groups: int = 10
    num_edges: int = 6000
    relation_weights: tuple[float, ...] | None = None
    cooc_partner_groups: int = 1
    heldout_fraction: float = 0.1
    filler_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_nodes < 10:
            raise InvalidSpecError("num_nodes must be >= 10")
        if not (2 <= self.num_groups <= self.num_nodes):
            raise InvalidSpecError("num_groups must be in [2, num_nodes]")
        if not (1 <= self.num_edges <= self.num_nodes * (self.num_nodes - 1)):
            raise InvalidSpecError("num_edges must be in [1, num_nodes*(num_nodes-1)]")
        if self.relation_weights is not None:
            if len(self.relation_weights) != len(DISCOURSE_RELATIONS):
                raise InvalidSpecError(
                    f"relation_weights needs {len(DISCOURSE_RELATIONS)} entries"
                )
            if any(w < 0 for w in self.relation_weights) or sum(self.relation_weights) <= 0:
                raise InvalidSpecError("relation_weights must be nonnegative with positive sum")
        if not (0 <= self.cooc_partner_groups <= self.num_groups):
            raise InvalidSpecError("cooc_partner_groups must be in [0, num_groups]")
        if not (0.0 <= self.heldout_fraction < 1.0):
            raise InvalidSpecError("heldout_fraction must be in [0, 1)")
        if not (0.0 <= self.filler_rate <= 1.0):
            raise InvalidSpecError("filler_rate must be in [0, 1]")

    def group_of(self, node_id: int) -> int:
        return node_id % self.num_groups

    def partner_groups(self, group: int) -> tuple[int, ...]:
        """The group itself plus the next cooc_partner_groups - 1 groups."""
        return tuple(
            (group + offset) % self.num_groups
            for offset in range(self.cooc_partner_groups)
        )


@dataclass(frozen=True)
class SyntheticKg:
    spec: PatternSpec
    graph: KnowledgeGraph  # training graph: kept discourse edges + co-occurrence
    heldout_edges: tuple[Edge, ...]  # discourse edges absent from the graph
    relation_table: dict[tuple[int, int], RelationType]  # (head group, tail group)

    def true_relation(self, head: int, tail: int) -> RelationType:
        return self.relation_table[(self.spec.group_of(head), self.spec.group_of(tail))]


def _relation_labels(spec: PatternSpec, rng: np.random.Generator) -> list[RelationType]:
    """One relation per ordered group pair, marginals by largest remainder."""
    num_pairs = spec.num_groups * spec.num_groups
    weights = np.asarray(
        spec.relation_weights
        if spec.relation_weights is not None
        else [1.0] * len(DISCOURSE_RELATIONS),
        dtype=np.float64,
    )
    quotas = num_pairs * weights / weights.sum()
    counts = np.floor(quotas).astype(np.int64)
    remainder = quotas - counts
    # ties on the fractional part resolve toward the lower relation index
    for idx in sorted(range(len(quotas)), key=lambda i: (-remainder[i], i))[
        : num_pairs - int(counts.sum())
    ]:
        counts[idx] += 1
    labels = [
        DISCOURSE_RELATIONS[r] for r in range(len(DISCOURSE_RELATIONS)) for _ in range(counts[r])
    ]
    return [labels[j] for j in rng.permutation(num_pairs)]


def generate(spec: PatternSpec) -> SyntheticKg:
    """Deterministic under spec.seed; identical output across runs."""
    rng = item_rng(spec.seed, STREAM_SYNTH, 0)
    n, g = spec.num_nodes, spec.num_groups

    frequencies = np.maximum(1, np.round(rng.lognormal(2.2, 1.2, size=n))).astype(np.int64)
    frequencies[::_HUB_STRIDE] *= _HUB_FACTOR
    use_filler = rng.random(n) < spec.filler_rate
    filler_idx = rng.integers(0, len(FILLER_WORDS), size=n)
    nodes = []
    for i in range(n):
        text = [f"team{spec.group_of(i):02d}", "does", f"task{i:04d}"]
        if use_filler[i]:
            text.append(FILLER_WORDS[filler_idx[i]])
        nodes.append(Eventuality(i, tuple(text), int(frequencies[i])))

    labels = _relation_labels(spec, rng)
    table = {(gh, gt): labels[gh * g + gt] for gh in range(g) for gt in range(g)}

    flat = np.sort(rng.choice(n * (n - 1), size=spec.num_edges, replace=False))
    heads = flat // (n - 1)
    rem = flat % (n - 1)
    tails = np.where(rem < heads, rem, rem + 1)
    weights = rng.integers(1, 11, size=spec.num_edges).astype(np.float64)
    discourse_edges = [
        Edge(int(h), int(t), table[(spec.group_of(int(h)), spec.group_of(int(t)))], float(w))
        for h, t, w in zip(heads, tails, weights)
    ]

    num_heldout = int(round(spec.heldout_fraction * spec.num_edges))
    if spec.heldout_fraction > 0 and num_heldout == 0:
        num_heldout = 1
    heldout_pos = set(
        int(i) for i in rng.choice(spec.num_edges, size=num_heldout, replace=False)
    )
    train_edges = [e for i, e in enumerate(discourse_edges) if i not in heldout_pos]
    heldout_edges = tuple(discourse_edges[i] for i in sorted(heldout_pos))

    cooc_edges = []
    for i in range(n):
        for pg in spec.partner_groups(spec.group_of(i)):
            for j in range(pg, n, g):
                if j != i:
                    cooc_edges.append(Edge(i, j, RelationType.CoOccurrence, 1.0))

    # safety net: guarantee at least one walkable start node
    heads_with_edges = {e.head for e in train_edges}
    if heads_with_edges and not any(
        nodes[h].frequency > _START_CUTOFF for h in heads_with_edges
    ):
        h = min(heads_with_edges)
        nodes[h] = Eventuality(h, nodes[h].text, _START_CUTOFF * 20)

    graph = KnowledgeGraph.from_parts(nodes, train_edges + cooc_edges)
    return SyntheticKg(spec, graph, heldout_edges, table)


def answer_key_entries(synth: SyntheticKg) -> list[dict]:
    """Every discourse edge with its true relation, including held-out ones."""
    entries = []
    for node_id in range(len(synth.graph)):
        for e in synth.graph.neighbors(node_id):
            entries.append(
                {"head": e.head, "tail": e.tail, "relation": e.relation.name, "split": "train"}
            )
    for e in synth.heldout_edges:
        entries.append(
            {"head": e.head, "tail": e.tail, "relation": e.relation.name, "split": "heldout"}
        )
    return entries


def write_answer_key(synth: SyntheticKg, out: IO[str]) -> None:
    for entry in answer_key_entries(synth):
        out.write(json.dumps(entry, separators=(",", ":")) + "\n")


def make_choice_tasks(
    graph: KnowledgeGraph, num_tasks: int, rng: np.random.Generator
) -> list[ChoiceTask]:
    """Binary tasks: one true co-occurrence neighbor vs one random non-neighbor,
    in shuffled order with the gold index recorded."""
    eligible = [i for i in range(len(graph)) if graph.co_occurrence_neighbors(i)]
    if not eligible:
        raise ConfigError("graph has no co-occurrence edges to build choice tasks from")
    tasks = []
    for _ in range(num_tasks):
        ctx = eligible[int(rng.integers(0, len(eligible)))]
        neighbors = graph.co_occurrence_neighbors(ctx)
        pos = neighbors[int(rng.integers(0, len(neighbors)))]
        excluded = set(neighbors) | {ctx}
        if len(excluded) >= len(graph):
            raise ConfigError("no negative candidate exists for choice tasks")
        while True:
            neg = int(rng.integers(0, len(graph)))
            if neg not in excluded:
                break
        text = lambda node_id: " ".join(graph.node(node_id).text)
        if rng.random() < 0.5:
            tasks.append(ChoiceTask(text(ctx), (text(pos), text(neg)), gold=0))
        else:
            tasks.append(ChoiceTask(text(ctx), (text(neg), text(pos)), gold=1))
    return tasks
