"""Immutable eventuality knowledge graph with weighted, typed discourse edges.

Nodes are eventualities (verb-centric phrases) with extraction frequencies;
edges carry one of 15 relation types and a positive weight.  The graph is
frozen after loading and every query is read-only, so a loaded graph can be
shared freely across workers.

File formats
------------
nodes TSV:  ``id<TAB>frequency<TAB>space-joined tokens`` (UTF-8, ``#`` comments)
edges TSV:  ``head_id<TAB>tail_id<TAB>relation_name<TAB>weight``
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from .errors import KgmlmError


class RelationType(enum.IntEnum):
    """The 15 eventuality relation types.

    The first 14 are discourse relations and double as class indices for the
    relation prediction head.  CoOccurrence is a weaker "appeared in the same
    sentence" link: it never occurs inside sampled walks and only feeds the
    binary co-occurrence task.
    """

    Precedence = 0
    Succession = 1
    Synchronous = 2
    Reason = 3
    Result = 4
    Condition = 5
    Contrast = 6
    Concession = 7
    Conjunction = 8
    Instantiation = 9
    Restatement = 10
    Alternative = 11
    ChosenAlternative = 12
    Exception = 13
    CoOccurrence = 14

    @property
    def is_discourse(self) -> bool:
        return self is not RelationType.CoOccurrence

    @classmethod
    def from_name(cls, name: str) -> "RelationType":
        try:
            return _RELATION_BY_LOWER_NAME[name.lower()]
        except KeyError:
            raise UnknownRelationLabelError(f"unknown relation name: {name!r}") from None


_RELATION_BY_LOWER_NAME = {member.name.lower(): member for member in RelationType}

DISCOURSE_RELATIONS: tuple[RelationType, ...] = tuple(
    r for r in RelationType if r.is_discourse
)
NUM_DISCOURSE_RELATIONS = len(DISCOURSE_RELATIONS)


class GraphLoadError(KgmlmError):
    """Raised when a nodes/edges source cannot be loaded; carries line info."""

    def __init__(self, message: str, source: str = "", line: int | None = None):
        loc = f"{source}:{line}: " if line is not None else ""
        super().__init__(f"{loc}{message}")
        self.source = source
        self.line = line


class MalformedLineError(GraphLoadError):
    pass


class DuplicateNodeIdError(GraphLoadError):
    pass


class UnknownNodeReferenceError(GraphLoadError):
    pass


class NonPositiveWeightError(GraphLoadError):
    pass


class UnknownRelationLabelError(GraphLoadError):
    pass


class DuplicateEdgeError(GraphLoadError):
    pass


class NodeOutOfRangeError(KgmlmError):
    pass


class EmptyGraphError(KgmlmError):
    pass


@dataclass(frozen=True, slots=True)
class Eventuality:
    """A verb-centric phrase with a surrogate id and an extraction count."""

    id: int
    text: tuple[str, ...]
    frequency: int

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"node {self.id}: empty text")
        if self.frequency < 0:
            raise ValueError(f"node {self.id}: negative frequency")


@dataclass(frozen=True, slots=True)
class Edge:
    head: int
    tail: int
    relation: RelationType
    weight: float

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError(f"edge ({self.head},{self.tail}): non-positive weight")
        if self.head == self.tail:
            raise ValueError(f"edge ({self.head},{self.tail}): self-loop")


class KnowledgeGraph:
    """Frozen node/edge store with per-node sorted adjacency.

    Construct via :func:`load_graph` or :meth:`from_parts`; instances are
    never mutated after construction.
    """

    __slots__ = ("nodes", "_out", "_cooc", "num_edges")

    def __init__(self, nodes: tuple[Eventuality, ...], out: tuple[tuple[Edge, ...], ...]):
        self.nodes = nodes
        self._out = out
        self._cooc = tuple(
            tuple(e.tail for e in edges if e.relation is RelationType.CoOccurrence)
            for edges in out
        )
        self.num_edges = sum(len(edges) for edges in out)

    @classmethod
    def from_parts(cls, nodes: Iterable[Eventuality], edges: Iterable[Edge]) -> "KnowledgeGraph":
        """Build a validated graph from in-memory node/edge collections."""
        node_tuple = tuple(sorted(nodes, key=lambda n: n.id))
        ids = [n.id for n in node_tuple]
        if ids != list(range(len(node_tuple))):
            raise GraphLoadError("node ids must be dense in [0, num_nodes)")
        out: list[list[Edge]] = [[] for _ in node_tuple]
        seen: set[tuple[int, int, RelationType]] = set()
        for e in edges:
            if not (0 <= e.head < len(node_tuple)) or not (0 <= e.tail < len(node_tuple)):
                raise UnknownNodeReferenceError(f"edge references unknown node: {e}")
            key = (e.head, e.tail, e.relation)
            if key in seen:
                raise DuplicateEdgeError(f"duplicate edge {key}")
            seen.add(key)
            out[e.head].append(e)
        for lst in out:
            lst.sort(key=lambda e: (e.tail, int(e.relation)))
        return cls(node_tuple, tuple(tuple(lst) for lst in out))

    def __len__(self) -> int:
        return len(self.nodes)

    def _check_node(self, node: int) -> None:
        if not (0 <= node < len(self.nodes)):
            raise NodeOutOfRangeError(f"node id {node} out of range [0, {len(self.nodes)})")

    def node(self, node: int) -> Eventuality:
        self._check_node(node)
        return self.nodes[node]

    def neighbors(self, node: int, include_co_occurrence: bool = False) -> list[Edge]:
        """Out-edges of ``node`` in (tail id, relation) order.

        CoOccurrence edges are excluded unless explicitly requested.
        """
        self._check_node(node)
        edges = self._out[node]
        if include_co_occurrence:
            return list(edges)
        return [e for e in edges if e.relation.is_discourse]

    def co_occurrence_neighbors(self, node: int) -> tuple[int, ...]:
        self._check_node(node)
        return self._cooc[node]

    def has_co_occurrence_edges(self) -> bool:
        return any(self._cooc)

    def frequency_percentile(self, q: float) -> int:
        """Nearest-rank percentile of node frequencies.

        Returns the smallest frequency f such that at least a fraction ``q``
        of nodes have frequency <= f.
        """
        if not self.nodes:
            raise EmptyGraphError("frequency_percentile on empty graph")
        if not (0.0 < q <= 1.0):
            raise ValueError(f"percentile fraction must be in (0, 1], got {q}")
        freqs = sorted(n.frequency for n in self.nodes)
        rank = math.ceil(q * len(freqs))
        return freqs[rank - 1]

    def relation_counts(self) -> dict[RelationType, int]:
        counts = {r: 0 for r in RelationType}
        for edges in self._out:
            for e in edges:
                counts[e.relation] += 1
        return counts


def _iter_content_lines(source: Iterable[str]) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, stripped line), skipping blanks and # comments."""
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line


def parse_nodes(source: Iterable[str], source_name: str = "<nodes>") -> list[Eventuality]:
    by_id: dict[int, Eventuality] = {}
    for lineno, line in _iter_content_lines(source):
        parts = line.split("\t")
        if len(parts) != 3:
            raise MalformedLineError(
                f"expected 3 tab-separated fields, got {len(parts)}", source_name, lineno
            )
        try:
            node_id = int(parts[0])
            frequency = int(parts[1])
        except ValueError:
            raise MalformedLineError(
                f"non-integer id or frequency: {line!r}", source_name, lineno
            ) from None
        if frequency < 0:
            raise MalformedLineError(f"negative frequency {frequency}", source_name, lineno)
        tokens = tuple(w.lower() for w in parts[2].split())
        if not tokens:
            raise MalformedLineError("empty node text", source_name, lineno)
        if node_id in by_id:
            raise DuplicateNodeIdError(f"duplicate node id {node_id}", source_name, lineno)
        by_id[node_id] = Eventuality(node_id, tokens, frequency)
    missing = set(range(len(by_id))) - set(by_id)
    if missing:
        raise MalformedLineError(
            f"node ids not dense: missing {sorted(missing)[:5]}...", source_name
        )
    return [by_id[i] for i in range(len(by_id))]


def parse_edges(
    source: Iterable[str], num_nodes: int, source_name: str = "<edges>"
) -> list[Edge]:
    edges: list[Edge] = []
    seen: set[tuple[int, int, int]] = set()
    for lineno, line in _iter_content_lines(source):
        parts = line.split("\t")
        if len(parts) != 4:
            raise MalformedLineError(
                f"expected 4 tab-separated fields, got {len(parts)}", source_name, lineno
            )
        try:
            head = int(parts[0])
            tail = int(parts[1])
        except ValueError:
            raise MalformedLineError(f"non-integer node id: {line!r}", source_name, lineno) from None
        try:
            relation = RelationType.from_name(parts[2])
        except UnknownRelationLabelError:
            raise UnknownRelationLabelError(
                f"unknown relation name {parts[2]!r}", source_name, lineno
            ) from None
        try:
            weight = float(parts[3])
        except ValueError:
            raise MalformedLineError(f"non-numeric weight: {parts[3]!r}", source_name, lineno) from None
        if not math.isfinite(weight) or weight <= 0:
            raise NonPositiveWeightError(f"weight must be positive, got {parts[3]}", source_name, lineno)
        if not (0 <= head < num_nodes) or not (0 <= tail < num_nodes):
            raise UnknownNodeReferenceError(
                f"edge ({head},{tail}) references node outside [0, {num_nodes})", source_name, lineno
            )
        if head == tail:
            raise MalformedLineError(f"self-loop on node {head}", source_name, lineno)
        key = (head, tail, int(relation))
        if key in seen:
            raise DuplicateEdgeError(f"duplicate edge ({head},{tail},{relation.name})", source_name, lineno)
        seen.add(key)
        edges.append(Edge(head, tail, relation, weight))
    return edges


def load_graph(
    nodes_source: Iterable[str],
    edges_source: Iterable[str],
    nodes_name: str = "<nodes>",
    edges_name: str = "<edges>",
) -> KnowledgeGraph:
    """Load and validate a graph from two TSV line sources.

    The whole load is rejected on the first malformed line; errors carry the
    source name and line number.
    """
    nodes = parse_nodes(nodes_source, nodes_name)
    edges = parse_edges(edges_source, len(nodes), edges_name)
    return KnowledgeGraph.from_parts(nodes, edges)


def load_graph_files(nodes_path, edges_path) -> KnowledgeGraph:
    with open(nodes_path, encoding="utf-8") as nf, open(edges_path, encoding="utf-8") as ef:
        return load_graph(nf, ef, str(nodes_path), str(edges_path))


def write_nodes_tsv(graph_or_nodes, out: IO[str]) -> None:
    nodes = graph_or_nodes.nodes if isinstance(graph_or_nodes, KnowledgeGraph) else graph_or_nodes
    for n in nodes:
        out.write(f"{n.id}\t{n.frequency}\t{' '.join(n.text)}\n")


def write_edges_tsv(edges: Iterable[Edge], out: IO[str]) -> None:
    for e in edges:
        out.write(f"{e.head}\t{e.tail}\t{e.relation.name}\t{e.weight:g}\n")


def all_edges(graph: KnowledgeGraph) -> Iterator[Edge]:
    """All edges in (head, tail, relation) order."""
    for node_id in range(len(graph)):
        yield from graph.neighbors(node_id, include_co_occurrence=True)
