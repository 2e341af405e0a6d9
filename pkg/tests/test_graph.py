"""Knowledge-graph loading, validation, queries, and TSV round trips."""

from __future__ import annotations

import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgmlm.graph import (
    DISCOURSE_RELATIONS,
    NUM_DISCOURSE_RELATIONS,
    DuplicateEdgeError,
    DuplicateNodeIdError,
    Edge,
    EmptyGraphError,
    Eventuality,
    GraphLoadError,
    KnowledgeGraph,
    MalformedLineError,
    NodeOutOfRangeError,
    NonPositiveWeightError,
    RelationType,
    UnknownNodeReferenceError,
    UnknownRelationLabelError,
    all_edges,
    load_graph,
    parse_edges,
    parse_nodes,
    write_edges_tsv,
    write_nodes_tsv,
)

R = RelationType


class TestRelationType:
    def test_fifteen_members_with_fixed_indices(self):
        assert len(RelationType) == 15
        assert int(R.Precedence) == 0
        assert int(R.CoOccurrence) == 14

    def test_fourteen_discourse_relations(self):
        assert NUM_DISCOURSE_RELATIONS == 14
        assert R.CoOccurrence not in DISCOURSE_RELATIONS
        assert all(r.is_discourse for r in DISCOURSE_RELATIONS)
        assert not R.CoOccurrence.is_discourse

    def test_from_name_is_case_insensitive(self):
        assert R.from_name("reason") is R.Reason
        assert R.from_name("COOCCURRENCE") is R.CoOccurrence

    def test_from_name_rejects_unknown(self):
        with pytest.raises(UnknownRelationLabelError):
            R.from_name("Causes")


class TestNodeAndEdgeValidation:
    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            Eventuality(0, (), 1)

    def test_negative_frequency_rejected(self):
        with pytest.raises(ValueError):
            Eventuality(0, ("hi",), -1)

    def test_non_positive_weight_rejected(self):
        with pytest.raises(ValueError):
            Edge(0, 1, R.Reason, 0.0)

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError):
            Edge(2, 2, R.Reason, 1.0)


class TestFromParts:
    def test_non_dense_ids_rejected(self):
        nodes = [Eventuality(0, ("a",), 1), Eventuality(2, ("b",), 1)]
        with pytest.raises(GraphLoadError):
            KnowledgeGraph.from_parts(nodes, [])

    def test_duplicate_edge_rejected(self):
        nodes = [Eventuality(0, ("a",), 1), Eventuality(1, ("b",), 1)]
        edges = [Edge(0, 1, R.Reason, 1.0), Edge(0, 1, R.Reason, 2.0)]
        with pytest.raises(DuplicateEdgeError):
            KnowledgeGraph.from_parts(nodes, edges)

    def test_same_pair_different_relation_allowed(self):
        nodes = [Eventuality(0, ("a",), 1), Eventuality(1, ("b",), 1)]
        edges = [Edge(0, 1, R.Reason, 1.0), Edge(0, 1, R.Contrast, 2.0)]
        graph = KnowledgeGraph.from_parts(nodes, edges)
        assert graph.num_edges == 2

    def test_unknown_node_reference_rejected(self):
        nodes = [Eventuality(0, ("a",), 1)]
        with pytest.raises(UnknownNodeReferenceError):
            KnowledgeGraph.from_parts(nodes, [Edge(0, 5, R.Reason, 1.0)])


class TestQueries(object):
    def test_neighbors_exclude_co_occurrence_by_default(self, tiny_graph):
        relations = {e.relation for e in tiny_graph.neighbors(0)}
        assert R.CoOccurrence not in relations
        assert relations == {R.Condition, R.Reason, R.Contrast}

    def test_neighbors_can_include_co_occurrence(self, tiny_graph):
        relations = {e.relation for e in tiny_graph.neighbors(0, include_co_occurrence=True)}
        assert R.CoOccurrence in relations

    def test_co_occurrence_neighbors(self, tiny_graph):
        assert tiny_graph.co_occurrence_neighbors(0) == (4,)
        assert tiny_graph.co_occurrence_neighbors(4) == (0,)
        assert tiny_graph.co_occurrence_neighbors(2) == ()

    def test_node_out_of_range(self, tiny_graph):
        with pytest.raises(NodeOutOfRangeError):
            tiny_graph.node(99)
        with pytest.raises(NodeOutOfRangeError):
            tiny_graph.neighbors(-1)

    def test_relation_counts_match_manual_recount(self, tiny_graph):
        counts = tiny_graph.relation_counts()
        manual = {r: 0 for r in RelationType}
        for node_id in range(len(tiny_graph)):
            for e in tiny_graph.neighbors(node_id, include_co_occurrence=True):
                manual[e.relation] += 1
        assert counts == manual
        assert sum(counts.values()) == tiny_graph.num_edges

    def test_all_edges_covers_every_edge_once(self, tiny_graph):
        edges = list(all_edges(tiny_graph))
        assert len(edges) == tiny_graph.num_edges
        assert len({(e.head, e.tail, e.relation) for e in edges}) == len(edges)


class TestFrequencyPercentile:
    def test_nearest_rank_examples(self):
        graph = KnowledgeGraph.from_parts(
            [Eventuality(i, ("w",), i + 1) for i in range(100)], []
        )
        # nearest rank: smallest f with at least ceil(q * n) values <= f
        assert graph.frequency_percentile(1.0) == 100
        assert graph.frequency_percentile(0.5) == 50
        assert graph.frequency_percentile(0.999) == 100
        assert graph.frequency_percentile(0.01) == 1

    def test_empty_graph_rejected(self):
        with pytest.raises(EmptyGraphError):
            KnowledgeGraph((), ()).frequency_percentile(0.5)

    def test_out_of_range_fraction_rejected(self, tiny_graph):
        with pytest.raises(ValueError):
            tiny_graph.frequency_percentile(0.0)

    @given(
        freqs=st.lists(st.integers(min_value=0, max_value=10**6), min_size=1, max_size=60),
        q=st.floats(min_value=0.001, max_value=1.0),
    )
    def test_matches_brute_force_nearest_rank(self, freqs, q):
        graph = KnowledgeGraph.from_parts(
            [Eventuality(i, ("w",), f) for i, f in enumerate(freqs)], []
        )
        got = graph.frequency_percentile(q)
        ordered = sorted(freqs)
        expected = ordered[math.ceil(q * len(ordered)) - 1]
        assert got == expected


NODES_TSV = "0\t12\tI am hungry\n1\t7\tI eat\n# comment line\n\n2\t3\tI sleep\n"
EDGES_TSV = "0\t1\tReason\t2.5\n1\t2\tPrecedence\t1\n0\t2\tCoOccurrence\t1\n"


class TestParsing:
    def test_parse_nodes_happy_path(self):
        nodes = parse_nodes(io.StringIO(NODES_TSV))
        assert [n.id for n in nodes] == [0, 1, 2]
        assert nodes[0].text == ("i", "am", "hungry")
        assert nodes[0].frequency == 12

    def test_parse_nodes_lowercases(self):
        nodes = parse_nodes(io.StringIO("0\t1\tThey RUN\n"))
        assert nodes[0].text == ("they", "run")

    @pytest.mark.parametrize(
        "line",
        ["0\t1", "x\t1\thi", "0\ty\thi", "0\t-3\thi", "0\t1\t"],
    )
    def test_parse_nodes_malformed_lines(self, line):
        with pytest.raises(MalformedLineError):
            parse_nodes(io.StringIO(line + "\n"))

    def test_parse_nodes_duplicate_id(self):
        with pytest.raises(DuplicateNodeIdError):
            parse_nodes(io.StringIO("0\t1\ta\n0\t2\tb\n"))

    def test_parse_nodes_gap_in_ids(self):
        with pytest.raises(MalformedLineError):
            parse_nodes(io.StringIO("0\t1\ta\n2\t2\tb\n"))

    def test_error_carries_source_and_line(self):
        with pytest.raises(MalformedLineError) as err:
            parse_nodes(io.StringIO("0\t1\ta\nbroken"), source_name="nodes.tsv")
        assert "nodes.tsv:2:" in str(err.value)

    def test_parse_edges_happy_path(self):
        edges = parse_edges(io.StringIO(EDGES_TSV), 3)
        assert [(e.head, e.tail) for e in edges] == [(0, 1), (1, 2), (0, 2)]
        assert edges[0].relation is R.Reason
        assert edges[0].weight == 2.5

    def test_parse_edges_unknown_relation(self):
        with pytest.raises(UnknownRelationLabelError):
            parse_edges(io.StringIO("0\t1\tBogus\t1\n"), 2)

    @pytest.mark.parametrize("weight", ["0", "-1", "nan", "inf"])
    def test_parse_edges_bad_weight(self, weight):
        with pytest.raises((NonPositiveWeightError, MalformedLineError)):
            parse_edges(io.StringIO(f"0\t1\tReason\t{weight}\n"), 2)

    def test_parse_edges_out_of_range_reference(self):
        with pytest.raises(UnknownNodeReferenceError):
            parse_edges(io.StringIO("0\t9\tReason\t1\n"), 2)

    def test_parse_edges_duplicate(self):
        dup = "0\t1\tReason\t1\n0\t1\treason\t2\n"
        with pytest.raises(DuplicateEdgeError):
            parse_edges(io.StringIO(dup), 2)

    def test_load_graph_wires_both_sources(self):
        graph = load_graph(io.StringIO(NODES_TSV), io.StringIO(EDGES_TSV))
        assert len(graph) == 3
        assert graph.num_edges == 3


class TestRoundTrip:
    def test_nodes_and_edges_survive_write_then_parse(self, tiny_graph):
        nodes_buf, edges_buf = io.StringIO(), io.StringIO()
        write_nodes_tsv(tiny_graph, nodes_buf)
        write_edges_tsv(all_edges(tiny_graph), edges_buf)
        reloaded = load_graph(
            io.StringIO(nodes_buf.getvalue()), io.StringIO(edges_buf.getvalue())
        )
        assert reloaded.nodes == tiny_graph.nodes
        assert list(all_edges(reloaded)) == list(all_edges(tiny_graph))
