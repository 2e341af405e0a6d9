"""Build an eventuality graph from the TSV formats and inspect it.

Nodes are short eventualities ("i am hungry") with observation frequencies;
edges carry one of 14 weighted discourse relations plus CoOccurrence.  The
same two TSV layouts are what `kgmlm ingest` reads from disk.
"""

from kgmlm.graph import RelationType, all_edges, load_graph

NODES_TSV = """\
# id	frequency	text
0	40	i am hungry
1	25	i cook dinner
2	18	i eat dinner
3	12	i wash the dishes
4	30	the kitchen is warm
5	6	i order pizza
"""

EDGES_TSV = """\
# head	tail	relation	weight
0	1	Reason	3.0
0	5	Reason	1.0
1	2	Precedence	4.0
2	3	Precedence	2.0
1	4	Result	1.5
5	2	Precedence	1.0
1	4	CoOccurrence	2.0
2	4	CoOccurrence	1.0
"""


def main() -> None:
    graph = load_graph(NODES_TSV.splitlines(), EDGES_TSV.splitlines())
    print(f"loaded {len(graph)} nodes, {graph.num_edges} edges")

    print("\nnodes (id, frequency, text):")
    for i in range(len(graph)):
        node = graph.node(i)
        print(f"  {node.id:>2}  {node.frequency:>3}  {' '.join(node.text)}")

    print("\ndiscourse neighbors of node 1 ('i cook dinner'):")
    for edge in graph.neighbors(1):
        tail = " ".join(graph.node(edge.tail).text)
        print(f"  --{edge.relation.name} (w={edge.weight})--> {tail}")

    print("\nco-occurrence partners of node 1:")
    for tail in graph.co_occurrence_neighbors(1):
        print(f"  {tail}: {' '.join(graph.node(tail).text)}")

    print("\nedge counts by relation:")
    for relation, count in sorted(graph.relation_counts().items(), key=lambda kv: kv[0].value):
        print(f"  {relation.name:<12} {count}")

    # Walk starts require frequency above the 'more than 5 observations' bar.
    print("\nstart eligibility (frequency > 5 and at least one discourse out-edge):")
    for i in range(len(graph)):
        eligible = graph.node(i).frequency > 5 and bool(graph.neighbors(i))
        print(f"  node {i}: {'yes' if eligible else 'no'}")

    discourse = [e for e in all_edges(graph) if e.relation is not RelationType.CoOccurrence]
    print(f"\n{len(discourse)} discourse edges are walkable; CoOccurrence edges are not.")


if __name__ == "__main__":
    main()
