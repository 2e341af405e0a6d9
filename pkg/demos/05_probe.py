"""Probe a trained checkpoint with connective cloze and choice tasks.

Run demos/04_train_encoder.py first; this script reloads its artifacts.
A probe places [MASK] between two eventualities and reads the relation
head's distribution over held-out edges; choice tasks ask which of two
candidates co-occurred with a context eventuality.
"""

import pathlib
import sys

import numpy as np

from kgmlm.graph import load_graph_files, parse_edges
from kgmlm.model import load_checkpoint
from kgmlm.probing import ProbeQuery, eval_relation_heldout, probe_connective, score_choice
from kgmlm.synth import make_choice_tasks
from kgmlm.verbalizer import ConnectiveLexicon, Vocabulary

OUTPUT = pathlib.Path(__file__).parent / "output"


def main() -> int:
    if not (OUTPUT / "model.ckpt").exists():
        print("no checkpoint found; run demos/04_train_encoder.py first", file=sys.stderr)
        return 1
    graph = load_graph_files(OUTPUT / "nodes.tsv", OUTPUT / "edges.tsv")
    with open(OUTPUT / "heldout.tsv", encoding="utf-8") as f:
        heldout = parse_edges(f, len(graph))
    vocab = Vocabulary.load_file(OUTPUT / "vocab.tsv")
    config, params = load_checkpoint(OUTPUT / "model.ckpt")
    lexicon = ConnectiveLexicon()

    edge = heldout[0]
    left = " ".join(graph.node(edge.head).text)
    right = " ".join(graph.node(edge.tail).text)
    print(f"held-out edge: '{left}' --{edge.relation.name}--> '{right}'")
    print("top connectives for '[left] [MASK] [right]':")
    for word, prob in probe_connective(params, config, ProbeQuery(left, right), vocab, lexicon)[:5]:
        print(f"  {prob:.3f}  {word}")

    report = eval_relation_heldout(params, config, heldout, graph, lexicon, vocab)
    print(f"\nheld-out relation accuracy: {report.accuracy:.3f} over {len(heldout)} edges")
    by_support = sorted(report.support.items(), key=lambda kv: -kv[1])
    for relation, support in by_support[:5]:
        print(f"  {relation.name:<12} acc {report.per_relation[relation]:.3f} (n={support})")

    tasks = make_choice_tasks(graph, 5, np.random.default_rng(0))
    print("\nco-occurrence choice tasks (* = model pick, gold underlined by name):")
    for task in tasks:
        picked, probs = score_choice(params, config, task, vocab)
        print(f"  context: {task.context}")
        for i, (cand, p) in enumerate(zip(task.candidates, probs)):
            marks = ("*" if i == picked else " ") + ("g" if i == task.gold else " ")
            print(f"   {marks} {p:.3f}  {cand}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
