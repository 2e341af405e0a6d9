"""Verbalize a walk and turn it into masked training instances.

A path becomes lowercase text where each hop is linked by a connective
("because", "if", ...), with exact spans recorded for every eventuality and
connective.  Masking then either hides one whole eventuality (MLM targets)
or hides the connectives (MLM plus relation targets), and usually appends a
co-occurrence candidate segment with a binary label.
"""

import numpy as np

from kgmlm.masking import MaskingConfig, MaskingStrategy, build_instance
from kgmlm.synth import PatternSpec, generate
from kgmlm.verbalizer import ConnectiveLexicon, build_vocab, decode, verbalize
from kgmlm.walks import WalkConfig, sample_corpus


def show(label: str, words: list[str]) -> None:
    print(f"  {label:<18} {' '.join(words)}")


def main() -> None:
    synth = generate(
        PatternSpec(num_nodes=80, num_groups=8, num_edges=800, heldout_fraction=0.1, seed=3)
    )
    graph = synth.graph
    paths, _ = sample_corpus(graph, WalkConfig(seed=3, num_sequences=200))
    lexicon = ConnectiveLexicon()
    vocab = build_vocab(paths, graph, lexicon)
    print(f"vocabulary: {len(vocab)} tokens (5 reserved)")

    path = next(p for p in paths if p.num_hops >= 2)
    seq = verbalize(path, graph, lexicon, vocab)
    print()
    show("verbalized:", decode(seq.token_ids, vocab))
    print("  eventuality spans:", [(s, e, n) for s, e, n in seq.eventuality_spans])
    print("  connective spans: ", [(s, e, r.name) for s, e, r in seq.connective_spans])

    # The two strategies alternate per instance under one seed stream; build
    # a few until both have appeared.
    seen: dict[MaskingStrategy, None] = {}
    config = MaskingConfig()
    for index in range(8):
        inst = build_instance(seq, path, graph, vocab, lexicon, np.random.default_rng(index), config)
        if inst.strategy in seen:
            continue
        seen[inst.strategy] = None
        print(f"\n{inst.strategy.value} instance:")
        show("input:", decode(inst.input_ids, vocab))
        originals = {pos: vocab.id_to_token[tok] for pos, tok in sorted(inst.mlm_targets.items())}
        print(f"  mlm targets:       {originals}")
        if inst.relation_targets:
            labels = {pos: rel.name for pos, rel in sorted(inst.relation_targets.items())}
            print(f"  relation targets:  {labels}")
        if inst.cooccurrence is not None:
            candidate_ids, label = inst.cooccurrence
            verdict = "true partner" if label == 1 else "random negative"
            show(f"candidate ({verdict}):", decode(candidate_ids, vocab))
        if len(seen) == 2:
            break


if __name__ == "__main__":
    main()
