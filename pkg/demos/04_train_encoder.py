"""Train a small transformer encoder from scratch on masked walk instances.

The loss is l_mlm (mean over masked tokens) + l_rel (summed connective
relation cross-entropy) + l_occur (binary co-occurrence), optimized with
AdamW and exact analytic gradients.  Artifacts land in demos/output/ so
05_probe.py can pick them up.
"""

import pathlib
import time

from kgmlm.graph import all_edges, write_edges_tsv, write_nodes_tsv
from kgmlm.masking import MaskingConfig, build_instances
from kgmlm.model import ModelConfig, save_checkpoint
from kgmlm.synth import PatternSpec, generate
from kgmlm.training import TrainConfig, evaluate, smoothed_total, train
from kgmlm.verbalizer import ConnectiveLexicon, build_vocab
from kgmlm.walks import WalkConfig, sample_corpus

OUTPUT = pathlib.Path(__file__).parent / "output"


def main() -> None:
    synth = generate(
        PatternSpec(num_nodes=100, num_groups=10, num_edges=1200, heldout_fraction=0.1, seed=9)
    )
    paths, _ = sample_corpus(synth.graph, WalkConfig(seed=9, num_sequences=3000))
    lexicon = ConnectiveLexicon()
    vocab = build_vocab(paths, synth.graph, lexicon)
    instances = build_instances(paths, synth.graph, vocab, lexicon, MaskingConfig(seed=9))
    print(f"{len(instances)} instances over a {len(vocab)}-token vocabulary")

    model_config = ModelConfig(
        vocab_size=len(vocab), d_model=32, num_layers=1, num_heads=4, d_ff=64, max_len=48
    )
    train_config = TrainConfig(batch_size=32, epochs=16, seed=9)
    start = time.monotonic()
    result = train(instances, model_config, train_config)
    elapsed = time.monotonic() - start
    print(f"trained {result.completed_steps} steps in {elapsed:.1f}s")

    print("\nsmoothed total loss:")
    for step in (25, 100, 200, result.completed_steps):
        print(f"  step {step:>4}: {smoothed_total(result.trace, step):.3f}")

    report = evaluate(result.params, model_config, instances[:512])
    print(
        f"\ntraining-set slice: mlm loss {report.loss.l_mlm:.3f}, "
        f"relation acc {report.relation_accuracy:.3f}, cooc acc {report.cooc_accuracy:.3f}"
    )

    OUTPUT.mkdir(exist_ok=True)
    with open(OUTPUT / "nodes.tsv", "w", encoding="utf-8") as f:
        write_nodes_tsv(synth.graph, f)
    with open(OUTPUT / "edges.tsv", "w", encoding="utf-8") as f:
        write_edges_tsv(all_edges(synth.graph), f)
    with open(OUTPUT / "heldout.tsv", "w", encoding="utf-8") as f:
        write_edges_tsv(synth.heldout_edges, f)
    with open(OUTPUT / "vocab.tsv", "w", encoding="utf-8") as f:
        vocab.save(f)
    save_checkpoint(OUTPUT / "model.ckpt", model_config, result.params)
    print(f"\nwrote graph, vocabulary, and checkpoint to {OUTPUT}/")


if __name__ == "__main__":
    main()
