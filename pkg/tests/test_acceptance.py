"""Release criteria for the whole pipeline, one test per criterion.

Each test prints a single "[criterion N] PASS/FAIL" line outside pytest's
capture so the verdicts are visible in a normal run.  The heavyweight
fixtures (a 10k-path walk corpus and a fully trained small encoder) are
session-scoped and shared across criteria.
"""

from __future__ import annotations

import json
import math
import time
from collections import Counter

import numpy as np
import pytest

from conftest import make_graph
from kgmlm.cli import file_digest, main
from kgmlm.graph import DISCOURSE_RELATIONS, RelationType, all_edges
from kgmlm.masking import MaskingConfig, MaskingStrategy, build_instances
from kgmlm.model import (
    Activations,
    Batch,
    ModelConfig,
    collate,
    compute_loss,
    finite_difference_check,
    forward,
    init_params,
)
from kgmlm.probing import eval_relation_heldout, score_choice
from kgmlm.synth import PatternSpec, generate, make_choice_tasks
from kgmlm.training import TrainConfig, smoothed_total, train
from kgmlm.verbalizer import MASK_ID, build_vocab, verbalize
from kgmlm.walks import (
    DEFAULT_TRANSITIVE_RELATIONS,
    WalkConfig,
    next_edge,
    sample_corpus,
)

R = RelationType


def announce(capsys, criterion: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'} - {detail}", flush=True)
    assert ok, detail


@pytest.fixture(scope="session")
def big_synth():
    return generate(
        PatternSpec(
            num_nodes=1000, num_groups=10, num_edges=20_000,
            cooc_partner_groups=1, heldout_fraction=0.1, seed=11,
        )
    )


@pytest.fixture(scope="session")
def walk_corpus(big_synth):
    start = time.monotonic()
    paths, histogram = sample_corpus(
        big_synth.graph, WalkConfig(seed=11, num_sequences=10_000)
    )
    return paths, histogram, time.monotonic() - start


@pytest.fixture(scope="session")
def big_vocab(walk_corpus, big_synth, lexicon):
    return build_vocab(walk_corpus[0], big_synth.graph, lexicon)


@pytest.fixture(scope="session")
def big_instances(walk_corpus, big_synth, big_vocab, lexicon):
    return build_instances(
        walk_corpus[0], big_synth.graph, big_vocab, lexicon, MaskingConfig(seed=11)
    )


@pytest.fixture(scope="session")
def trained(lexicon):
    """The knowledge-recovery setup: 300-node planted graph, 20k walks,
    a d=64 two-layer encoder trained 3500 steps.  Shared by criteria 6/7/9."""
    start = time.monotonic()
    synth = generate(
        PatternSpec(
            num_nodes=300, num_groups=10, num_edges=4000,
            cooc_partner_groups=1, heldout_fraction=0.1, seed=42,
        )
    )
    paths, _ = sample_corpus(synth.graph, WalkConfig(seed=42, num_sequences=20_000))
    vocab = build_vocab(paths, synth.graph, lexicon)
    instances = build_instances(paths, synth.graph, vocab, lexicon, MaskingConfig(seed=42))
    model_config = ModelConfig(
        vocab_size=len(vocab), d_model=64, num_layers=2, num_heads=4, d_ff=256, max_len=48
    )
    train_config = TrainConfig(batch_size=64, epochs=12, max_steps=3500, seed=42)
    result = train(instances, model_config, train_config)
    elapsed = time.monotonic() - start
    tasks = make_choice_tasks(synth.graph, 500, np.random.default_rng(7))
    return {
        "synth": synth,
        "vocab": vocab,
        "instances": instances,
        "model_config": model_config,
        "result": result,
        "tasks": tasks,
        "elapsed": elapsed,
    }


def _choice_accuracy(params, model_config, tasks, vocab) -> float:
    hits = sum(
        score_choice(params, model_config, task, vocab)[0] == task.gold for task in tasks
    )
    return hits / len(tasks)


def test_criterion_1_walk_constraints(walk_corpus, big_synth, capsys):
    """10k paths on a 1000-node graph: every sampling invariant holds."""
    paths, _, elapsed = walk_corpus
    graph = big_synth.graph
    edge_relations: dict[tuple[int, int], set[RelationType]] = {}
    for e in all_edges(graph):
        edge_relations.setdefault((e.head, e.tail), set()).add(e.relation)
    violations = []
    for idx, path in enumerate(paths):
        hops = len(path.relations)
        if not (1 <= hops <= 5):
            violations.append(f"path {idx}: {hops} hops")
        start = path.nodes[0]
        if graph.node(start).frequency <= 5:
            violations.append(f"path {idx}: start frequency {graph.node(start).frequency}")
        if not graph.neighbors(start):
            violations.append(f"path {idx}: start has no discourse out-edge")
        for a, b, rel in zip(path.nodes, path.nodes[1:], path.relations):
            if rel is R.CoOccurrence:
                violations.append(f"path {idx}: co-occurrence hop")
            if rel not in edge_relations.get((a, b), ()):
                violations.append(f"path {idx}: edge {a}->{b} {rel.name} not in graph")
        for r1, r2 in zip(path.relations, path.relations[1:]):
            if r1 is r2 and r1 not in DEFAULT_TRANSITIVE_RELATIONS:
                violations.append(f"path {idx}: repeated non-transitive {r1.name}")
    ok = len(paths) == 10_000 and not violations and elapsed < 60
    announce(
        capsys, 1,
        ok,
        f"{len(paths)} paths, {len(violations)} violations, sampled in {elapsed:.1f}s"
        + (f"; first: {violations[0]}" if violations else ""),
    )


def test_criterion_2_walk_distribution(capsys):
    """Next-edge draws follow boosted weights at a fixed fan-out state."""
    config = WalkConfig(seed=0)
    fan = make_graph(
        [(10, "a b"), (10, "c d"), (10, "e f"), (10, "g h")],
        [(0, 1, R.Precedence, 3.0), (0, 2, R.Contrast, 1.0), (0, 3, R.Conjunction, 1.0)],
    )
    rng = np.random.default_rng(123)
    draws = 100_000
    counts = Counter(next_edge(fan, 0, None, rng, config).tail for _ in range(draws))
    empirical = np.array([counts[1], counts[2], counts[3]]) / draws
    l1 = float(np.abs(empirical - np.array([0.6, 0.2, 0.2])).sum())

    boosted = make_graph(
        [(10, "a b"), (10, "c d"), (10, "e f")],
        [(0, 1, R.Reason, 1.0), (0, 2, R.Contrast, 1.0)],
    )
    # After a Condition hop the Reason mass doubles: 2 / (2 + 1).
    analytic = 2.0 / 3.0
    hits = sum(
        next_edge(boosted, 0, R.Condition, rng, config).relation is R.Reason
        for _ in range(draws)
    )
    boost_err = abs(hits / draws - analytic)
    ok = l1 < 0.02 and boost_err < 0.02
    announce(
        capsys, 2, ok,
        f"L1 distance {l1:.4f} (< 0.02), boosted-mass error {boost_err:.4f} (< 0.02)",
    )


def test_criterion_3_masking_suite(walk_corpus, big_synth, big_vocab, big_instances, lexicon, capsys):
    """10k instances: strategy split, span/budget discipline, label balance."""
    paths, _, _ = walk_corpus
    graph = big_synth.graph
    problems = []
    whole = fallbacks = 0
    cooc_labels = []
    for idx, (path, inst) in enumerate(zip(paths, big_instances)):
        seq = verbalize(path, graph, lexicon, big_vocab)
        if inst.cooccurrence is not None:
            cooc_labels.append(inst.cooccurrence[1])
        if inst.strategy is MaskingStrategy.WHOLE_EVENTUALITY:
            whole += 1
            positions = sorted(inst.mlm_targets)
            start, end = positions[0] - 1, positions[-1]  # undo the [CLS] shift
            if positions != list(range(positions[0], positions[-1] + 1)):
                problems.append(f"instance {idx}: non-contiguous mask")
                continue
            spans = {(s, e) for s, e, _ in seq.eventuality_spans}
            if (start, end) not in spans:
                problems.append(f"instance {idx}: masked range is not one eventuality span")
                continue
            budget = math.ceil(0.25 * len(seq))
            if end - start > budget:
                fallbacks += 1
                if any(e - s <= budget for s, e, _ in seq.eventuality_spans):
                    problems.append(f"instance {idx}: over budget despite an eligible span")
                elif (end - start, start) != min(
                    (e - s, s) for s, e, _ in seq.eventuality_spans
                ):
                    problems.append(f"instance {idx}: fallback not the shortest span")
        else:
            expected = {
                p + 1 for s, e, _ in seq.connective_spans for p in range(s, e)
            }
            if set(inst.mlm_targets) != expected:
                problems.append(f"instance {idx}: connective mask misses tokens")
            if inst.relation_targets != {s + 1: rel for s, _, rel in seq.connective_spans}:
                problems.append(f"instance {idx}: wrong relation labels")
            if any(inst.input_ids[p] != MASK_ID for p in expected):
                problems.append(f"instance {idx}: connective token not [MASK]")
    split = whole / len(big_instances)
    positive = float(np.mean(cooc_labels))
    ok = (
        len(big_instances) == 10_000
        and not problems
        and abs(split - 0.5) <= 0.02
        and abs(positive - 0.5) <= 0.02
    )
    announce(
        capsys, 3, ok,
        f"{len(big_instances)} instances, whole-eventuality share {split:.3f}, "
        f"{fallbacks} budget fallbacks, positive share {positive:.3f}, "
        f"{len(problems)} problems" + (f"; first: {problems[0]}" if problems else ""),
    )


def test_criterion_4_loss_identities(big_instances, big_vocab, capsys):
    """Uniform logits hit ln|V| / ln 14 / ln 2; totals are bit-exact sums."""
    v = len(big_vocab)
    z = lambda n: np.zeros(n, dtype=np.int64)
    label_batch = Batch(
        np.zeros((1, 2), dtype=np.int64), np.ones((1, 2), dtype=bool),
        z(4), z(4), z(4), z(2), z(2), z(2), z(3), z(3),
    )
    uniform = Activations(
        hidden=np.zeros((1, 2, 8)), x_cls=np.zeros((1, 8)),
        mlm_logits=np.zeros((4, v)), rel_logits=np.zeros((2, 14)),
        cooc_logits=np.zeros((3, 2)),
    )
    loss = compute_loss(uniform, label_batch)
    mlm_err = abs(loss.l_mlm - math.log(v))
    rel_err = abs(loss.l_rel / 2 - math.log(14))  # summed over 2 targets
    occur_err = abs(loss.l_occur - math.log(2))

    config = ModelConfig(
        vocab_size=v, d_model=32, num_layers=2, num_heads=4, d_ff=64, max_len=64
    )
    params = init_params(config, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    exact = 0
    for _ in range(100):
        picked = [big_instances[i] for i in rng.choice(len(big_instances), size=8, replace=False)]
        batch = collate(picked, config.max_len)
        lb = compute_loss(forward(params, config, batch), batch)
        exact += lb.l_total == lb.l_mlm + lb.l_rel + lb.l_occur
    ok = mlm_err < 1e-6 and rel_err < 1e-6 and occur_err < 1e-6 and exact == 100
    announce(
        capsys, 4, ok,
        f"uniform-logit errors {mlm_err:.2e}/{rel_err:.2e}/{occur_err:.2e} (< 1e-6), "
        f"bit-exact totals on {exact}/100 batches",
    )


def test_criterion_5_gradient_check(big_instances, big_vocab, capsys):
    """Analytic vs central-difference gradients on a three-component batch."""
    start = time.monotonic()
    config = ModelConfig(
        vocab_size=len(big_vocab), d_model=32, num_layers=2, num_heads=4, d_ff=64, max_len=64
    )
    picked = [
        i for i in big_instances
        if i.strategy is MaskingStrategy.WHOLE_EVENTUALITY and i.cooccurrence
    ][:3]
    picked += [i for i in big_instances if i.relation_targets][:3]
    batch = collate(picked, config.max_len)
    assert batch.mlm_targets.size and batch.rel_targets.size and batch.cooc_targets.size
    params = init_params(config, np.random.default_rng(0))
    worst, per_tensor = finite_difference_check(
        params, config, batch, np.random.default_rng(2), num_coords=200, step=1e-4
    )
    elapsed = time.monotonic() - start
    ok = worst < 1e-4 and len(per_tensor) == len(params) and elapsed < 120
    announce(
        capsys, 5, ok,
        f"worst relative error {worst:.2e} (< 1e-4) over 200 coordinates in "
        f"{len(per_tensor)} tensors, {elapsed:.1f}s",
    )


def test_criterion_6_knowledge_recovery(trained, lexicon, capsys):
    """A small encoder recovers planted relations and co-occurrence."""
    synth = trained["synth"]
    result = trained["result"]
    report = eval_relation_heldout(
        result.params, trained["model_config"], synth.heldout_edges,
        synth.graph, lexicon, trained["vocab"],
    )
    choice = _choice_accuracy(
        result.params, trained["model_config"], trained["tasks"], trained["vocab"]
    )
    ok = (
        100 <= len(synth.graph) <= 1000
        and len(DISCOURSE_RELATIONS) == 14
        and result.completed_steps >= 500
        and report.accuracy >= 0.90
        and choice >= 0.80
        and trained["elapsed"] < 900
    )
    announce(
        capsys, 6, ok,
        f"held-out relation accuracy {report.accuracy:.3f} (>= 0.90) on "
        f"{len(synth.heldout_edges)} edges, choice accuracy {choice:.3f} (>= 0.80) "
        f"on {len(trained['tasks'])} tasks, {result.completed_steps} steps in "
        f"{trained['elapsed']:.0f}s",
    )


def test_criterion_7_ablation_switches(trained, lexicon, capsys):
    """Switching a loss off keeps its head at chance level."""
    synth = trained["synth"]
    base = dict(batch_size=64, epochs=2, max_steps=600, seed=42)
    no_rel = train(
        trained["instances"], trained["model_config"], TrainConfig(use_rel=False, **base)
    )
    rel_acc = eval_relation_heldout(
        no_rel.params, trained["model_config"], synth.heldout_edges,
        synth.graph, lexicon, trained["vocab"],
    ).accuracy
    no_occur = train(
        trained["instances"], trained["model_config"], TrainConfig(use_occur=False, **base)
    )
    choice = _choice_accuracy(
        no_occur.params, trained["model_config"], trained["tasks"], trained["vocab"]
    )
    ok = rel_acc <= 0.25 and choice <= 0.6
    assert all(lb.l_rel == 0.0 for _, lb in no_rel.trace)
    assert all(lb.l_occur == 0.0 for _, lb in no_occur.trace)
    announce(
        capsys, 7, ok,
        f"without relation loss: accuracy {rel_acc:.3f} (<= 0.25); "
        f"without co-occurrence loss: choice accuracy {choice:.3f} (<= 0.6)",
    )


def _run_pipeline(root) -> dict[str, str]:
    """synth-kg -> sample -> mask -> train -> eval in `root`; return digests."""
    root.mkdir(parents=True, exist_ok=True)
    kg_dir = root / "kg"
    paths = {
        "nodes": str(kg_dir / "nodes.tsv"),
        "edges": str(kg_dir / "edges.tsv"),
        "heldout": str(kg_dir / "heldout.tsv"),
        "corpus": str(root / "corpus.jsonl"),
        "vocab": str(root / "vocab.tsv"),
        "instances": str(root / "instances.jsonl"),
        "checkpoint": str(root / "model.ckpt"),
        "trace": str(root / "trace.csv"),
        "eval_report": str(root / "eval_report.json"),
    }
    config_path = root / "config.json"
    config_path.write_text(
        json.dumps(
            {
                "seed": 13,
                "paths": paths,
                "walk": {"num_sequences": 400},
                "model": {
                    "d_model": 32, "num_layers": 1, "num_heads": 4,
                    "d_ff": 64, "max_len": 64,
                },
                "train": {"batch_size": 32, "epochs": 1},
            }
        ),
        encoding="utf-8",
    )
    stages = [
        ["synth-kg", "--out-dir", str(kg_dir), "--num-nodes", "60", "--num-groups", "6",
         "--num-edges", "500", "--heldout-fraction", "0.1", "--seed", "13"],
        ["sample", "--config", str(config_path)],
        ["mask", "--config", str(config_path)],
        ["train", "--config", str(config_path)],
        ["eval", "--config", str(config_path)],
    ]
    for argv in stages:
        assert main(argv) == 0, f"stage {argv[0]} failed"
    return {name: file_digest(p) for name, p in paths.items()}


def test_criterion_8_end_to_end_determinism(tmp_path, capsys):
    """The whole pipeline is byte-identical across runs of one seed."""
    first = _run_pipeline(tmp_path / "run1")
    second = _run_pipeline(tmp_path / "run2")
    differing = sorted(name for name in first if first[name] != second[name])
    ok = not differing
    announce(
        capsys, 8, ok,
        f"{len(first)} artifacts byte-identical across two runs"
        + (f"; differing: {differing}" if differing else "")
        + f" (checkpoint {first['checkpoint'][:12]}..., trace {first['trace'][:12]}...)",
    )


def test_criterion_9_training_progress(trained, capsys):
    """Smoothed total loss falls by more than half between steps 50 and 500."""
    trace = trained["result"].trace
    early = smoothed_total(trace, 50)
    late = smoothed_total(trace, 500)
    ratio = late / early
    ok = late < 0.5 * early
    announce(
        capsys, 9, ok,
        f"smoothed l_total {early:.3f} @ step 50 -> {late:.3f} @ step 500 "
        f"(ratio {ratio:.3f} < 0.5)",
    )
