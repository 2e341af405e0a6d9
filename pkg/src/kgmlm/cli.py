"""Command-line pipeline driver.

One entry point (`kgmlm`) with a subcommand per pipeline stage:

    synth-kg   emit a synthetic knowledge graph with a planted answer key
    ingest     validate a graph and report its statistics
    sample     constrained random walks -> path corpus JSONL + histogram
    mask       verbalize + mask paths -> vocab TSV + instance JSONL
    train      optimize the joint objective -> checkpoint + loss trace CSV
    probe      connective-cloze queries against a checkpoint
    eval       held-out relation accuracy and binary-choice accuracy
    gradcheck  finite-difference validation of the analytic gradients

All stages except synth-kg and gradcheck read a JSON config file; any value
can be overridden on the command line with repeatable `--set dotted.key=value`
flags (values are parsed as JSON when possible, else taken as strings).  The
global `seed` seeds every stage unless a stage section sets its own.

Exit codes: 0 success, 1 usage or configuration error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import graph as kg
from . import masking, model, probing, synth, training, verbalizer, walks
from .errors import ConfigError, KgmlmError, MissingArtifactError

log = logging.getLogger("kgmlm")

_CONFIG_SECTIONS = ("paths", "walk", "mask", "model", "train")


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    walk: dict = field(default_factory=dict)
    mask: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    @classmethod
    def load(cls, config_path: str, overrides: list[str]) -> "PipelineConfig":
        try:
            with open(config_path, encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path} is not valid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        for key, value in _parse_overrides(overrides):
            _apply_override(raw, key, value)
        unknown = set(raw) - {"seed", *_CONFIG_SECTIONS}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        sections = {s: dict(raw.get(s, {})) for s in _CONFIG_SECTIONS}
        for name, section in sections.items():
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name!r} must be a JSON object")
        return cls(seed=int(raw.get("seed", 0)), **sections)

    def path(self, name: str) -> Path:
        if name not in self.paths:
            raise ConfigError(f"config paths.{name} is required for this stage")
        return Path(self.paths[name])

    def optional_path(self, name: str) -> Path | None:
        return Path(self.paths[name]) if self.paths.get(name) else None

    def input_path(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(f"missing input artifact paths.{name}: {p}")
        return p

    def resolved(self) -> dict:
        return {
            "seed": self.seed,
            "paths": self.paths,
            "walk": self.walk,
            "mask": self.mask,
            "model": self.model,
            "train": self.train,
        }

    def walk_config(self) -> walks.WalkConfig:
        section = dict(self.walk)
        names = section.pop("transitive_relations", None)
        kwargs = {"seed": self.seed, **section}
        if names is not None:
            kwargs["transitive_relations"] = frozenset(
                kg.RelationType.from_name(n) for n in names
            )
        return _build_config(walks.WalkConfig, kwargs, "walk")

    def masking_config(self) -> masking.MaskingConfig:
        section = dict(self.mask)
        section.pop("vocab_min_count", None)
        return _build_config(masking.MaskingConfig, {"seed": self.seed, **section}, "mask")

    def model_config(self, vocab_size: int) -> model.ModelConfig:
        section = dict(self.model)
        section.pop("vocab_size", None)  # always taken from the built vocabulary
        return _build_config(model.ModelConfig, {"vocab_size": vocab_size, **section}, "model")

    def train_config(self) -> training.TrainConfig:
        return _build_config(
            training.TrainConfig, {"seed": self.seed, **self.train}, "train"
        )


def _build_config(cls, kwargs: dict, section: str):
    fields = set(cls.__dataclass_fields__)
    unknown = set(kwargs) - fields
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")
    return cls(**kwargs)


def _parse_overrides(pairs: list[str]) -> list[tuple[str, object]]:
    parsed = []
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, text = pair.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        parsed.append((key, value))
    return parsed


def _apply_override(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    target = raw
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ConfigError(f"cannot override {dotted!r}: {part!r} is not an object")
    target[parts[-1]] = value


def _log_start(command: str, config: PipelineConfig) -> None:
    log.info("%s: seed=%d", command, config.seed)
    log.info("%s: resolved config %s", command, json.dumps(config.resolved(), sort_keys=True))


def _write_text(path: Path, writer) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        writer(f)


def _load_lexicon(config: PipelineConfig) -> verbalizer.ConnectiveLexicon:
    lexicon_path = config.optional_path("lexicon")
    if lexicon_path is None:
        return verbalizer.ConnectiveLexicon()
    if not lexicon_path.exists():
        raise MissingArtifactError(f"missing lexicon file: {lexicon_path}")
    with open(lexicon_path, encoding="utf-8") as f:
        return verbalizer.ConnectiveLexicon.from_json(f)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_synth_kg(args) -> int:
    weights = None
    if args.relation_weights:
        weights = tuple(float(w) for w in args.relation_weights.split(","))
    spec = synth.PatternSpec(
        num_nodes=args.num_nodes,
        num_groups=args.num_groups,
        num_edges=args.num_edges,
        relation_weights=weights,
        cooc_partner_groups=args.cooc_partner_groups,
        heldout_fraction=args.heldout_fraction,
        filler_rate=args.filler_rate,
        seed=args.seed,
    )
    log.info("synth-kg: seed=%d spec=%s", args.seed, spec)
    result = synth.generate(spec)
    out = Path(args.out_dir)
    _write_text(out / "nodes.tsv", lambda f: kg.write_nodes_tsv(result.graph, f))
    _write_text(
        out / "edges.tsv", lambda f: kg.write_edges_tsv(kg.all_edges(result.graph), f)
    )
    _write_text(out / "heldout.tsv", lambda f: kg.write_edges_tsv(result.heldout_edges, f))
    _write_text(out / "answer_key.jsonl", lambda f: synth.write_answer_key(result, f))
    log.info(
        "synth-kg: wrote %d nodes, %d edges (+%d held out) to %s",
        len(result.graph),
        result.graph.num_edges,
        len(result.heldout_edges),
        out,
    )
    return 0


def _load_graph(config: PipelineConfig) -> kg.KnowledgeGraph:
    nodes = config.input_path("nodes")
    edges = config.input_path("edges")
    return kg.load_graph_files(nodes, edges)


def cmd_ingest(args) -> int:
    config = PipelineConfig.load(args.config, args.set)
    _log_start("ingest", config)
    graph = _load_graph(config)
    counts = {r.name: c for r, c in graph.relation_counts().items() if c}
    stats = {
        "num_nodes": len(graph),
        "num_edges": graph.num_edges,
        "relation_counts": counts,
        "frequency_p999": graph.frequency_percentile(0.999),
    }
    log.info("ingest: %s", json.dumps(stats, sort_keys=True))
    stats_path = config.optional_path("stats")
    if stats_path is not None:
        _write_text(stats_path, lambda f: json.dump(stats, f, sort_keys=True, indent=2))
        log.info("ingest: wrote %s", stats_path)
    return 0


def cmd_sample(args) -> int:
    config = PipelineConfig.load(args.config, args.set)
    _log_start("sample", config)
    graph = _load_graph(config)
    walk_config = config.walk_config()
    paths, histogram = walks.sample_corpus(graph, walk_config, workers=args.workers)
    _write_text(config.path("corpus"), lambda f: walks.write_corpus_jsonl(paths, f))
    histogram_path = config.optional_path("histogram")
    if histogram_path is not None:
        _write_text(histogram_path, histogram.save)
    log.info("sample: %d paths\n%s", len(paths), histogram.render())
    return 0


def cmd_mask(args) -> int:
    config = PipelineConfig.load(args.config, args.set)
    _log_start("mask", config)
    graph = _load_graph(config)
    corpus = walks.read_corpus_file(config.input_path("corpus"))
    lexicon = _load_lexicon(config)
    vocab = verbalizer.build_vocab(
        corpus, graph, lexicon, min_count=int(config.mask.get("vocab_min_count", 1))
    )
    _write_text(config.path("vocab"), vocab.save)
    instances = masking.build_instances(
        corpus, graph, vocab, lexicon, config.masking_config(), workers=args.workers
    )
    _write_text(
        config.path("instances"), lambda f: masking.write_instances_jsonl(instances, f)
    )
    whole = sum(
        1 for i in instances if i.strategy is masking.MaskingStrategy.WHOLE_EVENTUALITY
    )
    with_cooc = sum(1 for i in instances if i.cooccurrence is not None)
    log.info(
        "mask: %d instances (%d whole-eventuality, %d connective, %d with co-occurrence), vocab size %d",
        len(instances),
        whole,
        len(instances) - whole,
        with_cooc,
        len(vocab),
    )
    return 0


def cmd_train(args) -> int:
    config = PipelineConfig.load(args.config, args.set)
    _log_start("train", config)
    instances = masking.read_instances_file(config.input_path("instances"))
    vocab = verbalizer.Vocabulary.load_file(config.input_path("vocab"))
    model_config = config.model_config(len(vocab))
    train_config = config.train_config()
    checkpoint_path = config.path("checkpoint")
    checkpoint_path.parent.mkdir(parents=True, exist_ok=True)

    def save_intermediate(step: int, params: dict) -> None:
        model.save_checkpoint(checkpoint_path, model_config, params)

    callback = save_intermediate if train_config.checkpoint_every else None
    try:
        result = training.train(instances, model_config, train_config, checkpoint_callback=callback)
    except training.NonFiniteLossError as e:
        log.error("train: %s; saving last good checkpoint", e)
        model.save_checkpoint(checkpoint_path, e.last_good.model_config, e.last_good.params)
        _write_text(
            config.path("trace"), lambda f: training.write_trace_csv(e.last_good.trace, f)
        )
        return 2
    model.save_checkpoint(checkpoint_path, model_config, result.params)
    _write_text(config.path("trace"), lambda f: training.write_trace_csv(result.trace, f))
    log.info(
        "train: %d steps, final loss %.4f, checkpoint %s (sha256 %s)",
        result.completed_steps,
        result.final_loss.l_total,
        checkpoint_path,
        file_digest(checkpoint_path),
    )
    return 0


def cmd_probe(args) -> int:
    config = PipelineConfig.load(args.config, args.set)
    _log_start("probe", config)
    model_config, params = model.load_checkpoint(config.input_path("checkpoint"))
    vocab = verbalizer.Vocabulary.load_file(config.input_path("vocab"))
    lexicon = _load_lexicon(config)
    with open(config.input_path("probe_queries"), encoding="utf-8") as f:
        queries = list(probing.read_probe_queries(f))
    results = [
        (
            q,
            probing.probe_connective(
                params, model_config, q, vocab, lexicon,
                restrict_to_connectives=not args.full_vocab,
            ),
        )
        for q in queries
    ]
    _write_text(
        config.path("probe_results"), lambda f: probing.write_probe_results(results, f)
    )
    log.info("probe: answered %d queries", len(results))
    return 0


def cmd_eval(args) -> int:
    config = PipelineConfig.load(args.config, args.set)
    _log_start("eval", config)
    model_config, params = model.load_checkpoint(config.input_path("checkpoint"))
    vocab = verbalizer.Vocabulary.load_file(config.input_path("vocab"))
    lexicon = _load_lexicon(config)
    graph = _load_graph(config)
    report: dict = {}
    heldout_path = config.input_path("heldout")
    with open(heldout_path, encoding="utf-8") as f:
        edges = kg.parse_edges(f, len(graph), str(heldout_path))
    heldout = probing.eval_relation_heldout(params, model_config, edges, graph, lexicon, vocab)
    report["relation_accuracy"] = heldout.accuracy
    report["relation_support"] = {r.name: n for r, n in heldout.support.items()}
    report["per_relation_accuracy"] = {r.name: a for r, a in heldout.per_relation.items()}
    report["confusion"] = heldout.confusion.tolist()
    predictions_path = config.optional_path("heldout_predictions")
    if predictions_path is not None:
        _write_text(predictions_path, lambda f: probing.write_heldout_predictions(heldout, f))
    tasks_path = config.optional_path("choice_tasks")
    if tasks_path is not None:
        if not tasks_path.exists():
            raise MissingArtifactError(f"missing choice tasks file: {tasks_path}")
        with open(tasks_path, encoding="utf-8") as f:
            tasks = list(probing.read_choice_tasks(f))
        results = []
        hits = graded = 0
        for task in tasks:
            chosen, scores = probing.score_choice(params, model_config, task, vocab)
            results.append((task, chosen, scores))
            if task.gold is not None:
                graded += 1
                hits += int(chosen == task.gold)
        choice_results_path = config.optional_path("choice_results")
        if choice_results_path is not None:
            _write_text(
                choice_results_path, lambda f: probing.write_choice_results(results, f)
            )
        report["choice_tasks"] = len(tasks)
        if graded:
            report["choice_accuracy"] = hits / graded
    _write_text(
        config.path("eval_report"), lambda f: json.dump(report, f, sort_keys=True, indent=2)
    )
    log.info("eval: %s", json.dumps(report["relation_accuracy"]))
    return 0


def _gradcheck_fixture(seed: int):
    """Tiny graph -> instances with all three loss components present."""
    spec = synth.PatternSpec(
        num_nodes=24, num_groups=4, num_edges=160, cooc_partner_groups=1,
        heldout_fraction=0.0, seed=seed,
    )
    result = synth.generate(spec)
    walk_config = walks.WalkConfig(seed=seed, num_sequences=12, min_start_frequency=0)
    paths, _ = walks.sample_corpus(result.graph, walk_config)
    lexicon = verbalizer.ConnectiveLexicon()
    vocab = verbalizer.build_vocab(paths, result.graph, lexicon)
    instances = masking.build_instances(
        paths, result.graph, vocab, lexicon, masking.MaskingConfig(seed=seed)
    )
    picked = []
    for strategy in masking.MaskingStrategy:
        with_strategy = [i for i in instances if i.strategy is strategy]
        if not with_strategy:
            raise KgmlmError("gradcheck fixture lacks a masking strategy; change --seed")
        picked.extend(with_strategy[:3])
    if not any(i.cooccurrence is not None for i in picked):
        raise KgmlmError("gradcheck fixture lacks co-occurrence labels; change --seed")
    model_config = model.ModelConfig(
        vocab_size=len(vocab), d_model=32, num_layers=2, num_heads=4, d_ff=64, max_len=64
    )
    batch = model.collate(picked, model_config.max_len)
    return model_config, batch


def cmd_gradcheck(args) -> int:
    log.info("gradcheck: seed=%d coords=%d step=%g tolerance=%g",
             args.seed, args.coords, args.step, args.tolerance)
    model_config, batch = _gradcheck_fixture(args.seed)
    rng = walks.item_rng(args.seed, walks.STREAM_TRAIN, 0)
    params = model.init_params(model_config, rng)
    worst, per_tensor = model.finite_difference_check(
        params, model_config, batch, rng, num_coords=args.coords, step=args.step
    )
    for name in sorted(per_tensor, key=per_tensor.get, reverse=True)[:5]:
        log.info("gradcheck: %-16s max rel err %.3e", name, per_tensor[name])
    log.info("gradcheck: worst relative error %.3e (tolerance %g)", worst, args.tolerance)
    if worst >= args.tolerance:
        log.error("gradcheck: FAILED")
        return 2
    log.info("gradcheck: OK")
    return 0


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; remap to ConfigError so
    main() can return exit code 1."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgmlm", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    synth_p = sub.add_parser("synth-kg", help="emit a synthetic knowledge graph")
    synth_p.add_argument("--out-dir", required=True)
    synth_p.add_argument("--num-nodes", type=int, default=300)
    synth_p.add_argument("--num-groups", type=int, default=10)
    synth_p.add_argument("--num-edges", type=int, default=6000)
    synth_p.add_argument("--cooc-partner-groups", type=int, default=1)
    synth_p.add_argument("--heldout-fraction", type=float, default=0.1)
    synth_p.add_argument("--filler-rate", type=float, default=0.5)
    synth_p.add_argument("--relation-weights", default=None,
                         help="comma-separated weights for the 14 discourse relations")
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.set_defaults(func=cmd_synth_kg)

    def stage(name: str, func, help_text: str, workers: bool = False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (dotted keys, JSON values)")
        if workers:
            p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)
        return p

    stage("ingest", cmd_ingest, "validate a graph and report statistics")
    stage("sample", cmd_sample, "sample constrained random walks", workers=True)
    stage("mask", cmd_mask, "verbalize and mask walks into instances", workers=True)
    stage("train", cmd_train, "train the encoder on masked instances")
    probe_p = stage("probe", cmd_probe, "connective-cloze probing")
    probe_p.add_argument("--full-vocab", action="store_true",
                         help="rank the full vocabulary instead of connectives")
    stage("eval", cmd_eval, "held-out relation and choice evaluation")

    grad_p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    grad_p.add_argument("--seed", type=int, default=0)
    grad_p.add_argument("--coords", type=int, default=200)
    grad_p.add_argument("--step", type=float, default=1e-4)
    grad_p.add_argument("--tolerance", type=float, default=1e-4)
    grad_p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        log.error("%s", e)
        return 1
    except KgmlmError as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
