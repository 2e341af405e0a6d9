"""Optimization of the joint objective with decoupled-weight-decay Adam.

The trainer owns the parameters: it shuffles instances per epoch under the
run seed, collates batches with the configured loss switches, applies global
gradient-norm clipping, and records a per-step loss trace.  Weight decay is
decoupled (applied to the parameter before the Adam step) and restricted to
weight matrices; biases, layer-norm parameters, and the [PAD] embedding row
are never decayed.

Within the training stream, sub-stream index 0 seeds parameter init, 1+epoch
seeds each epoch's shuffle, and 1_000_000+step seeds per-step dropout, so a
run is reproducible from (seed, corpus) regardless of batch count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyCorpusError, KgmlmError
from .masking import TrainingInstance
from .model import (
    LossBreakdown,
    ModelConfig,
    collate,
    compute_loss,
    forward,
    init_params,
    loss_and_gradients,
    weight_decay_mask,
)
from .walks import STREAM_TRAIN, item_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_INIT_SUBSTREAM = 0
_EPOCH_SUBSTREAM = 1  # epoch e shuffles with sub-stream 1 + e
_DROPOUT_SUBSTREAM = 1_000_000  # step s uses 1_000_000 + s


class NonFiniteLossError(KgmlmError):
    """Training hit a non-finite loss; carries the last good state."""

    def __init__(self, step: int, last_good: "TrainResult"):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 10
    max_steps: int | None = None
    seed: int = 0
    use_rel: bool = True
    use_occur: bool = True
    use_eventuality_mask: bool = True
    checkpoint_every: int | None = None
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1 when set")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1 when set")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0 when set")

    @classmethod
    def continual_pretraining_preset(cls, **overrides) -> "TrainConfig":
        """The continual-pretraining recipe (learning rate 1e-5, batch 128);
        the class default is a larger from-scratch rate for small models."""
        merged = {"learning_rate": 1e-5, "batch_size": 128, "epochs": 10}
        merged.update(overrides)
        return cls(**merged)


@dataclass(frozen=True)
class TrainResult:
    params: dict[str, np.ndarray]
    model_config: ModelConfig
    train_config: TrainConfig
    trace: tuple[tuple[int, LossBreakdown], ...]
    completed_steps: int

    @property
    def final_loss(self) -> LossBreakdown:
        return self.trace[-1][1]


class AdamW:
    """Adam with decoupled weight decay and bias correction.

    Decay is applied first (param scaled toward zero by lr * wd under the
    per-parameter decay mask), then the bias-corrected Adam step.
    """

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.config = config
        self.step_count = 0
        self._m = {k: np.zeros_like(p) for k, p in params.items()}
        self._v = {k: np.zeros_like(p) for k, p in params.items()}
        self._decay = {k: weight_decay_mask(k, p) for k, p in params.items()}

    def apply(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        if cfg.clip_norm is not None:
            sq = sum(float(np.sum(g * g)) for g in grads.values())
            norm = np.sqrt(sq)
            if norm > cfg.clip_norm:
                scale = cfg.clip_norm / norm
                grads = {k: g * scale for k, g in grads.items()}
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - ADAM_BETA1**t
        bc2 = 1.0 - ADAM_BETA2**t
        for name, p in params.items():
            g = grads[name]
            if cfg.weight_decay > 0.0:
                p -= cfg.learning_rate * cfg.weight_decay * (self._decay[name] * p)
            m = self._m[name]
            v = self._v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def _batches(order: np.ndarray, batch_size: int) -> Iterable[np.ndarray]:
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train(
    instances: Sequence[TrainingInstance],
    model_config: ModelConfig,
    train_config: TrainConfig,
    initial_params: dict[str, np.ndarray] | None = None,
    checkpoint_callback: Callable[[int, dict[str, np.ndarray]], None] | None = None,
) -> TrainResult:
    """Run epochs of shuffled minibatch AdamW; returns final parameters and
    the per-step loss trace.

    The trace records every optimizer step.  A non-finite loss aborts before
    the update and raises NonFiniteLossError carrying the state and trace up
    to the last good step.  checkpoint_callback, when given, is invoked with
    (step, params) every checkpoint_every steps and at the end.
    """
    if not instances:
        raise EmptyCorpusError("cannot train on an empty instance corpus")
    if initial_params is None:
        params = init_params(model_config, item_rng(train_config.seed, STREAM_TRAIN, _INIT_SUBSTREAM))
    else:
        params = {k: np.array(v, dtype=np.float64) for k, v in initial_params.items()}
    optimizer = AdamW(params, train_config)
    trace: list[tuple[int, LossBreakdown]] = []
    step = 0
    done = False
    for epoch in range(train_config.epochs):
        order = item_rng(train_config.seed, STREAM_TRAIN, _EPOCH_SUBSTREAM + epoch).permutation(
            len(instances)
        )
        for batch_idx in _batches(order, train_config.batch_size):
            batch = collate(
                [instances[i] for i in batch_idx],
                model_config.max_len,
                use_rel=train_config.use_rel,
                use_occur=train_config.use_occur,
                use_eventuality_mask=train_config.use_eventuality_mask,
            )
            dropout_rng = None
            if model_config.dropout_rate > 0.0:
                dropout_rng = item_rng(
                    train_config.seed, STREAM_TRAIN, _DROPOUT_SUBSTREAM + step
                )
            loss, grads = loss_and_gradients(params, model_config, batch, dropout_rng)
            if not np.isfinite(loss.l_total):
                raise NonFiniteLossError(
                    step + 1,
                    TrainResult(params, model_config, train_config, tuple(trace), step),
                )
            optimizer.apply(params, grads)
            step += 1
            trace.append((step, loss))
            if (
                checkpoint_callback is not None
                and train_config.checkpoint_every is not None
                and step % train_config.checkpoint_every == 0
            ):
                checkpoint_callback(step, params)
            if train_config.max_steps is not None and step >= train_config.max_steps:
                done = True
                break
        if done:
            break
    if checkpoint_callback is not None:
        checkpoint_callback(step, params)
    return TrainResult(params, model_config, train_config, tuple(trace), step)


@dataclass(frozen=True)
class EvalResult:
    loss: LossBreakdown  # per-target averages for all three heads
    relation_accuracy: float | None
    cooc_accuracy: float | None
    num_mlm_targets: int
    num_rel_targets: int
    num_cooc_labels: int


def evaluate(
    params: dict[str, np.ndarray],
    model_config: ModelConfig,
    instances: Sequence[TrainingInstance],
    batch_size: int = 64,
) -> EvalResult:
    """Read-only pass over instances: average per-target losses plus argmax
    accuracy for the relation and co-occurrence heads.

    Unlike the training objective (which sums relation losses within a
    batch), all three reported losses are averaged per target so they are
    comparable across corpus sizes.
    """
    if not instances:
        raise EmptyCorpusError("cannot evaluate on an empty instance corpus")
    mlm_nll_sum = rel_nll_sum = cooc_nll_sum = 0.0
    mlm_n = rel_n = cooc_n = 0
    rel_hits = cooc_hits = 0
    for start in range(0, len(instances), batch_size):
        batch = collate(instances[start : start + batch_size], model_config.max_len)
        acts = forward(params, model_config, batch)
        loss = compute_loss(acts, batch)
        mlm_nll_sum += loss.l_mlm * batch.mlm_targets.size
        rel_nll_sum += loss.l_rel  # already a sum
        cooc_nll_sum += loss.l_occur * batch.cooc_targets.size
        mlm_n += batch.mlm_targets.size
        rel_n += batch.rel_targets.size
        cooc_n += batch.cooc_targets.size
        if batch.rel_targets.size:
            rel_hits += int(np.sum(acts.rel_logits.argmax(axis=1) == batch.rel_targets))
        if batch.cooc_targets.size:
            cooc_hits += int(np.sum(acts.cooc_logits.argmax(axis=1) == batch.cooc_targets))
    loss = LossBreakdown.from_components(
        mlm_nll_sum / mlm_n if mlm_n else 0.0,
        rel_nll_sum / rel_n if rel_n else 0.0,
        cooc_nll_sum / cooc_n if cooc_n else 0.0,
    )
    return EvalResult(
        loss,
        rel_hits / rel_n if rel_n else None,
        cooc_hits / cooc_n if cooc_n else None,
        mlm_n,
        rel_n,
        cooc_n,
    )


def smoothed_total(trace: Sequence[tuple[int, LossBreakdown]], step: int, window: int = 21) -> float:
    """Mean l_total over the `window` steps ending at `step` (clamped to the
    start of the trace)."""
    if not trace:
        raise EmptyCorpusError("empty loss trace")
    values = [lb.l_total for s, lb in trace if step - window < s <= step]
    if not values:
        raise ConfigError(f"no trace entries at or before step {step}")
    return float(np.mean(values))


TRACE_HEADER = "step,l_mlm,l_rel,l_occur,l_total"


def write_trace_csv(trace: Iterable[tuple[int, LossBreakdown]], out: IO[str]) -> None:
    out.write(TRACE_HEADER + "\n")
    for step, lb in trace:
        out.write(f"{step},{lb.l_mlm!r},{lb.l_rel!r},{lb.l_occur!r},{lb.l_total!r}\n")


def read_trace_csv(source: Iterable[str]) -> list[tuple[int, LossBreakdown]]:
    lines = iter(source)
    header = next(lines, "").strip()
    if header != TRACE_HEADER:
        raise ConfigError(f"bad trace header: {header!r}")
    trace = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        step, l_mlm, l_rel, l_occur, l_total = line.split(",")
        trace.append(
            (int(step), LossBreakdown(float(l_mlm), float(l_rel), float(l_occur), float(l_total)))
        )
    return trace


def read_trace_file(path) -> list[tuple[int, LossBreakdown]]:
    with open(path, encoding="utf-8") as f:
        return read_trace_csv(f)
