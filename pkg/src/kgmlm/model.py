"""Transformer encoder in double-precision numpy with exact analytic gradients.

Architecture: learned token and position embeddings, pre-layer-norm residual
blocks (multi-head self-attention, GELU feed-forward), a final layer norm,
and three linear heads:

* masked-token prediction through the transposed token-embedding matrix plus
  a per-token bias (weight tying),
* a relation classifier over the 14 discourse labels, read at masked
  connective positions,
* a binary co-occurrence classifier read at [CLS].

Loss semantics: the masked-token term averages over all masked positions in
the batch, the relation term sums over relation targets (a sequence with more
connectives weighs more), and the co-occurrence term averages over labeled
instances.  The total is always accumulated as l_mlm + l_rel + l_occur in
that order, so the identity l_total == l_mlm + l_rel + l_occur holds
bit-for-bit.

Padding is excluded from attention by an additive key bias of -1e9; the
softmax weight on a padded key underflows to exactly 0.0 in float64, so no
gradient reaches padded positions and the [PAD] embedding row receives an
exactly-zero gradient.  Everything runs in float64 and dropout defaults to
0.0 so analytic gradients can be validated against central finite
differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import truncnorm

from .errors import ConfigError, KgmlmError
from .graph import NUM_DISCOURSE_RELATIONS
from .masking import MaskingStrategy, TrainingInstance
from .verbalizer import PAD_ID

INIT_STD = 0.02
LN_EPS = 1e-5
KEY_BIAS = -1.0e9  # finite so 0 * bias never produces NaN in backward
CHECKPOINT_MAGIC = b"KGMLMCKP"
CHECKPOINT_VERSION = 1


class InvalidConfigError(ConfigError):
    pass


class SequenceTooLongError(KgmlmError):
    pass


class MissingLabelPositionError(KgmlmError):
    pass


class InvalidLabelError(KgmlmError):
    pass


class ShapeMismatchError(KgmlmError):
    pass


class CheckpointFormatError(KgmlmError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    num_layers: int = 2
    num_heads: int = 4
    d_ff: int = 512
    max_len: int = 128
    num_relations: int = NUM_DISCOURSE_RELATIONS
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.vocab_size < 6:
            raise InvalidConfigError("vocab_size must cover the 5 reserved tokens plus a word")
        for name in ("d_model", "num_layers", "num_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1")
        if self.d_model % self.num_heads != 0:
            raise InvalidConfigError(
                f"d_model={self.d_model} not divisible by num_heads={self.num_heads}"
            )
        if self.max_len < 2:
            raise InvalidConfigError("max_len must be >= 2")
        if self.num_relations < 2:
            raise InvalidConfigError("num_relations must be >= 2")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise InvalidConfigError("dropout_rate must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def to_json_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "d_ff": self.d_ff,
            "max_len": self.max_len,
            "num_relations": self.num_relations,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ModelConfig":
        known = {f: obj[f] for f in cls.__dataclass_fields__ if f in obj}
        unknown = set(obj) - set(known)
        if unknown:
            raise InvalidConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**known)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter tensor with its shape, in canonical order."""
    d, ff, v = config.d_model, config.d_ff, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (v, d),
        "pos_emb": (config.max_len, d),
    }
    for i in range(config.num_layers):
        p = f"layer{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{proj}"] = (d, d)
            shapes[p + f"attn.b{proj}"] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "ffn.w1"] = (d, ff)
        shapes[p + "ffn.b1"] = (ff,)
        shapes[p + "ffn.w2"] = (ff, d)
        shapes[p + "ffn.b2"] = (d,)
    shapes["ln_f.g"] = (d,)
    shapes["ln_f.b"] = (d,)
    shapes["mlm.bias"] = (v,)
    shapes["rel.w"] = (d, config.num_relations)
    shapes["rel.b"] = (config.num_relations,)
    shapes["cooc.w"] = (d, 2)
    shapes["cooc.b"] = (2,)
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Truncated-normal (clipped at 2 sigma, stddev 0.02) matrices; zero
    biases; unit layer-norm gains."""
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = truncnorm.rvs(
                -2.0, 2.0, loc=0.0, scale=INIT_STD, size=shape, random_state=rng
            )
    return params


def check_params(config: ModelConfig, params: dict[str, np.ndarray]) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ShapeMismatchError(f"parameter keys differ: missing={missing} extra={extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeMismatchError(
                f"{name}: expected shape {shape}, got {params[name].shape}"
            )
        if not np.all(np.isfinite(params[name])):
            raise ShapeMismatchError(f"{name} contains non-finite values")


def weight_decay_mask(name: str, array: np.ndarray) -> np.ndarray | float:
    """1 where decoupled weight decay applies: matrices only, and never the
    [PAD] row of the token embedding."""
    if array.ndim < 2:
        return 0.0
    if name == "tok_emb":
        mask = np.ones_like(array)
        mask[PAD_ID] = 0.0
        return mask
    return 1.0


@dataclass(frozen=True)
class Batch:
    """Padded tensor view of a list of training instances.

    Label arrays are flat and indexed by (row in batch, position in row);
    they may be empty when a loss term has no targets or is switched off.
    """

    input_ids: np.ndarray  # (B, T) int64, [PAD]-padded
    key_mask: np.ndarray  # (B, T) bool, True at real tokens
    mlm_rows: np.ndarray
    mlm_cols: np.ndarray
    mlm_targets: np.ndarray
    rel_rows: np.ndarray
    rel_cols: np.ndarray
    rel_targets: np.ndarray
    cooc_rows: np.ndarray
    cooc_targets: np.ndarray

    @property
    def num_instances(self) -> int:
        return self.input_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.input_ids.shape[1]


def pad_sequences(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad with [PAD]; returns (ids, key_mask)."""
    n = len(sequences)
    t = max(len(s) for s in sequences)
    ids = np.full((n, t), PAD_ID, dtype=np.int64)
    mask = np.zeros((n, t), dtype=bool)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = seq
        mask[i, : len(seq)] = True
    return ids, mask


def collate(
    instances: Sequence[TrainingInstance],
    max_len: int,
    use_rel: bool = True,
    use_occur: bool = True,
    use_eventuality_mask: bool = True,
) -> Batch:
    """Pad instances into a batch and flatten their labels.

    The switches drop the corresponding labels: use_rel / use_occur clear the
    relation and co-occurrence targets, use_eventuality_mask=False clears
    masked-token targets of whole-eventuality instances (their inputs stay
    corrupted; only the supervision is withheld).
    """
    if not instances:
        raise ShapeMismatchError("cannot collate an empty instance list")
    longest = max(len(inst) for inst in instances)
    if longest > max_len:
        raise SequenceTooLongError(f"instance length {longest} exceeds max_len {max_len}")
    ids, mask = pad_sequences([inst.input_ids for inst in instances])
    mlm_rows, mlm_cols, mlm_targets = [], [], []
    rel_rows, rel_cols, rel_targets = [], [], []
    cooc_rows, cooc_targets = [], []
    for row, inst in enumerate(instances):
        n = len(inst.input_ids)
        keep_mlm = use_eventuality_mask or inst.strategy is not MaskingStrategy.WHOLE_EVENTUALITY
        for pos in sorted(inst.mlm_targets):
            if not (0 <= pos < n):
                raise MissingLabelPositionError(f"mlm position {pos} outside instance of length {n}")
            if keep_mlm:
                mlm_rows.append(row)
                mlm_cols.append(pos)
                mlm_targets.append(inst.mlm_targets[pos])
        for pos in sorted(inst.relation_targets):
            if not (0 <= pos < n):
                raise MissingLabelPositionError(
                    f"relation position {pos} outside instance of length {n}"
                )
            rel = inst.relation_targets[pos]
            if not rel.is_discourse:
                raise InvalidLabelError(f"relation target {rel.name} is not a discourse relation")
            if use_rel:
                rel_rows.append(row)
                rel_cols.append(pos)
                rel_targets.append(int(rel))
        if inst.cooccurrence is not None:
            label = inst.cooccurrence[1]
            if label not in (0, 1):
                raise InvalidLabelError(f"co-occurrence label must be 0 or 1, got {label}")
            if use_occur:
                cooc_rows.append(row)
                cooc_targets.append(label)
    as_i64 = lambda xs: np.asarray(xs, dtype=np.int64)
    return Batch(
        ids,
        mask,
        as_i64(mlm_rows),
        as_i64(mlm_cols),
        as_i64(mlm_targets),
        as_i64(rel_rows),
        as_i64(rel_cols),
        as_i64(rel_targets),
        as_i64(cooc_rows),
        as_i64(cooc_targets),
    )


@dataclass(frozen=True)
class Activations:
    hidden: np.ndarray  # (B, T, d) final-layer-norm output
    x_cls: np.ndarray  # (B, d)
    mlm_logits: np.ndarray  # (|M|, V)
    rel_logits: np.ndarray  # (|M_R|, num_relations)
    cooc_logits: np.ndarray  # (num labeled instances, 2)


@dataclass(frozen=True)
class LossBreakdown:
    l_mlm: float
    l_rel: float
    l_occur: float
    l_total: float

    @classmethod
    def from_components(cls, l_mlm: float, l_rel: float, l_occur: float) -> "LossBreakdown":
        return cls(l_mlm, l_rel, l_occur, l_mlm + l_rel + l_occur)


def gelu(u: np.ndarray) -> np.ndarray:
    return u * ndtr(u)


def gelu_grad(u: np.ndarray) -> np.ndarray:
    return ndtr(u) + u * np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv_std
    return g * xhat + b, xhat, inv_std


def _layer_norm_backward(dy, g, xhat, inv_std):
    dxhat = dy * g
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dg, db


def _softmax(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _mat_grad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _dropout_mask(shape, rate: float, rng: np.random.Generator | None):
    if rate == 0.0:
        return None
    if rng is None:
        raise InvalidConfigError("dropout_rate > 0 requires a random generator")
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _forward_cache(params, config: ModelConfig, batch: Batch, dropout_rng=None) -> dict:
    if batch.seq_len > config.max_len:
        raise SequenceTooLongError(
            f"batch length {batch.seq_len} exceeds max_len {config.max_len}"
        )
    t = batch.seq_len
    rate = config.dropout_rate
    cache: dict = {"layers": []}
    emb = params["tok_emb"][batch.input_ids] + params["pos_emb"][:t][None, :, :]
    emb_drop = _dropout_mask(emb.shape, rate, dropout_rng)
    if emb_drop is not None:
        emb = emb * emb_drop
    cache["emb_drop"] = emb_drop
    # additive key bias: 0 at real tokens, -1e9 at padding
    key_bias = np.where(batch.key_mask, 0.0, KEY_BIAS)[:, None, None, :]
    cache["key_bias"] = key_bias
    x = emb
    scale = 1.0 / np.sqrt(config.head_dim)
    for i in range(config.num_layers):
        p = f"layer{i}."
        lc: dict = {"x_in": x}
        h1, lc["xhat1"], lc["inv1"] = _layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        lc["h1"] = h1
        q = _split_heads(h1 @ params[p + "attn.wq"] + params[p + "attn.bq"], config.num_heads)
        k = _split_heads(h1 @ params[p + "attn.wk"] + params[p + "attn.bk"], config.num_heads)
        v = _split_heads(h1 @ params[p + "attn.wv"] + params[p + "attn.bv"], config.num_heads)
        lc["q"], lc["k"], lc["v"] = q, k, v
        weights = _softmax(q @ k.transpose(0, 1, 3, 2) * scale + key_bias)
        lc["weights"] = weights
        ctx = _merge_heads(weights @ v)
        lc["ctx"] = ctx
        attn_out = ctx @ params[p + "attn.wo"] + params[p + "attn.bo"]
        lc["attn_drop"] = _dropout_mask(attn_out.shape, rate, dropout_rng)
        if lc["attn_drop"] is not None:
            attn_out = attn_out * lc["attn_drop"]
        x = x + attn_out
        lc["x_mid"] = x
        h2, lc["xhat2"], lc["inv2"] = _layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        lc["h2"] = h2
        u = h2 @ params[p + "ffn.w1"] + params[p + "ffn.b1"]
        lc["u"] = u
        a = gelu(u)
        lc["a"] = a
        ffn_out = a @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        lc["ffn_drop"] = _dropout_mask(ffn_out.shape, rate, dropout_rng)
        if lc["ffn_drop"] is not None:
            ffn_out = ffn_out * lc["ffn_drop"]
        x = x + ffn_out
        cache["layers"].append(lc)
    hidden, cache["xhat_f"], cache["inv_f"] = _layer_norm(
        x, params["ln_f.g"], params["ln_f.b"]
    )
    cache["hidden"] = hidden
    cache["mlm_h"] = hidden[batch.mlm_rows, batch.mlm_cols]
    cache["rel_h"] = hidden[batch.rel_rows, batch.rel_cols]
    cache["cooc_h"] = hidden[batch.cooc_rows, 0]
    mlm_logits = cache["mlm_h"] @ params["tok_emb"].T + params["mlm.bias"]
    if mlm_logits.size:
        # [PAD] is never a target; bias its class out so the softmax puts
        # exactly zero mass (and zero gradient) on the padding embedding row.
        mlm_logits[:, PAD_ID] += KEY_BIAS
    cache["mlm_logits"] = mlm_logits
    cache["rel_logits"] = cache["rel_h"] @ params["rel.w"] + params["rel.b"]
    cache["cooc_logits"] = cache["cooc_h"] @ params["cooc.w"] + params["cooc.b"]
    return cache


def _activations(cache: dict) -> Activations:
    return Activations(
        hidden=cache["hidden"],
        x_cls=cache["hidden"][:, 0, :],
        mlm_logits=cache["mlm_logits"],
        rel_logits=cache["rel_logits"],
        cooc_logits=cache["cooc_logits"],
    )


def forward(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: Batch,
    dropout_rng: np.random.Generator | None = None,
) -> Activations:
    return _activations(_forward_cache(params, config, batch, dropout_rng))


def _nll(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if logits.shape[0] != targets.shape[0]:
        raise ShapeMismatchError(
            f"{logits.shape[0]} logit rows but {targets.shape[0]} targets"
        )
    if logits.shape[0] == 0:
        return np.zeros(0)
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise InvalidLabelError("target outside logit class range")
    log_probs = _log_softmax(logits)
    return -log_probs[np.arange(logits.shape[0]), targets]


def compute_loss(acts: Activations, batch: Batch) -> LossBreakdown:
    """Cross-entropy per head: mean over masked tokens, sum over relation
    targets, mean over co-occurrence labels.  Absent components are 0."""
    nll_mlm = _nll(acts.mlm_logits, batch.mlm_targets)
    nll_rel = _nll(acts.rel_logits, batch.rel_targets)
    nll_cooc = _nll(acts.cooc_logits, batch.cooc_targets)
    l_mlm = float(nll_mlm.mean()) if nll_mlm.size else 0.0
    l_rel = float(nll_rel.sum()) if nll_rel.size else 0.0
    l_occur = float(nll_cooc.mean()) if nll_cooc.size else 0.0
    return LossBreakdown.from_components(l_mlm, l_rel, l_occur)


def _head_grad(logits: np.ndarray, targets: np.ndarray, scale: float) -> np.ndarray:
    grad = _softmax(logits)
    grad[np.arange(logits.shape[0]), targets] -= 1.0
    return grad * scale


def loss_and_gradients(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: Batch,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """One forward/backward pass; gradients are exact for l_total."""
    cache = _forward_cache(params, config, batch, dropout_rng)
    loss = compute_loss(_activations(cache), batch)
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    b, t, d = cache["hidden"].shape
    dh = np.zeros((b, t, d))
    if batch.mlm_targets.size:
        dlogits = _head_grad(cache["mlm_logits"], batch.mlm_targets, 1.0 / batch.mlm_targets.size)
        grads["mlm.bias"] += dlogits.sum(axis=0)
        grads["tok_emb"] += dlogits.T @ cache["mlm_h"]
        np.add.at(dh, (batch.mlm_rows, batch.mlm_cols), dlogits @ params["tok_emb"])
    if batch.rel_targets.size:
        dlogits = _head_grad(cache["rel_logits"], batch.rel_targets, 1.0)
        grads["rel.w"] += cache["rel_h"].T @ dlogits
        grads["rel.b"] += dlogits.sum(axis=0)
        np.add.at(dh, (batch.rel_rows, batch.rel_cols), dlogits @ params["rel.w"].T)
    if batch.cooc_targets.size:
        dlogits = _head_grad(
            cache["cooc_logits"], batch.cooc_targets, 1.0 / batch.cooc_targets.size
        )
        grads["cooc.w"] += cache["cooc_h"].T @ dlogits
        grads["cooc.b"] += dlogits.sum(axis=0)
        np.add.at(
            dh,
            (batch.cooc_rows, np.zeros_like(batch.cooc_rows)),
            dlogits @ params["cooc.w"].T,
        )
    dx, grads["ln_f.g"], grads["ln_f.b"] = _layer_norm_backward(
        dh, params["ln_f.g"], cache["xhat_f"], cache["inv_f"]
    )
    scale = 1.0 / np.sqrt(config.head_dim)
    for i in reversed(range(config.num_layers)):
        p = f"layer{i}."
        lc = cache["layers"][i]
        # feed-forward sublayer
        dffn = dx if lc["ffn_drop"] is None else dx * lc["ffn_drop"]
        grads[p + "ffn.w2"] += _mat_grad(lc["a"], dffn)
        grads[p + "ffn.b2"] += dffn.reshape(-1, d).sum(axis=0)
        da = dffn @ params[p + "ffn.w2"].T
        du = da * gelu_grad(lc["u"])
        grads[p + "ffn.w1"] += _mat_grad(lc["h2"], du)
        grads[p + "ffn.b1"] += du.reshape(-1, config.d_ff).sum(axis=0)
        dh2 = du @ params[p + "ffn.w1"].T
        dx2, grads[p + "ln2.g"], grads[p + "ln2.b"] = _layer_norm_backward(
            dh2, params[p + "ln2.g"], lc["xhat2"], lc["inv2"]
        )
        dx = dx + dx2
        # attention sublayer
        dattn = dx if lc["attn_drop"] is None else dx * lc["attn_drop"]
        grads[p + "attn.wo"] += _mat_grad(lc["ctx"], dattn)
        grads[p + "attn.bo"] += dattn.reshape(-1, d).sum(axis=0)
        dctx = _split_heads(dattn @ params[p + "attn.wo"].T, config.num_heads)
        dweights = dctx @ lc["v"].transpose(0, 1, 3, 2)
        dv = lc["weights"].transpose(0, 1, 3, 2) @ dctx
        w = lc["weights"]
        dscores = w * (dweights - (dweights * w).sum(axis=-1, keepdims=True))
        dq = _merge_heads(dscores @ lc["k"] * scale)
        dk = _merge_heads(dscores.transpose(0, 1, 3, 2) @ lc["q"] * scale)
        dv = _merge_heads(dv)
        dh1 = np.zeros_like(dx)
        for proj, dproj in (("q", dq), ("k", dk), ("v", dv)):
            grads[p + f"attn.w{proj}"] += _mat_grad(lc["h1"], dproj)
            grads[p + f"attn.b{proj}"] += dproj.reshape(-1, d).sum(axis=0)
            dh1 += dproj @ params[p + f"attn.w{proj}"].T
        dx1, grads[p + "ln1.g"], grads[p + "ln1.b"] = _layer_norm_backward(
            dh1, params[p + "ln1.g"], lc["xhat1"], lc["inv1"]
        )
        dx = dx + dx1
    demb = dx if cache["emb_drop"] is None else dx * cache["emb_drop"]
    grads["pos_emb"][:t] += demb.sum(axis=0)
    np.add.at(grads["tok_emb"], batch.input_ids.reshape(-1), demb.reshape(-1, d))
    return loss, grads


def finite_difference_check(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    batch: Batch,
    rng: np.random.Generator,
    num_coords: int = 200,
    step: float = 1e-4,
    floor: float = 1e-3,
) -> tuple[float, dict[str, float]]:
    """Max relative error of analytic vs central-difference gradients.

    Samples num_coords coordinates with at least one per parameter tensor.
    The relative error denominator is clamped below by `floor` so untouched
    coordinates (both gradients ~0) compare at absolute precision.
    """
    if config.dropout_rate != 0.0:
        raise InvalidConfigError("finite differences require dropout_rate == 0")
    names = list(params)
    if num_coords < len(names):
        raise InvalidConfigError(
            f"num_coords={num_coords} cannot cover {len(names)} parameter tensors"
        )
    _, grads = loss_and_gradients(params, config, batch)
    coords: list[tuple[str, tuple[int, ...]]] = []
    for name in names:
        flat = int(rng.integers(0, params[name].size))
        coords.append((name, np.unravel_index(flat, params[name].shape)))
    sizes = np.array([params[n].size for n in names], dtype=np.float64)
    extra = num_coords - len(coords)
    picks = rng.choice(len(names), size=extra, p=sizes / sizes.sum())
    for idx in picks:
        name = names[int(idx)]
        flat = int(rng.integers(0, params[name].size))
        coords.append((name, np.unravel_index(flat, params[name].shape)))

    def total_loss() -> float:
        acts = forward(params, config, batch)
        return compute_loss(acts, batch).l_total

    worst = 0.0
    per_tensor: dict[str, float] = {name: 0.0 for name in names}
    for name, idx in coords:
        original = params[name][idx]
        params[name][idx] = original + step
        up = total_loss()
        params[name][idx] = original - step
        down = total_loss()
        params[name][idx] = original
        numeric = (up - down) / (2.0 * step)
        analytic = grads[name][idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        per_tensor[name] = max(per_tensor[name], err)
        worst = max(worst, err)
    return worst, per_tensor


def save_checkpoint(path, config: ModelConfig, params: dict[str, np.ndarray]) -> None:
    """Versioned binary container: magic, version, JSON header (config plus
    tensor manifest), then raw little-endian float64 blobs.  Byte-identical
    for identical inputs."""
    check_params(config, params)
    manifest = [
        {"name": name, "dtype": "<f8", "shape": list(arr.shape)}
        for name, arr in params.items()
    ]
    header = json.dumps(
        {"config": config.to_json_dict(), "tensors": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for arr in params.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        config = ModelConfig.from_json_dict(header["config"])
        params: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointFormatError(f"{path}: truncated tensor {entry['name']}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise CheckpointFormatError(f"{path}: trailing bytes after tensors")
    check_params(config, params)
    return config, params
