"""The dual-stream residual-decreasing backbone.

Input stream per block::

    x_hat_1 = attention(x)
    r1      = x -/+ delta * dropout(x_hat_1)
    x2      = layer_norm(r1)
    x_hat_2 = feed_forward(x2)
    r2      = x2 -/+ x_hat_2
    x_next  = gate_in(r2)            (r2 when gating is off)

Output stream::

    o_hat  = gate_out([x_hat_1, x_hat_2])   (plain linear when gating is off)
    o_next = o_hat - o_prev                 (+ for additive aggregation)

With ``o_0 = 0`` and subtraction the final output telescopes to
``sum_l (-1)**(L - l) * o_hat_l``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .data import NormStats, instance_denormalize, instance_normalize
from .learners import (
    ATTENTION_KINDS,
    apply_linear,
    feed_forward,
    gate,
    init_feed_forward,
    init_gate,
    init_linear,
)
from .tensor import Tensor

ModelParams = dict[str, Tensor]

_AGG = ("subtract", "add")


@dataclass
class ModelConfig:
    input_len: int
    pred_len: int
    n_features: int
    blocks: int = 3
    embed: int = 512
    hidden: int | None = None  # per-block output width H; defaults to pred_len
    heads: int = 8
    ff_hidden: int | None = None  # defaults to 4 * embed
    dropout: float = 0.1
    attention: str = "full"
    delta: tuple[int, ...] | None = None
    input_agg: str = "subtract"
    output_agg: str = "subtract"
    output_stream: bool = True
    gating: bool = True
    layer_norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = self.pred_len
        if self.ff_hidden is None:
            self.ff_hidden = 4 * self.embed
        if self.delta is None:
            self.delta = (1,) * self.blocks
        self.delta = tuple(int(d) for d in self.delta)
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if min(self.input_len, self.pred_len, self.n_features, self.embed, self.hidden, self.ff_hidden) < 1:
            raise ValueError("all sizes must be positive")
        if len(self.delta) != self.blocks or any(d not in (0, 1) for d in self.delta):
            raise ValueError(f"delta must hold {self.blocks} flags in {{0, 1}}, got {self.delta}")
        if self.input_agg not in _AGG or self.output_agg not in _AGG:
            raise ValueError(f"aggregation must be one of {_AGG}")
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"unknown attention kind {self.attention!r}; known: {sorted(ATTENTION_KINDS)}")
        if self.attention == "full" and self.embed % self.heads:
            raise ValueError(f"embed {self.embed} is not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def needs_projection(self) -> bool:
        return self.output_stream and self.hidden != self.pred_len

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta"] = list(self.delta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class BlockTrace:
    x_in: np.ndarray
    x_hat_1: np.ndarray
    r1: np.ndarray
    x2: np.ndarray
    x_hat_2: np.ndarray
    r2: np.ndarray
    x_next: np.ndarray
    o_hat: np.ndarray | None
    o_running: np.ndarray | None


@dataclass
class ForwardTrace:
    blocks: list[BlockTrace] = field(default_factory=list)
    prediction_normalized: np.ndarray | None = None
    stats: NormStats | None = None


def init_params(config: ModelConfig, seed: int | None = None) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norm scale."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    E, H = config.embed, config.hidden
    raw: dict[str, np.ndarray] = {}
    raw.update(init_linear(rng, config.input_len, E, "embed"))
    attn_init = ATTENTION_KINDS[config.attention][0]
    for l in range(config.blocks):
        pre = f"blocks.{l}"
        for k, v in attn_init(rng, E).items():
            raw[f"{pre}.attn.{k}"] = v
        for k, v in init_feed_forward(rng, E, config.ff_hidden).items():
            raw[f"{pre}.ff.{k}"] = v
        raw[f"{pre}.norm.weight"] = np.ones(E)
        raw[f"{pre}.norm.bias"] = np.zeros(E)
        if config.gating:
            for k, v in init_gate(rng, E, E).items():
                raw[f"{pre}.gate_in.{k}"] = v
        if config.output_stream:
            if config.gating:
                for k, v in init_gate(rng, 2 * E, H).items():
                    raw[f"{pre}.gate_out.{k}"] = v
            else:
                for k, v in init_linear(rng, 2 * E, H, "linear").items():
                    raw[f"{pre}.out.{k}"] = v
    if config.needs_projection:
        raw.update(init_linear(rng, H, config.pred_len, "proj"))
    if not config.output_stream:
        raw.update(init_linear(rng, E, config.pred_len, "head"))
    return {k: Tensor(v, requires_grad=True) for k, v in raw.items()}


_shape_cache: dict[str, dict[str, tuple[int, ...]]] = {}


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    key = json.dumps(config.to_dict(), sort_keys=True)
    if key not in _shape_cache:
        _shape_cache[key] = {k: v.shape for k, v in init_params(config, seed=0).items()}
    return _shape_cache[key]


def param_count(params: ModelParams) -> int:
    return int(sum(p.size for p in params.values()))


def _sub(params: ModelParams, prefix: str) -> dict[str, Tensor]:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def block_forward(
    x: Tensor,
    o_prev: Tensor | None,
    params: ModelParams,
    index: int,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> tuple[Tensor, Tensor | None]:
    pre = f"blocks.{index}"
    sign = T.sub if config.input_agg == "subtract" else T.add
    _, attn_fn = ATTENTION_KINDS[config.attention]
    x_hat_1 = attn_fn(x, _sub(params, pre + ".attn"), config.heads, config.dropout, training, rng)
    if config.delta[index]:
        r1 = sign(x, T.dropout(x_hat_1, config.dropout, training, rng))
    else:
        r1 = x
    x2 = T.layer_norm(r1, params[pre + ".norm.weight"], params[pre + ".norm.bias"], -1, config.layer_norm_eps)
    x_hat_2 = feed_forward(x2, _sub(params, pre + ".ff"), config.dropout, training, rng)
    r2 = sign(x2, x_hat_2)
    x_next = gate(r2, _sub(params, pre + ".gate_in")) if config.gating else r2

    o_hat = o_next = None
    if config.output_stream:
        both = T.concat([x_hat_1, x_hat_2], axis=-1)
        if config.gating:
            o_hat = gate(both, _sub(params, pre + ".gate_out"))
        else:
            o_hat = apply_linear(both, _sub(params, pre + ".out"), "linear")
        if o_prev is None:
            o_next = o_hat
        elif config.output_agg == "subtract":
            o_next = T.sub(o_hat, o_prev)
        else:
            o_next = T.add(o_hat, o_prev)

    if trace is not None:
        trace.append(
            BlockTrace(
                x.data, x_hat_1.data, r1.data, x2.data, x_hat_2.data, r2.data, x_next.data,
                None if o_hat is None else o_hat.data,
                None if o_next is None else o_next.data,
            )
        )
    return x_next, o_next


def _check_params(params: ModelParams, config: ModelConfig) -> None:
    want = expected_shapes(config)
    if set(want) != set(params):
        missing = sorted(set(want) - set(params))[:3]
        extra = sorted(set(params) - set(want))[:3]
        raise ValueError(f"parameters do not match config (missing {missing}, unexpected {extra})")
    for k, shape in want.items():
        if params[k].shape != shape:
            raise ValueError(f"parameter {k} has shape {params[k].shape}, config expects {shape}")


def forward_normalized(
    z: Tensor | np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: ForwardTrace | None = None,
) -> Tensor:
    """B x I x D normalized input -> B x O x D normalized prediction."""
    z = T.as_tensor(z)
    if z.ndim != 3 or z.shape[1] != config.input_len or z.shape[2] != config.n_features:
        raise ValueError(
            f"input shape {z.shape} does not match (B, {config.input_len}, {config.n_features})"
        )
    x = apply_linear(T.transpose(z, (0, 2, 1)), params, "embed")  # B x D x E
    o = None  # O_0 = 0
    block_traces = None if trace is None else trace.blocks
    for l in range(config.blocks):
        x, o = block_forward(x, o, params, l, config, training, rng, block_traces)
    if config.output_stream:
        out = apply_linear(o, params, "proj") if config.needs_projection else o
    else:
        out = apply_linear(x, params, "head")
    y = T.transpose(out, (0, 2, 1))
    if trace is not None:
        trace.prediction_normalized = y.data
    return y


def model_forward(
    x_raw: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: bool = False,
) -> tuple[np.ndarray, ForwardTrace | None]:
    """Normalize, run the backbone, denormalize.  Returns (B x O x D, trace)."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if not np.all(np.isfinite(x_raw)):
        raise ValueError("input contains non-finite values")
    _check_params(params, config)
    z, stats = instance_normalize(x_raw)
    tr = ForwardTrace(stats=stats) if trace else None
    with T.no_grad():
        y = forward_normalized(z, params, config, training, rng, tr)
    return instance_denormalize(y.data, stats), tr


def predict(x_raw: np.ndarray, params: ModelParams, config: ModelConfig, batch_size: int = 256) -> np.ndarray:
    outs = [model_forward(x_raw[i : i + batch_size], params, config)[0] for i in range(0, len(x_raw), batch_size)]
    return np.concatenate(outs, axis=0)


@dataclass
class Decomposition:
    contributions: list[np.ndarray]  # L x (B x O x D), raw space
    contributions_normalized: list[np.ndarray]  # L x (B x O x D)
    residual: np.ndarray  # B x D x E, final input-stream value
    prediction: np.ndarray  # B x O x D


def decompose(x_raw: np.ndarray, params: ModelParams, config: ModelConfig) -> Decomposition:
    """Signed per-block contributions whose sum reproduces the prediction.

    Block l contributes ``s_l * o_hat_l`` (s_l = (-1)**(L - l) under
    subtraction, +1 under addition), passed through the projection weight when
    H != O.  The affine parts of the output map (projection bias, instance
    mean) are spread evenly over the L blocks.
    """
    if not config.output_stream:
        raise ValueError("decomposition needs the output stream")
    pred, tr = model_forward(x_raw, params, config, trace=True)
    L = config.blocks
    stats = tr.stats
    std = stats.std[:, None, :]
    offset = stats.mean[:, None, :]
    if config.needs_projection:
        offset = offset + std * params["proj.bias"].data[None, :, None]
    normalized, raw = [], []
    for l, bt in enumerate(tr.blocks, start=1):
        s = 1.0 if config.output_agg == "add" else (-1.0) ** (L - l)
        c = s * bt.o_hat  # B x D x H
        if config.needs_projection:
            c = c @ params["proj.weight"].data
        c = np.transpose(c, (0, 2, 1))
        normalized.append(c)
        raw.append(c * std + offset / L)
    return Decomposition(raw, normalized, tr.blocks[-1].x_next, pred)
