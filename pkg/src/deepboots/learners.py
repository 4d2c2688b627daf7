"""Per-block learners: attention over the feature axis, frequency attention,
position-wise feed-forward, and the sigmoid gate.

Parameters are plain ``dict[str, Tensor]`` keyed by short local names.  A
learner is any pair ``(init, forward)`` registered in ``ATTENTION_KINDS``;
``forward(x, params, ...)`` maps B x D x E to B x D x E.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor

Params = dict[str, Tensor]


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, prefix: str) -> dict[str, np.ndarray]:
    bound = 1.0 / math.sqrt(fan_in)
    return {
        f"{prefix}.weight": rng.uniform(-bound, bound, size=(fan_in, fan_out)),
        f"{prefix}.bias": np.zeros(fan_out),
    }


def apply_linear(x: Tensor, p: Params, prefix: str) -> Tensor:
    return T.linear(x, p[f"{prefix}.weight"], p[f"{prefix}.bias"])


# -- full attention -----------------------------------------------------------


def init_full_attention(rng: np.random.Generator, embed: int) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name in ("query", "key", "value", "out"):
        out.update(init_linear(rng, embed, embed, name))
    return out


def full_attention(
    x: Tensor,
    p: Params,
    heads: int = 8,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    weights_out: list | None = None,
) -> Tensor:
    """Multi-head scaled dot-product attention with the D features as tokens."""
    B, D, E = x.shape
    if E % heads:
        raise ValueError(f"embedding width {E} is not divisible by {heads} heads")
    dk = E // heads

    def split(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (B, D, heads, dk)), (0, 2, 1, 3))

    q = split(apply_linear(x, p, "query"))
    k = split(apply_linear(x, p, "key"))
    v = split(apply_linear(x, p, "value"))
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dk))
    attn = T.softmax(scores, axis=-1)  # B x h x D x D
    if weights_out is not None:
        weights_out.append(attn.data)
    attn = T.dropout(attn, dropout, training, rng)
    ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (B, D, E))
    return apply_linear(ctx, p, "out")


# -- frequency attention ------------------------------------------------------


def spectrum_width(embed: int) -> int:
    """Width of stacked (real, imag) one-sided spectrum for an E-length signal."""
    return 2 * (embed // 2 + 1)


def init_frequency_attention(rng: np.random.Generator, embed: int) -> dict[str, np.ndarray]:
    s = spectrum_width(embed)
    out: dict[str, np.ndarray] = {}
    for name in ("query", "key", "value"):
        out.update(init_linear(rng, s, s, name))
    return out


def frequency_attention(
    x: Tensor,
    p: Params,
    heads: int = 8,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    weights_out: list | None = None,
) -> Tensor:
    """softmax(Q K^T / sqrt(S)) V on stacked (real, imag) rFFT coefficients along E.

    ``heads`` is accepted for interface parity and ignored.  The imaginary
    parts of the DC and Nyquist bins of the context are zeroed before the
    inverse transform, so the output is exactly real.
    """
    B, D, E = x.shape
    bins = E // 2 + 1
    spec = T.rfft(x, axis=-1)
    stacked = T.concat([spec.real, spec.imag], axis=-1)  # B x D x 2*bins
    q = apply_linear(stacked, p, "query")
    k = apply_linear(stacked, p, "key")
    v = apply_linear(stacked, p, "value")
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(2 * bins))
    attn = T.softmax(scores, axis=-1)  # B x D x D
    if weights_out is not None:
        weights_out.append(attn.data)
    attn = T.dropout(attn, dropout, training, rng)
    ctx = T.matmul(attn, v)
    real = ctx[..., :bins]
    imag = T.mul(ctx[..., bins:], _hermitian_mask(E))
    return T.irfft(T.ComplexTensor(real, imag, E, axis=2))


def _hermitian_mask(n: int) -> np.ndarray:
    mask = np.ones(n // 2 + 1)
    mask[0] = 0.0
    if n % 2 == 0:
        mask[-1] = 0.0
    return mask


# -- feed-forward -------------------------------------------------------------


def init_feed_forward(rng: np.random.Generator, embed: int, hidden: int) -> dict[str, np.ndarray]:
    return {**init_linear(rng, embed, hidden, "fc1"), **init_linear(rng, hidden, embed, "fc2")}


def feed_forward(
    x: Tensor,
    p: Params,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    activation: Callable[[Tensor], Tensor] = T.gelu,
) -> Tensor:
    h = activation(apply_linear(x, p, "fc1"))
    h = T.dropout(h, dropout, training, rng)
    return apply_linear(h, p, "fc2")


# -- gate ---------------------------------------------------------------------


def init_gate(rng: np.random.Generator, width_in: int, width_out: int) -> dict[str, np.ndarray]:
    return {**init_linear(rng, width_in, width_out, "gate"), **init_linear(rng, width_in, width_out, "value")}


def gate(v: Tensor, p: Params) -> Tensor:
    """sigmoid(gate_branch(v)) * value_branch(v)."""
    w_in = p["gate.weight"].shape[0]
    if v.shape[-1] != w_in or p["value.weight"].shape[0] != w_in:
        raise ValueError(f"gate expects input width {w_in}, got {v.shape[-1]}")
    if p["gate.weight"].shape[1] != p["value.weight"].shape[1]:
        raise ValueError("gate and value branches have different output widths")
    return T.mul(T.sigmoid(apply_linear(v, p, "gate")), apply_linear(v, p, "value"))


AttentionInit = Callable[[np.random.Generator, int], dict]
AttentionForward = Callable[..., Tensor]

ATTENTION_KINDS: dict[str, tuple[AttentionInit, AttentionForward]] = {
    "full": (init_full_attention, full_attention),
    "frequency": (init_frequency_attention, frequency_attention),
}


def register_attention(name: str, init: AttentionInit, forward: AttentionForward) -> None:
    """Plug in another B x D x E -> B x D x E learner under ``name``."""
    ATTENTION_KINDS[name] = (init, forward)
