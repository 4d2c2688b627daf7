"""Dense float64 tensors with reverse-mode automatic differentiation.

Each operation that touches a tensor with ``requires_grad`` records its
parents and a backward closure on the output.  ``backward`` walks that record
in reverse topological order, visiting every node once.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf, expit

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (eval-mode forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; scale by a constant instead")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, name: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} is out of range for a {ndim}-d tensor")
    return axis % ndim


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), fn, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "subtract")

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), fn, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "multiply")

    def fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), fn, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))

    def fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _make(x * cdf, (a,), fn, "gelu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def absolute(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.abs(x), (a,), lambda g: (g * np.sign(x),), "abs")


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting on batch axes)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError("matmul needs at least 1-d operands")
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + b.shape[-1:])
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ValueError(f"matmul batch axes of {a.shape} and {b.shape} do not broadcast") from None

    if b.ndim == 2:
        # stacked rows times one matrix: a single GEMM each way
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

        def fn2(g):
            g2 = g.reshape(-1, b.shape[1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make(out, (a, b), fn2, "matmul")

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), fn, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias, with weight shaped (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# -- structural ---------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    ndim = tensors[0].ndim
    ax = _check_axis(axis, ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != ref[i] for i in range(ndim) if i != ax):
            raise ValueError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, fn, "concat")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(_check_axis(ax, a.ndim) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    axes = list(range(a.ndim))
    i, j = _check_axis(ax1, a.ndim), _check_axis(ax2, a.ndim)
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(tuple(shape)), (a,), lambda g: (g.reshape(src),), "reshape")


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing."""
    src = a.shape

    def fn(g):
        out = np.zeros(src)
        out[index] += g
        return (out,)

    return _make(a.data[index], (a,), fn, "take")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(_check_axis(ax, a.ndim) for ax in axes)
    else:
        axes = tuple(range(a.ndim))

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[_check_axis(ax, a.ndim)] for ax in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = _check_axis(axis, a.ndim)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _make(y, (a,), fn, "softmax")


def layer_norm(a: Tensor, weight: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize along ``axis`` then apply the learnable scale/shift.

    ``weight`` and ``bias`` are 1-d with the extent of ``axis``.
    """
    ax = _check_axis(axis, a.ndim)
    n = a.shape[ax]
    if weight.shape != (n,) or bias.shape != (n,):
        raise ValueError(f"layer_norm: scale/shift must have shape ({n},), got {weight.shape}, {bias.shape}")
    bshape = [1] * a.ndim
    bshape[ax] = n
    w = weight.data.reshape(bshape)
    x = a.data
    mu = x.mean(axis=ax, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    xhat = xc * inv_std
    other = tuple(i for i in range(a.ndim) if i != ax)

    def fn(g):
        dxhat = g * w
        gx = inv_std * (
            dxhat - dxhat.mean(axis=ax, keepdims=True) - xhat * (dxhat * xhat).mean(axis=ax, keepdims=True)
        )
        gw = (g * xhat).sum(axis=other).reshape(n)
        gb = g.sum(axis=other).reshape(n)
        return gx, gw, gb

    out = xhat * w + bias.data.reshape(bshape)
    return _make(out, (a, weight, bias), fn, "layer_norm")


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout.  Exact identity in eval mode or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "dropout")


# -- spectral -----------------------------------------------------------------


@dataclass
class ComplexTensor:
    """Real and imaginary parts of a one-sided spectrum along ``axis``."""

    real: Tensor
    imag: Tensor
    n: int
    axis: int = -1

    def numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def _rfft_part(a: Tensor, axis: int, part: str) -> Tensor:
    n = a.shape[axis]
    spec = np.fft.rfft(a.data, axis=axis)
    data = spec.real if part == "real" else spec.imag

    def fn(g):
        # adjoint of the one-sided DFT: x_grad[t] = Re(sum_k G[k] e^{+2 pi i t k / n})
        G = g if part == "real" else 1j * g
        return (np.fft.ifft(G, n=n, axis=axis).real * n,)

    return _make(data, (a,), fn, "rfft_" + part)


def rfft(a: Tensor, axis: int = -1) -> ComplexTensor:
    """Real-to-complex FFT; n samples give n // 2 + 1 bins."""
    ax = _check_axis(axis, a.ndim)
    return ComplexTensor(_rfft_part(a, ax, "real"), _rfft_part(a, ax, "imag"), a.shape[ax], ax)


def irfft(z: ComplexTensor) -> Tensor:
    """Inverse of ``rfft``; imaginary parts of the DC and Nyquist bins are ignored."""
    n, ax = z.n, z.axis
    re, im = z.real, z.imag
    bins = n // 2 + 1
    if re.shape != im.shape or re.shape[ax] != bins:
        raise ValueError(f"irfft: expected {bins} bins on axis {ax}, got {re.shape} / {im.shape}")
    weight = np.full(bins, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    wshape = [1] * re.ndim
    wshape[ax] = bins
    weight = weight.reshape(wshape) / n

    def fn(g):
        r = np.fft.rfft(g, axis=ax)
        return weight * r.real, weight * r.imag

    return _make(np.fft.irfft(re.data + 1j * im.data, n=n, axis=ax), (re, im), fn, "irfft")


# -- backward -----------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from a scalar root."""
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward root is not attached to a computation record")
    order = _topological(root)
    # intermediate grads are rebuilt from scratch; leaves accumulate
    for node in order:
        if node._backward is not None:
            node.grad = None
    root.grad = np.ones(root.shape)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + g


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    epsilon: float = 1e-6,
    floor: float = 1e-2,
) -> float:
    """Largest disagreement between autodiff and central differences.

    Per element the error is |auto - numeric| / max(|auto|, |numeric|, floor),
    so gradients near zero are held to an absolute tolerance of
    ``tol * floor``.  ``f`` must rebuild its graph on every call.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-4], got {epsilon}")
    params = list(params)
    for p in params:
        p.grad = None
    root = f()
    backward(root)
    worst = 0.0
    for p in params:
        auto = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                up = f().item()
                flat[i] = orig - epsilon
                down = f().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2.0 * epsilon)
        a = auto.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst
