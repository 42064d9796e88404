"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a numpy array (32-bit by default, 64-bit allowed) and are treated
as immutable values.  Differentiable operations are recorded on the innermost
active :class:`Tape`; outside a tape every operation is a plain forward
computation and nothing is retained.

    >>> x = tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.gradient(loss, [x])[0].numpy()
    array([2., 4., 6.], dtype=float32)

Reductions and contractions (sum, matmul, convolutions, bce) accumulate in
float64 and cast the result back to the operands' dtype.  Gradients are also
accumulated in float64 on the tape.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, InvalidRangeError, NotScalarError, ShapeError
from .seeding import make_rng

DEFAULT_DTYPE = np.float32
BCE_EPS = 1e-7

_F64 = np.float64
_ids = itertools.count(1)
_local = threading.local()


class NotOnTapeError(DataError):
    pass


class Tensor:
    """An n-dimensional float array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "node_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.node_id = next(_ids)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __float__(self) -> float:
        return self.item()

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4, threshold=8)}{grad})"

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a nonzero scalar")
        if other == 0:
            raise ZeroDivisionError("division of a tensor by zero")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# --------------------------------------------------------------------------
# tape


@dataclass(frozen=True)
class Node:
    op: str
    out_id: int
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]

    @property
    def parent_ids(self) -> tuple[int, ...]:
        return tuple(p.node_id for p in self.parents)


class Tape:
    """Records differentiable operations while active (``with Tape() as t:``).

    Nodes are appended as operations execute, so the list is already in
    topological order.  A tape belongs to the thread that opened it.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._shapes: dict[int, tuple[int, ...]] = {}

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, op: str, out: Tensor, parents: tuple[Tensor, ...], vjp) -> None:
        self.nodes.append(Node(op, out.node_id, parents, vjp))
        self._shapes[out.node_id] = out.shape
        for p in parents:
            self._shapes.setdefault(p.node_id, p.shape)

    def gradient(self, loss: Tensor, sources: Iterable[Tensor]) -> list[Tensor]:
        """Gradients of ``loss`` w.r.t. ``sources`` (zeros where unreachable)."""
        grads = backward(loss, self)
        out = []
        for s in sources:
            g = grads.get(s.node_id)
            out.append(g if g is not None else Tensor._wrap(np.zeros(s.shape, dtype=s.dtype)))
        return out


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _result(op: str, value: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor._wrap(value, track)
    if track:
        tape._record(op, out, parents, vjp)
    return out


def backward(loss: Tensor, tape: Tape) -> dict[int, Tensor]:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns a map from node id to gradient for every tensor on the tape that
    the loss depends on and that requires a gradient (leaves included).
    Fan-out contributions are summed.
    """
    if loss.size != 1:
        raise NotScalarError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise NotOnTapeError("loss does not depend on any tensor that requires a gradient")
    if loss.node_id not in tape._shapes:
        # a bare leaf is its own (trivial) graph
        return {loss.node_id: Tensor._wrap(np.ones(loss.shape, dtype=loss.dtype))}

    acc: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape, dtype=_F64)}
    dtypes: dict[int, np.dtype] = {loss.node_id: loss.dtype}
    for node in reversed(tape.nodes):
        g = acc.get(node.out_id)
        if g is None:
            continue
        parent_grads = node.vjp(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pid = parent.node_id
            pg = np.asarray(pg, dtype=_F64)
            if pg.shape != parent.shape:
                pg = _unbroadcast(pg, parent.shape)
            if pid in acc:
                acc[pid] = acc[pid] + pg
            else:
                acc[pid] = pg
                dtypes[pid] = parent.dtype
    return {k: Tensor._wrap(v.astype(dtypes[k])) for k, v in acc.items()}


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x: Tensor, eps: float = 1e-4) -> Tensor:
    """Central-difference gradient of a scalar function, evaluated in float64."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=_F64)
    grad = np.empty_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        xp = base.copy()
        xp.reshape(-1)[i] += eps
        xm = base.copy()
        xm.reshape(-1)[i] -= eps
        fp = float(np.asarray(_scalar(f(Tensor._wrap(xp)))))
        fm = float(np.asarray(_scalar(f(Tensor._wrap(xm)))))
        flat[i] = (fp - fm) / (2.0 * eps)
    return Tensor._wrap(grad)


def _scalar(v):
    return v.data.reshape(-1)[0] if isinstance(v, Tensor) else v


# --------------------------------------------------------------------------
# helpers


def _dtype_of(*xs) -> np.dtype:
    return np.result_type(*[x.dtype for x in xs if isinstance(x, Tensor)])


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ShapeError(f"invalid shape {shape}: need at least one dimension, all positive")
    return shape


# --------------------------------------------------------------------------
# creation


def random_uniform(shape, lo: float, hi: float, seed: int, dtype=DEFAULT_DTYPE) -> Tensor:
    """Uniform samples on ``[lo, hi)`` from a Philox stream seeded by ``seed``."""
    shape = _check_shape(shape)
    if not lo < hi:
        raise InvalidRangeError(f"empty interval [{lo}, {hi})")
    u = make_rng(seed).random(shape)
    vals = (lo + (hi - lo) * u).astype(dtype)
    # rounding to the storage dtype can land exactly on hi
    top = np.nextafter(np.asarray(hi, dtype=dtype), np.asarray(lo, dtype=dtype))
    return Tensor._wrap(np.minimum(vals, top))


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    dt = _dtype_of(a, b)
    a, b = _lift(a, dt), _lift(b, dt)
    return _result("add", (a.data + b.data).astype(dt, copy=False), (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    dt = _dtype_of(a, b)
    a, b = _lift(a, dt), _lift(b, dt)
    return _result("sub", (a.data - b.data).astype(dt, copy=False), (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    dt = _dtype_of(a, b)
    a, b = _lift(a, dt), _lift(b, dt)
    ad, bd = a.data, b.data
    return _result("mul", (ad * bd).astype(dt, copy=False), (a, b), lambda g: (g * bd, g * ad))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        value = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _result("reshape", value, (x,), lambda g: (g.reshape(old),))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = np.sum(x.data, axis=axis, keepdims=keepdims, dtype=_F64).astype(x.dtype)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result("sum", value, (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


# --------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(x.data > 0, 1.0, alpha)
    return _result("leaky_relu", (x.data * slope).astype(x.dtype), (x,), lambda g: (g * slope,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, saturating at the representable values nearest 0 and 1."""
    z = x.data.astype(_F64)
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    dt = x.dtype
    lo = float(np.finfo(dt).tiny)
    hi = float(np.nextafter(dt.type(1), dt.type(0)))
    s = np.clip(s, lo, hi)
    return _result("sigmoid", s.astype(dt), (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data.astype(_F64))
    return _result("tanh", t.astype(x.dtype), (x,), lambda g: (g * (1.0 - t * t),))


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    dt = _dtype_of(a, b)
    a64, b64 = a.data.astype(_F64), b.data.astype(_F64)
    return _result("matmul", (a64 @ b64).astype(dt), (a, b), lambda g: (g @ b64.T, a64.T @ g))


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: N, C, H', W', kh, kw
    out = np.tensordot(win.astype(_F64), w.astype(_F64), axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2)


def _conv_input_grad(g: np.ndarray, w: np.ndarray, in_hw: tuple[int, int], stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`_conv_forward` in its input (col2im)."""
    n, _, ho, wo = g.shape
    c = w.shape[1]
    kh, kw = w.shape[2:]
    h, wd = in_hw
    hp = max(h + 2 * pad, (ho - 1) * stride + kh)
    wp = max(wd + 2 * pad, (wo - 1) * stride + kw)
    out = np.zeros((n, c, hp, wp), dtype=_F64)
    g64, w64 = g.astype(_F64), w.astype(_F64)
    # contribution of every kernel tap, shape N, C, H', W'
    taps = np.tensordot(g64, w64, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += taps[:, :, i, j]
    return out[:, :, pad:pad + h, pad:pad + wd]


def _conv_kernel_grad(x: np.ndarray, g: np.ndarray, kshape: tuple[int, ...], stride: int, pad: int) -> np.ndarray:
    kh, kw = kshape[2:]
    ho, wo = g.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return np.tensordot(g.astype(_F64), win.astype(_F64), axes=([0, 2, 3], [0, 2, 3]))


def _check_conv_args(x: Tensor, k: Tensor, stride: int, padding: int, in_axis: int) -> None:
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"expected 4-d input and kernels, got {x.shape} and {k.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    if x.shape[1] != k.shape[in_axis]:
        raise ShapeError(f"channel mismatch: input has {x.shape[1]}, kernels expect {k.shape[in_axis]}")


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation. ``x``: N×C×H×W, ``kernels``: F×C×kh×kw."""
    _check_conv_args(x, kernels, stride, padding, 1)
    h, w = x.shape[2:]
    kh, kw = kernels.shape[2:]
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    dt = _dtype_of(x, kernels)
    xd, kd = x.data, kernels.data
    value = _conv_forward(xd, kd, stride, padding).astype(dt)

    def vjp(g):
        gx = _conv_input_grad(g, kd, (h, w), stride, padding) if x.requires_grad else None
        gk = _conv_kernel_grad(xd, g, kd.shape, stride, padding) if kernels.requires_grad else None
        return gx, gk

    return _result("conv2d", value, (x, kernels), vjp)


def transposed_conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` in its input.

    ``x``: N×F×H×W, ``kernels``: F×C×kh×kw (the same array a matching
    ``conv2d`` would use), output N×C×H'×W' with
    ``H' = (H - 1)·stride - 2·padding + kh``.
    """
    _check_conv_args(x, kernels, stride, padding, 0)
    h, w = x.shape[2:]
    kh, kw = kernels.shape[2:]
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed convolution output would be {ho}x{wo}")
    dt = _dtype_of(x, kernels)
    xd, kd = x.data, kernels.data
    value = _conv_input_grad(xd, kd, (ho, wo), stride, padding).astype(dt)

    def vjp(g):
        gx = _conv_forward(g, kd, stride, padding)[:, :, :h, :w] if x.requires_grad else None
        # roles of input and output swap relative to conv2d
        gk = _conv_kernel_grad(g, xd, kd.shape, stride, padding) if kernels.requires_grad else None
        return gx, gk

    return _result("transposed_conv2d", value, (x, kernels), vjp)


# --------------------------------------------------------------------------
# losses


def bce(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy, predictions clamped to ``[1e-7, 1 - 1e-7]``."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != pred.shape:
        raise ShapeError(f"bce shape mismatch: pred {pred.shape}, target {t.shape}")
    t = t.astype(_F64)
    raw = pred.data.astype(_F64)
    p = np.clip(raw, BCE_EPS, 1.0 - BCE_EPS)
    inside = (raw >= BCE_EPS) & (raw <= 1.0 - BCE_EPS)
    n = max(p.size, 1)
    value = -np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))

    def vjp(g):
        return (g * inside * (-(t / p) + (1.0 - t) / (1.0 - p)) / n,)

    return _result("bce", np.asarray(value, dtype=pred.dtype), (pred,), vjp)


def clamped_log(x: Tensor, eps: float = BCE_EPS) -> Tensor:
    """``log(clip(x, eps, 1 - eps))``; used for probabilities."""
    raw = x.data.astype(_F64)
    p = np.clip(raw, eps, 1.0 - eps)
    inside = (raw >= eps) & (raw <= 1.0 - eps)
    return _result("clamped_log", np.log(p).astype(x.dtype), (x,), lambda g: (g * inside / p,))
