"""Tape-based reverse-mode autodiff over numpy arrays.

Each op builds its output eagerly and attaches a closure that pushes the
output gradient back into its inputs.  ``Tensor.backward`` walks the graph
in reverse topological order.  Convolutions use im2col so the heavy lifting
is a single matmul per call; reductions happen in a fixed order, which keeps
forward and backward passes bit-reproducible at a fixed BLAS thread count.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch

_DTYPE = np.float32
_GRAD = True


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference)."""
    global _GRAD
    old, _GRAD = _GRAD, False
    try:
        yield
    finally:
        _GRAD = old


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype new tensors are created with (tests use float64)."""
    global _DTYPE
    old, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple["Tensor", ...] = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or (_GRAD and any(p.requires_grad for p in _parents))
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def _acc(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise ShapeMismatch(f"gradient {g.shape} does not match tensor {self.data.shape}")
        self.grad = g.copy() if self.grad is None else self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._acc(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior buffers are no longer needed
                    node.grad = None if node is not self else node.grad


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N, C, H, W) input with (O, C, k, k) weights, zero padding."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-D input and weights")
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2:
        raise ShapeMismatch(f"input has {c} channels, weights expect {ci} (kernel {k}x{k2})")
    s, p = int(stride), int(padding)
    if s < 1 or (h + 2 * p - k) % s or (wd + 2 * p - k) % s or h + 2 * p < k or wd + 2 * p < k:
        raise ShapeMismatch(f"kernel {k}, stride {s}, padding {p} do not tile a {h}x{wd} input")
    ho, wo = (h + 2 * p - k) // s + 1, (wd + 2 * p - k) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)
    wm = w.data.reshape(o, c * k * k)
    out = (wm @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g: np.ndarray) -> None:
        gm = g.transpose(1, 0, 2, 3).reshape(o, n * ho * wo)
        if w.requires_grad:
            w._acc((gm @ cols.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._acc(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (wm.T @ gm).reshape(c, k, k, n, ho, wo)
            dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, i, j].transpose(1, 0, 2, 3)
            x._acc(dxp[:, :, p:p + h, p:p + wd])

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, _parents=parents, _backward=backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution with kernel == stride (non-overlapping upsampling).

    Weights are (C_in, C_out, k, k); every input pixel paints one k x k
    output block, so H and W grow by the factor k.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch("conv_transpose2d expects 4-D input and weights")
    n, c, h, wd = x.shape
    ci, o, k, k2 = w.shape
    if ci != c or k != k2:
        raise ShapeMismatch(f"input has {c} channels, weights expect {ci}")
    if k != stride:
        raise ShapeMismatch("only kernel == stride transposed convolutions are supported")
    xm = x.data.transpose(1, 0, 2, 3).reshape(c, n * h * wd)
    wm = w.data.reshape(c, o * k * k)
    y = (wm.T @ xm).reshape(o, k, k, n, h, wd)
    out = y.transpose(3, 0, 4, 1, 5, 2).reshape(n, o, h * k, wd * k)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g: np.ndarray) -> None:
        gy = g.reshape(n, o, h, k, wd, k).transpose(1, 3, 5, 0, 2, 4).reshape(o * k * k, n * h * wd)
        if w.requires_grad:
            w._acc((xm @ gy.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._acc(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x._acc((wm @ gy).reshape(c, n, h, wd).transpose(1, 0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, _parents=parents, _backward=backward)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2.  Ties route the gradient to the first maximum."""
    n, c, h, wd = x.shape
    if h % 2 or wd % 2:
        raise ShapeMismatch(f"max_pool2d needs even spatial dims, got {h}x{wd}")
    r = x.data.reshape(n, c, h // 2, 2, wd // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, wd // 2, 4)
    idx = r.argmax(axis=-1)
    out = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray) -> None:
        gr = np.zeros(r.shape, dtype=g.dtype)
        np.put_along_axis(gr, idx[..., None], g[..., None], axis=-1)
        x._acc(gr.reshape(n, c, h // 2, wd // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, wd))

    return Tensor(out, _parents=(x,), _backward=backward)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, wd = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g: np.ndarray) -> None:
        x._acc(np.broadcast_to(g[:, :, None, None] / (h * wd), x.shape))

    return Tensor(out, _parents=(x,), _backward=backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """(N, I) @ (O, I).T + b."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weights {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g: np.ndarray) -> None:
        if w.requires_grad:
            w._acc(g.T @ x.data)
        if b is not None and b.requires_grad:
            b._acc(g.sum(axis=0))
        if x.requires_grad:
            x._acc(g @ w.data)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, _parents=parents, _backward=backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = list(xs)
    ref = xs[0].shape
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeMismatch(f"cannot concatenate {ref} and {t.shape} along axis {axis}")
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(lo), int(hi))
                t._acc(g[tuple(sl)])

    return Tensor(out, _parents=tuple(xs), _backward=backward)


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return Tensor(np.where(pos, x.data, 0), _parents=(x,), _backward=lambda g: x._acc(g * pos))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype)
    return Tensor(s, _parents=(x,), _backward=lambda g: x._acc(g * s * (1 - s)))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        x._acc(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return Tensor(s, _parents=(x,), _backward=backward)


# ---------------------------------------------------------------------------
# losses (mean-reduced scalars)
# ---------------------------------------------------------------------------

BCE_EPS = 1e-7


def _check_same(pred: Tensor, target: np.ndarray) -> np.ndarray:
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {t.shape}")
    return t


def mse_loss(pred: Tensor, target) -> Tensor:
    t = _check_same(pred, target)
    diff = pred.data - t
    val = np.mean(diff * diff)
    return Tensor(val, _parents=(pred,), _backward=lambda g: pred._acc(g * 2 * diff / diff.size))


def bce_loss(pred: Tensor, target) -> Tensor:
    """Binary cross-entropy on probabilities (clipped to [eps, 1 - eps])."""
    t = _check_same(pred, target)
    p = np.clip(pred.data, BCE_EPS, 1 - BCE_EPS)
    val = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))

    def backward(g: np.ndarray) -> None:
        pred._acc(g * (p - t) / (p * (1 - p)) / p.size)

    return Tensor(val, _parents=(pred,), _backward=backward)


def ce_loss(logits: Tensor, target) -> Tensor:
    """Softmax cross-entropy over axis 1; ``target`` is one-hot (or a distribution) of the same shape."""
    t = _check_same(logits, target)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    val = -(t * logp).sum() / n

    def backward(g: np.ndarray) -> None:
        logits._acc(g * (np.exp(logp) * t.sum(axis=1, keepdims=True) - t) / n)

    return Tensor(val, _parents=(logits,), _backward=backward)


LOSSES = {"mse": mse_loss, "bce": bce_loss, "ce": ce_loss}


def loss(kind: str, pred: Tensor, target) -> Tensor:
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}") from None
    return fn(pred, target)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
