"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when produced by a primitive
with at least one input that requires grad, remembers its parents and a
closure that maps the output gradient to one gradient per parent.
:func:`backward` replays those closures in reverse topological order.

Shapes never broadcast implicitly. The only exception is a Python scalar
(or 0-d tensor) operand; anything else must go through :func:`expand`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from mtsnas import kernels

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "einsum",
    "linear",
    "weighted_sum",
    "conv1d",
    "avgpool",
    "concat",
    "reshape",
    "transpose",
    "expand",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "sum",
    "mean",
]

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

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
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar(self)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_nonscalar(t: Tensor):
    raise ShapeError(f"item: expected a single-element tensor, got shape {t.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    """Wrap ``data`` and record it on the tape when any parent needs grad."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    return out


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_scalar(g: np.ndarray, t: Tensor) -> np.ndarray:
    # gradient w.r.t. a 0-d operand that was applied elementwise
    if _is_scalar(t) and g.ndim != 0:
        return np.asarray(g.sum())
    return g


# ----------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("add", a, b)

    def grad_fn(g):
        return _reduce_scalar(g, a), _reduce_scalar(g, b)

    return _make(a.data + b.data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("sub", a, b)

    def grad_fn(g):
        return _reduce_scalar(g, a), _reduce_scalar(-g, b)

    return _make(a.data - b.data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("mul", a, b)

    def grad_fn(g):
        ga = _reduce_scalar(g * b.data, a) if a.requires_grad else None
        gb = _reduce_scalar(g * a.data, b) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("div", a, b)
    out = a.data / b.data

    def grad_fn(g):
        ga = g / b.data
        gb = -g * out / b.data
        return _reduce_scalar(ga, a), _reduce_scalar(gb, b)

    return _make(out, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


# ----------------------------------------------------------------------
# contractions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading (batch) dimensions must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), grad_fn)


def _parse_einsum(spec: str, n_ops: int) -> tuple[list[str], str]:
    if "->" not in spec:
        raise ValueError(f"einsum: explicit output required, got {spec!r}")
    lhs, out = spec.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != n_ops:
        raise ValueError(f"einsum: {spec!r} names {len(ins)} operands, got {n_ops}")
    for sub in ins:
        if len(set(sub)) != len(sub):
            raise ValueError(f"einsum: repeated index within operand in {spec!r}")
    return ins, out


def einsum(spec: str, *operands: Tensor) -> Tensor:
    """Explicit-output einsum over one or two tensors.

    Every index of an operand must appear in the output or in the other
    operand, so each operand gradient is itself a single einsum.
    """
    ins, out = _parse_einsum(spec, len(operands))
    sizes: dict[str, int] = {}
    for sub, t in zip(ins, operands):
        if len(sub) != t.ndim:
            raise ShapeError(f"einsum {spec!r}: operand {sub!r} vs shape {t.shape}")
        for ch, n in zip(sub, t.shape):
            if sizes.setdefault(ch, n) != n:
                raise ShapeError(
                    f"einsum {spec!r}: index {ch!r} has sizes {sizes[ch]} and {n}; "
                    f"shapes {[o.shape for o in operands]}"
                )
    for i, sub in enumerate(ins):
        others = out + "".join(s for j, s in enumerate(ins) if j != i)
        missing = [ch for ch in sub if ch not in others]
        if missing:
            raise ValueError(f"einsum {spec!r}: index {missing} of operand {i} is summed out alone")

    arrays = [t.data for t in operands]
    result = np.einsum(spec, *arrays, optimize=len(arrays) > 1)

    def grad_fn(g):
        grads = []
        for i, sub in enumerate(ins):
            if not operands[i].requires_grad:
                grads.append(None)
                continue
            rest = [(s, arrays[j]) for j, s in enumerate(ins) if j != i]
            gspec = ",".join([out] + [s for s, _ in rest]) + "->" + sub
            grads.append(np.einsum(gspec, g, *[a for _, a in rest]))
        return tuple(grads)

    return _make(result, operands, grad_fn)


def weighted_sum(weights: Tensor, terms: Sequence[Tensor], index: Sequence[int] | None = None) -> Tensor:
    """``sum_i weights[index[i]] * terms[i]`` for a 1-D ``weights``.

    ``index`` defaults to ``range(len(terms))``; weights that no term refers
    to contribute nothing (and receive zero gradient).
    """
    if not terms:
        raise ShapeError("weighted_sum: no terms")
    index = list(range(len(terms))) if index is None else list(index)
    if weights.ndim != 1 or len(index) != len(terms) or max(index) >= weights.shape[0]:
        raise ShapeError(f"weighted_sum: weights {weights.shape} vs {len(terms)} terms at {index}")
    shape = terms[0].shape
    for t in terms[1:]:
        if t.shape != shape:
            raise ShapeError(f"weighted_sum: shape mismatch {shape} vs {t.shape}")
    w = weights.data
    out = w[index[0]] * terms[0].data
    for k, t in zip(index[1:], terms[1:]):
        out += w[k] * t.data

    def grad_fn(g):
        gw = None
        if weights.requires_grad:
            gw = np.zeros_like(w)
            flat = g.reshape(-1)
            for k, t in zip(index, terms):
                gw[k] += flat @ t.data.reshape(-1)
        return (gw,) + tuple(w[k] * g if t.requires_grad else None for k, t in zip(index, terms))

    return _make(out, (weights, *terms), grad_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ w + b`` with ``w`` of shape (in, out)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: shape mismatch {x.shape} vs weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} vs weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(lead + (w.shape[1],))
    parents = (x, w) if b is None else (x, w, b)

    def grad_fn(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0) if b.requires_grad else None

    return _make(out, parents, grad_fn)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, axis: int = -2) -> Tensor:
    """Length-preserving 1-D convolution along ``axis``; channels on the last axis.

    ``w`` has shape (kernel, in_channels, out_channels) with an odd kernel
    size and symmetric zero padding. Every other axis is treated as an
    independent series, so no mixing happens across them.
    """
    if x.ndim < 2:
        raise ShapeError(f"conv1d: input needs at least 2 dims, got {x.shape}")
    ax = axis % x.ndim
    if ax == x.ndim - 1:
        raise ShapeError("conv1d: cannot convolve along the channel axis")
    if w.ndim != 3 or w.shape[1] != x.shape[-1] or w.shape[0] % 2 == 0:
        raise ShapeError(f"conv1d: shape mismatch {x.shape} vs kernel {w.shape}")
    if b is not None and b.shape != (w.shape[2],):
        raise ShapeError(f"conv1d: bias shape {b.shape} vs kernel {w.shape}")

    moved = ax != x.ndim - 2
    xm = np.moveaxis(x.data, ax, -2) if moved else x.data
    moved_shape = xm.shape
    length, cin = moved_shape[-2], moved_shape[-1]
    x3 = np.ascontiguousarray(xm).reshape(-1, length, cin)
    out3, cache = kernels.conv1d_forward(x3, w.data)
    if b is not None:
        out3 += b.data
    out = out3.reshape(moved_shape[:-1] + (w.shape[2],))
    if moved:
        out = np.moveaxis(out, -2, ax)
    parents = (x, w) if b is None else (x, w, b)

    def grad_fn(g):
        gm = np.moveaxis(g, ax, -2) if moved else g
        gm = np.ascontiguousarray(gm).reshape(-1, length, w.shape[2])
        gx3, gw = kernels.conv1d_backward(cache, w.data, gm, x.requires_grad, w.requires_grad)
        gx = None
        if gx3 is not None:
            gx = gx3.reshape(moved_shape)
            if moved:
                gx = np.moveaxis(gx, -2, ax)
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=(0, 1)) if b.requires_grad else None

    return _make(out, parents, grad_fn)


def avgpool(x: Tensor, axis: int = -2, window: int = 2) -> Tensor:
    """Non-overlapping average pooling (stride = window) along ``axis``."""
    ax = axis % x.ndim
    n = x.shape[ax]
    if n % window:
        raise ShapeError(f"avgpool: axis length {n} not divisible by window {window}")
    split = x.shape[:ax] + (n // window, window) + x.shape[ax + 1 :]
    out = x.data.reshape(split).mean(axis=ax + 1)

    def grad_fn(g):
        gx = np.repeat(g / window, window, axis=ax)
        return (gx,)

    return _make(out, (x,), grad_fn)


# ----------------------------------------------------------------------
# structural


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no tensors")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or t.shape[:ax] + t.shape[ax + 1 :] != ref.shape[:ax] + ref.shape[ax + 1 :]:
            raise ShapeError(f"concat: shape mismatch {ref.shape} vs {t.shape} on axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, grad_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort([a % x.ndim for a in axes]))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``x`` to ``shape`` (numpy rules); backward sums."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise ShapeError(f"expand: cannot broadcast {x.shape} to {shape}") from exc
    lead = len(shape) - x.ndim
    kept = tuple(i + lead for i, n in enumerate(x.shape) if n == 1 and shape[i + lead] != 1)

    def grad_fn(g):
        gx = g.sum(axis=tuple(range(lead))) if lead else g
        if kept:
            gx = gx.sum(axis=tuple(k - lead for k in kept), keepdims=True)
        return (gx.reshape(x.shape),)

    return _make(np.ascontiguousarray(out), (x,), grad_fn)


# ----------------------------------------------------------------------
# nonlinearities


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), grad_fn)


# ----------------------------------------------------------------------
# reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), grad_fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ----------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tensor that requires grad")
    order = _topo_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=DTYPE, copy=True)
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg

