"""A small dense tensor type with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when any
input requires a gradient. Outside a tape everything runs as plain numpy,
which is what inference uses.

    with Tape() as tape:
        loss = tensor.sum(tensor.mul(x, x))
    backward(loss, tape)
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: Sequence[Tensor],
            backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    tape = Tape.active()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.nodes.append(_Node(out, tuple(inputs), backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x, b) -> Tensor:
    """``x[..., d] + b[d]``."""
    x, b = as_tensor(x), as_tensor(b)
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    d = b.shape[0]
    return _record(x.data + b.data, (x, b), lambda g: (g, g.reshape(-1, d).sum(axis=0)))


def gelu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record(kernels.gelu_forward(xd), (x,), lambda g: (kernels.gelu_backward(g, xd),))


def dropout(x, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or ``rng`` is None."""
    x = as_tensor(x)
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- reductions

def sum(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    return _record(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def weighted_sum_squares(x, weights: np.ndarray) -> Tensor:
    """``sum(weights * x**2)`` with ``weights`` a constant broadcastable to ``x``."""
    x = as_tensor(x)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), x.shape)
    xd = x.data
    return _record(np.asarray((w * xd * xd).sum()), (x,), lambda g: (2.0 * float(g) * w * xd,))


# ---------------------------------------------------------------- shape ops

def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _record(out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat_last(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: leading shapes {a.shape} and {b.shape} differ")
    k = a.shape[-1]
    return _record(np.concatenate([a.data, b.data], axis=-1), (a, b),
                   lambda g: (g[..., :k], g[..., k:]))


def take_rows(table, index: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[index]`` for an integer array ``index``."""
    table = as_tensor(table)
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.shape[0]}): "
                         f"min {index.min()}, max {index.max()}")
    rows, width = table.shape

    def back(g):
        out = np.zeros((rows, width))
        np.add.at(out, index.reshape(-1), g.reshape(-1, width))
        return (out,)

    return _record(table.data[index], (table,), back)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    ad, bd = a.data, b.data
    # a stack times one matrix is a single 2-D product
    flat = bd.ndim == 2
    if flat:
        out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + bd.shape[-1:])
    else:
        try:
            out = np.matmul(ad, bd)
        except ValueError as exc:
            raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from exc

    def back(g):
        ga = gb = None
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                ga = (g2 @ bd.T).reshape(ad.shape)
            if b.requires_grad:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g2
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape)
        return ga, gb

    return _record(out, (a, b), back)


def linear(x, weight, bias=None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add_bias(y, bias)


# ---------------------------------------------------------------- normalization / attention

def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape}/bias {bias.shape} must be ({d},)")
    shape = x.shape
    y, xhat, rstd = kernels.layer_norm_forward(x.data.reshape(-1, d), gain.data, bias.data, eps)
    gd = gain.data

    def back(g):
        dx, dgain, dbias = kernels.layer_norm_backward(g.reshape(-1, d), xhat, rstd, gd)
        return dx.reshape(shape), dgain, dbias

    return _record(y.reshape(shape), (x, gain, bias), back)


def masked_softmax(scores, mask) -> Tensor:
    """Softmax over the last axis restricted to keys where ``mask`` is true.

    ``mask`` is boolean with shape ``[K]`` (shared by every row) or
    ``[B, K]`` where ``B`` is the leading axis of ``scores``. Masked keys get
    probability exactly zero.
    """
    scores = as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    shape = scores.shape
    K = shape[-1]
    if mask.shape[-1] != K:
        raise ShapeError(f"masked_softmax: mask {mask.shape} does not match keys in {shape}")
    if mask.ndim == 1:
        mask2 = mask[None, :]
        s3 = scores.data.reshape(1, -1, K)
    elif mask.ndim == 2 and mask.shape[0] == shape[0]:
        mask2 = mask
        s3 = scores.data.reshape(shape[0], -1, K)
    else:
        raise ShapeError(f"masked_softmax: mask {mask.shape} incompatible with scores {shape}")
    if not mask2.any(axis=1).all():
        raise ValueError("masked_softmax: a row has every key masked (no valid keys)")
    p = kernels.masked_softmax_forward(s3, mask2).reshape(shape)

    def back(g):
        return (kernels.masked_softmax_backward(g.reshape(-1, K), p.reshape(-1, K)).reshape(shape),)

    return _record(p, (scores,), back)


# ---------------------------------------------------------------- backward

def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate ``d loss / d leaf`` into ``.grad`` of every leaf that requires grad."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    produced = {id(node.out) for node in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in produced:
                grads[key] = grads[key] + gi if key in grads else gi
            else:
                leaves[key] = inp
                grads[key] = grads[key] + gi if key in grads else np.array(gi, dtype=np.float64)
    for key, leaf in leaves.items():
        g = grads[key].reshape(leaf.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
