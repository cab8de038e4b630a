"""Small reverse-mode autodiff over dense numpy arrays.

Every differentiable value is a :class:`Tensor`. Operations whose inputs
require gradients append a node to the shared :class:`Tape`; calling
:func:`backward` on a scalar tensor walks that tape in reverse and returns
the gradients of all trainable leaves.

Only the operations the enhancement network needs are provided. Images are
rank-3 arrays laid out as (channels, height, width).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are structurally incompatible."""


VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Node:
    id: int
    name: str
    inputs: tuple[int | None, ...]
    vjp: VJP | None


class Tape:
    """Ordered record of operations. Single writer, append only."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def variable(self, data, name: str = "leaf") -> Tensor:
        """Register a trainable leaf."""
        node = Node(len(self.nodes), name, (), None)
        self.nodes.append(node)
        return Tensor(data, requires_grad=True, tape=self, node_id=node.id)

    def record(self, name: str, out: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
        ids = tuple(t.node_id if t.requires_grad else None for t in inputs)
        node = Node(len(self.nodes), name, ids, vjp)
        self.nodes.append(node)
        return Tensor(out, requires_grad=True, tape=self, node_id=node.id)

    def clear(self):
        self.nodes.clear()


class Tensor:
    __slots__ = ("data", "requires_grad", "tape", "node_id")
    __array_priority__ = 100  # ndarray <op> Tensor defers to Tensor

    def __init__(self, data, requires_grad: bool = False, tape: Tape | None = None,
                 node_id: int | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


@dataclass
class ChannelStat:
    """Per-channel global statistic, kept as a (C, 1, 1) tensor for broadcasting.

    ``arg_index`` holds the (row, col) of the extremum per channel for
    ``maximum``/``minimum``; first occurrence wins under ties.
    """

    values: Tensor
    kind: str
    arg_index: np.ndarray | None = None

    @property
    def per_channel(self) -> np.ndarray:
        return self.values.data.reshape(-1)

    def __len__(self):
        return self.values.shape[0]


Operand = Tensor | ChannelStat | np.ndarray | float | int


def as_tensor(x: Operand) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, ChannelStat):
        return x.values
    return Tensor(x)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.requires_grad:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = t.tape
    return tape


def custom_op(name: str, out: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    """Wrap a forward result with a hand-written vector-Jacobian product.

    ``vjp(grad_out)`` returns one gradient per input (``None`` to skip).
    Constant inputs are never handed gradients.
    """
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(name, out, inputs, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data + b.data
    return custom_op("add", out, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data - b.data
    return custom_op("sub", out, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data * b.data
    return custom_op("mul", out, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape),
                                _unbroadcast(g * a.data, b.shape)))


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return custom_op("div", out, (a, b), vjp)


def elementwise(a: Tensor, b: Operand, op: str) -> Tensor:
    """``a ⊕ b`` or ``a ⊗ b`` with per-channel broadcasting of ``b``."""
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def reciprocal(x: Operand, eps: float = 0.0) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (x.data + eps)
    return custom_op("reciprocal", out, (x,), lambda g: (-g * out * out,))


def tanh_act(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return custom_op("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def abs_(x: Tensor) -> Tensor:
    return custom_op("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clamp(x: Tensor, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    """Clip to [lo, hi]; gradient passes through inside the range only."""
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return custom_op("clamp", out, (x,), lambda g: (g * inside,))


def sum_all(x: Tensor) -> Tensor:
    out = np.full((1, 1, 1), x.data.sum())
    return custom_op("sum", out, (x,), lambda g: (np.full(x.shape, g.item()),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.full((1, 1, 1), x.data.sum() / n)
    return custom_op("mean", out, (x,), lambda g: (np.full(x.shape, g.item() / n),))


def channel_mean(x: Tensor) -> Tensor:
    """Per-channel mean over (H, W), shape (C, 1, 1)."""
    return global_stat(x, "average").values


def take_channels(x: Tensor, index: Sequence[int]) -> Tensor:
    index = list(index)
    out = x.data[index]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return custom_op("take", out, (x,), vjp)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if len({p.shape[1:] for p in parts}) != 1:
        raise ShapeError("channel concat needs equal spatial shapes")
    out = np.concatenate([p.data for p in parts], axis=0)
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return custom_op("concat", out, parts, vjp)


def _check_image(x: Tensor, what: str):
    if x.data.ndim != 3:
        raise ShapeError(f"{what}: expected (C, H, W), got {x.shape}")


def pointwise_conv(x: Tensor, weight: Operand, bias: Operand) -> Tensor:
    """1x1 convolution: ``out[c] = sum_k weight[c, k] * x[k] + bias[c]``."""
    weight, bias = as_tensor(weight), as_tensor(bias)
    _check_image(x, "pointwise_conv")
    c = x.shape[0]
    if weight.shape != (c, c) or bias.shape != (c,):
        raise ShapeError(
            f"pointwise_conv: input has {c} channels, weight {weight.shape}, bias {bias.shape}")
    out = np.einsum("ck,khw->chw", weight.data, x.data) + bias.data[:, None, None]

    def vjp(g):
        return (np.einsum("ck,chw->khw", weight.data, g),
                np.einsum("chw,khw->ck", g, x.data),
                g.sum(axis=(1, 2)))

    return custom_op("pointwise_conv", out, (x, weight, bias), vjp)


def _patches3x3(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    # (C, 3, 3, H, W) view stack of the zero-padded input
    return np.stack([np.stack([xp[:, ky:ky + h, kx:kx + w] for kx in range(3)], axis=1)
                     for ky in range(3)], axis=1)


def conv3x3(x: Tensor, weight: Operand, bias: Operand) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1. Weight is (out, in, 3, 3)."""
    weight, bias = as_tensor(weight), as_tensor(bias)
    _check_image(x, "conv3x3")
    c, h, w = x.shape
    if weight.data.ndim != 4 or weight.shape[1:] != (c, 3, 3):
        raise ShapeError(f"conv3x3: input has {c} channels, weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv3x3: bias {bias.shape} for {weight.shape[0]} outputs")
    patches = _patches3x3(np.pad(x.data, ((0, 0), (1, 1), (1, 1))), h, w)
    out = np.einsum("oikl,iklhw->ohw", weight.data, patches) + bias.data[:, None, None]

    def vjp(g):
        gxp = np.zeros((c, h + 2, w + 2))
        for ky in range(3):
            for kx in range(3):
                gxp[:, ky:ky + h, kx:kx + w] += np.einsum("oi,ohw->ihw", weight.data[:, :, ky, kx], g)
        return (gxp[:, 1:-1, 1:-1],
                np.einsum("ohw,iklhw->oikl", g, patches),
                g.sum(axis=(1, 2)))

    return custom_op("conv3x3", out, (x, weight, bias), vjp)


def global_stat(x: Tensor, kind: str) -> ChannelStat:
    """Per-channel average, maximum or minimum over the spatial extent."""
    _check_image(x, "global_stat")
    c, h, w = x.shape
    if h * w < 1:
        raise ShapeError("global_stat on an empty image")
    flat = x.data.reshape(c, -1)
    if kind == "average":
        out = flat.mean(axis=1).reshape(c, 1, 1)
        n = h * w
        values = custom_op("gap", out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))
        return ChannelStat(values, kind)
    if kind == "maximum":
        arg = flat.argmax(axis=1)
    elif kind == "minimum":
        arg = flat.argmin(axis=1)
    else:
        raise ValueError(f"unknown statistic {kind!r}")
    rows = np.arange(c)
    out = flat[rows, arg].reshape(c, 1, 1)

    def vjp(g):
        gx = np.zeros((c, h * w))
        gx[rows, arg] = g.reshape(c)
        return (gx.reshape(x.shape),)

    values = custom_op("gmp" if kind == "maximum" else "gmin", out, (x,), vjp)
    return ChannelStat(values, kind, np.stack(np.unravel_index(arg, (h, w)), axis=1))


def minmax_stretch(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-channel global stretch ``(x - min) / (max - min)``.

    Channels whose range is below ``eps`` become the constant 0.5 and pass
    no gradient.
    """
    _check_image(x, "minmax_stretch")
    c, h, w = x.shape
    flat = x.data.reshape(c, -1)
    rows = np.arange(c)
    amin, amax = flat.argmin(axis=1), flat.argmax(axis=1)
    lo, hi = flat[rows, amin], flat[rows, amax]
    span = hi - lo
    flat_ch = span < eps
    safe = np.where(flat_ch, 1.0, span)
    out = (flat - lo[:, None]) / safe[:, None]
    out[flat_ch] = 0.5

    def vjp(g):
        g = g.reshape(c, -1)
        g = np.where(flat_ch[:, None], 0.0, g)
        gx = g / safe[:, None]
        # d/dmin = sum g * (y - 1) / span ; d/dmax = -sum g * y / span
        gx[rows, amin] += (g * (out - 1.0)).sum(axis=1) / safe
        gx[rows, amax] -= (g * out).sum(axis=1) / safe
        return (gx.reshape(x.shape),)

    return custom_op("stretch", out.reshape(x.shape), (x,), vjp)


class Gradients(dict):
    """Leaf gradients keyed by node id; also indexable by the leaf tensor."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node_id
        return super().__getitem__(key)

    def of(self, t: Tensor) -> np.ndarray:
        g = self.get(t.node_id) if t.requires_grad else None
        return np.zeros(t.shape) if g is None else g


def backward(loss: Tensor) -> Gradients:
    """Gradients of a scalar ``loss`` w.r.t. every trainable leaf it depends on.

    Accumulation follows reverse tape order, so results are deterministic.
    Nodes recorded after ``loss`` (e.g. a second forward pass) are ignored.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return Gradients()
    nodes = loss.tape.nodes
    pending: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    grads = Gradients()
    for node in reversed(nodes[:loss.node_id + 1]):
        g = pending.pop(node.id, None)
        if g is None:
            continue
        if node.vjp is None:
            grads[node.id] = g
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if inp is None or gi is None:
                continue
            if inp in pending:
                pending[inp] = pending[inp] + gi
            else:
                pending[inp] = np.asarray(gi, dtype=DTYPE)
    return grads
