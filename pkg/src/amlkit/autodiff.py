"""Dense tensors and reverse-mode automatic differentiation.

Values are float64 numpy arrays wrapped in graph nodes. Each primitive
records its parents and a backward closure; `backward` runs the chain rule
over an iterative topological order, so deep recurrent graphs do not hit
the recursion limit.

A graph is owned by one worker at a time. Parameter values are replaced
(never mutated in place) by the optimizer, so published snapshots stay
valid for concurrent readers.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class Node:
    """One value in the differentiation graph."""

    __slots__ = ("value", "grad", "parents", "op", "needs_grad", "name", "_backward")

    def __init__(self, value, parents=(), backward=None, op="const",
                 needs_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.parents: tuple[Node, ...] = tuple(parents)
        self._backward: Callable | None = backward
        self.op = op
        self.needs_grad = bool(needs_grad) or any(p.needs_grad for p in self.parents)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError(f"item() requires a scalar node, got shape {self.shape}")
        return float(self.value.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Node(op={self.op}, shape={self.shape}{tag})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def constant(x) -> Node:
    return Node(x, op="const")


def parameter(values, name: str | None = None) -> Node:
    return Node(values, needs_grad=True, op="param", name=name)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Node, b: Node) -> None:
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast("add", a, b)

    def bwd(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Node(a.value + b.value, (a, b), bwd, "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast("sub", a, b)

    def bwd(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return Node(a.value - b.value, (a, b), bwd, "sub")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast("mul", a, b)

    def bwd(g):
        return (_unbroadcast(g * b.value, a.value.shape),
                _unbroadcast(g * a.value, b.value.shape))

    return Node(a.value * b.value, (a, b), bwd, "mul")


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast("div", a, b)

    def bwd(g):
        ga = g / b.value
        gb = -g * a.value / (b.value * b.value)
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return Node(a.value / b.value, (a, b), bwd, "div")


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.value.shape[-1] != b.value.shape[-2]:
        raise ValueError(f"matmul: inner dimensions of {a.shape} and {b.shape} do not match")

    def bwd(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return Node(a.value @ b.value, (a, b), bwd, "matmul")


def conv1d(signal, kernel) -> Node:
    """1-D convolution (flipped kernel), stride 1, zero-padded to keep length.

    Accepts a [length] signal with a [width] kernel, or a batched
    [batch, channels_in, length] signal with a [channels_out, channels_in,
    width] kernel.
    """
    x, w = as_node(signal), as_node(kernel)
    if x.value.ndim == 1 and w.value.ndim == 1:
        xv = x.value[None, None, :]
        wv = w.value[None, None, :]
        flat = True
    elif x.value.ndim == 3 and w.value.ndim == 3:
        xv, wv = x.value, w.value
        flat = False
    else:
        raise ValueError(f"conv1d: unsupported ranks for shapes {x.shape} and {w.shape}")
    batch, cin, length = xv.shape
    cout, wcin, width = wv.shape
    if wcin != cin:
        raise ValueError(f"conv1d: channel mismatch between signal {x.shape} and kernel {w.shape}")

    pad_right = (width - 1) // 2
    pad_left = width - 1 - pad_right
    xp = np.pad(xv, ((0, 0), (0, 0), (pad_left, pad_right)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, width, axis=2)
    wflip = wv[:, :, ::-1]
    out = np.einsum("bclk,ock->bol", windows, wflip)

    def bwd(g):
        g3 = g[None, None, :] if flat else g
        gxp = np.zeros_like(xp)
        for k in range(width):
            gxp[:, :, k:k + length] += np.einsum("bol,oc->bcl", g3, wflip[:, :, k])
        gx = gxp[:, :, pad_left:pad_left + length]
        gw = np.einsum("bol,bclk->ock", g3, windows)[:, :, ::-1]
        if flat:
            return gx[0, 0], gw[0, 0]
        return gx, gw

    return Node(out[0, 0] if flat else out, (x, w), bwd, "conv1d")


def maxpool2(x) -> Node:
    """Width-2, stride-2 max pooling over the last axis; length-1 input passes through."""
    xn = as_node(x)
    if xn.value.ndim == 1:
        xv = xn.value[None, None, :]
        flat = True
    elif xn.value.ndim == 3:
        xv = xn.value
        flat = False
    else:
        raise ValueError(f"maxpool2: expected 1-D or 3-D input, got shape {xn.shape}")
    batch, channels, length = xv.shape
    if length < 2:
        return Node(xn.value, (xn,), lambda g: (g,), "maxpool2")
    m = (length // 2) * 2
    pairs = xv[:, :, :m].reshape(batch, channels, m // 2, 2)
    arg = np.argmax(pairs, axis=3)
    out = np.take_along_axis(pairs, arg[..., None], axis=3)[..., 0]

    def bwd(g):
        g3 = g[None, None, :] if flat else g
        gp = np.zeros((batch, channels, m // 2, 2))
        np.put_along_axis(gp, arg[..., None], g3[..., None], axis=3)
        gx = np.zeros_like(xv)
        gx[:, :, :m] = gp.reshape(batch, channels, m)
        return (gx[0, 0] if flat else gx,)

    return Node(out[0, 0] if flat else out, (xn,), bwd, "maxpool2")


def relu(x) -> Node:
    xn = as_node(x)
    mask = xn.value > 0

    def bwd(g):
        return (g * mask,)

    return Node(np.where(mask, xn.value, 0.0), (xn,), bwd, "relu")


def tanh(x) -> Node:
    xn = as_node(x)
    t = np.tanh(xn.value)

    def bwd(g):
        return (g * (1.0 - t * t),)

    return Node(t, (xn,), bwd, "tanh")


def sigmoid(x) -> Node:
    xn = as_node(x)
    v = xn.value
    t = np.exp(-np.abs(v))  # overflow-safe in both tails
    s = np.where(v >= 0, 1.0 / (1.0 + t), t / (1.0 + t))

    def bwd(g):
        return (g * s * (1.0 - s),)

    return Node(s, (xn,), bwd, "sigmoid")


def exp(x) -> Node:
    xn = as_node(x)
    v = np.exp(xn.value)

    def bwd(g):
        return (g * v,)

    return Node(v, (xn,), bwd, "exp")


def log(x) -> Node:
    xn = as_node(x)

    def bwd(g):
        return (g / xn.value,)

    return Node(np.log(xn.value), (xn,), bwd, "log")


def concat(parts: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(p) for p in parts]
    if not nodes:
        raise ValueError("concat: need at least one input")
    sizes = [n.value.shape[axis] for n in nodes]
    value = np.concatenate([n.value for n in nodes], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for i in range(len(nodes)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return Node(value, tuple(nodes), bwd, "concat")


def narrow(x, axis: int, start: int, length: int) -> Node:
    """Contiguous slice of `length` entries along `axis`."""
    xn = as_node(x)
    if not (0 <= start and start + length <= xn.value.shape[axis]):
        raise ValueError(f"narrow: slice [{start}:{start + length}] out of range for "
                         f"shape {xn.shape} on axis {axis}")
    sl = [slice(None)] * xn.value.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(g):
        gx = np.zeros_like(xn.value)
        gx[sl] = g
        return (gx,)

    return Node(xn.value[sl], (xn,), bwd, "narrow")


def reshape(x, shape) -> Node:
    xn = as_node(x)

    def bwd(g):
        return (g.reshape(xn.value.shape),)

    return Node(xn.value.reshape(shape), (xn,), bwd, "reshape")


def _spread(g: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Node:
    xn = as_node(x)
    value = xn.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        return (np.array(_spread(g, xn.value.shape, axis, keepdims)),)

    return Node(value, (xn,), bwd, "reduce_sum")


def reduce_mean(x, axis=None, keepdims: bool = False) -> Node:
    xn = as_node(x)
    count = xn.value.size if axis is None else xn.value.shape[axis]
    value = xn.value.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        return (_spread(g, xn.value.shape, axis, keepdims) / count,)

    return Node(value, (xn,), bwd, "reduce_mean")


def l2_norm(x, axis: int = -1, keepdims: bool = False) -> Node:
    xn = as_node(x)
    value = np.sqrt(np.square(xn.value).sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        ne = value if keepdims else np.expand_dims(value, axis)
        safe = np.where(ne == 0.0, 1.0, ne)
        return (np.where(ne == 0.0, 0.0, ge / safe) * xn.value,)

    return Node(value, (xn,), bwd, "l2_norm")


def _topological_order(root: Node) -> list[Node]:
    """Post-order over the needs-grad subgraph, iterative to spare the stack."""
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.needs_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Node, params: Sequence[Node] | None = None) -> None:
    """Populate .grad with dRoot/dNode for everything reachable from `root`.

    `root` must be scalar-shaped. Parameters passed in `params` that are not
    reachable from the root end up with zero gradients.
    """
    if root.value.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.shape}")
    params = list(params) if params is not None else []
    for p in params:
        p.grad = None  # unreachable parameters must not keep stale gradients
    order = _topological_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        contributions = node._backward(node.grad)
        for parent, contribution in zip(node.parents, contributions):
            if contribution is None or not parent.needs_grad:
                continue
            if parent.grad is None:
                parent.grad = contribution
            else:
                parent.grad = parent.grad + contribution
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.value)
