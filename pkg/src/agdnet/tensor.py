"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the operations needed by the reconstruction network and its losses are
provided. Every operation that receives at least one input with
``requires_grad`` records a :class:`Node`; :func:`backward` orders the nodes
reachable from a scalar loss into a :class:`Tape` and replays it in reverse.
A tape is consumed by its backward pass: running backward again over the same
graph raises :class:`~agdnet.errors.TapeStateError`.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, TapeStateError

_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording in the current thread (inference)."""
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


@contextlib.contextmanager
def kink_probe() -> Iterator[list]:
    """Collect the branch pattern (ReLU masks, abs signs) of ops run inside.

    Finite-difference checks compare patterns to detect a perturbation that
    crossed a point where the function is not differentiable.
    """
    prev = getattr(_local, "probe", None)
    _local.probe = record = []
    try:
        yield record
    finally:
        _local.probe = prev


def _probe(pattern: np.ndarray) -> None:
    record = getattr(_local, "probe", None)
    if record is not None:
        record.append(pattern)


class Node:
    __slots__ = ("op", "inputs", "backward_fn", "released")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.released = False


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.require(arr, dtype=np.float64, requirements="C")
        t.requires_grad = requires_grad
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, factor: float) -> "Tensor":
        return scale(self, factor)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Build the output of a differentiable operation.

    ``backward_fn(g)`` receives the output gradient and returns one gradient
    array (or ``None``) per input, in order.
    """
    inputs = tuple(inputs)
    requires = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires)
    if requires:
        out._node = Node(op, inputs, backward_fn)
    return out


class Tape:
    """Nodes reachable from a loss, in an order where producers precede consumers."""

    def __init__(self, outputs: list[Tensor]):
        self.outputs = outputs

    @property
    def nodes(self) -> list[Node]:
        return [t._node for t in self.outputs]

    @classmethod
    def record(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t._node is None:
                continue
            if t._node.released:
                raise TapeStateError("backward over a graph that was already consumed; run a fresh forward pass")
            seen.add(id(t))
            stack.append((t, True))
            for inp in t._node.inputs:
                if inp._node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)

    def backward(self, loss: Tensor) -> None:
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for t in reversed(self.outputs):
            node = t._node
            g = grads.pop(id(t), None)
            if g is not None:
                in_grads = node.backward_fn(g)
                for inp, gi in zip(node.inputs, in_grads):
                    if gi is None or not inp.requires_grad:
                        continue
                    if inp._node is None:
                        _accumulate_leaf(inp, gi)
                    elif id(inp) in grads:
                        grads[id(inp)] = grads[id(inp)] + gi
                    else:
                        grads[id(inp)] = gi
            node.backward_fn = None
            node.released = True


def _accumulate_leaf(leaf: Tensor, g: np.ndarray) -> None:
    if g.shape != leaf.shape:
        raise TapeStateError(f"gradient shape {g.shape} does not match leaf {leaf.shape}")
    if leaf.grad is None:
        leaf.grad = np.array(g, dtype=np.float64)
    else:
        leaf.grad = leaf.grad + g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeStateError("loss does not depend on any tensor that requires grad")
    if loss._node is None:
        _accumulate_leaf(loss, np.ones_like(loss.data))
        return
    Tape.record(loss).backward(loss)


# -- convolutions ------------------------------------------------------------

def pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: ``out[o] = sum_i weight[o, i] * x[i] (+ bias[o])``."""
    if x.ndim != 3 or weight.ndim != 2:
        raise DimensionError(f"pointwise_conv expects [c,h,w] and [o,c], got {x.shape} and {weight.shape}")
    c, h, w = x.shape
    if weight.shape[1] != c:
        raise DimensionError(f"weight expects {weight.shape[1]} input channels, input has {c}")
    o = weight.shape[0]
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"bias shape {bias.shape} != ({o},)")
    xf = x.data.reshape(c, h * w)
    out = weight.data @ xf
    if bias is not None:
        out = out + bias.data[:, None]
    need_x, need_w = x.requires_grad, weight.requires_grad
    need_b = bias is not None and bias.requires_grad
    wdata = weight.data

    def _backward(g):
        gf = g.reshape(o, h * w)
        gx = (wdata.T @ gf).reshape(c, h, w) if need_x else None
        gw = gf @ xf.T if need_w else None
        gb = gf.sum(axis=1) if need_b else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op("pointwise_conv", out.reshape(o, h, w), inputs, _backward)


def depthwise_conv3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 3x3 correlation with one pixel of zero padding."""
    if x.ndim != 3 or weight.ndim != 3 or weight.shape[1:] != (3, 3):
        raise DimensionError(f"depthwise_conv3x3 expects [c,h,w] and [c,3,3], got {x.shape} and {weight.shape}")
    c = x.shape[0]
    if weight.shape[0] != c:
        raise DimensionError(f"weight has {weight.shape[0]} channels, input has {c}")
    if bias is not None and bias.shape != (c,):
        raise DimensionError(f"bias shape {bias.shape} != ({c},)")
    out = kernels.dwconv3x3_forward(x.data, weight.data)
    if bias is not None:
        out = out + bias.data[:, None, None]
    need_x, need_w = x.requires_grad, weight.requires_grad
    need_b = bias is not None and bias.requires_grad
    xdata, wdata = x.data, weight.data

    def _backward(g):
        g = np.ascontiguousarray(g)
        gx = kernels.dwconv3x3_grad_input(g, wdata) if need_x else None
        gw = kernels.dwconv3x3_grad_weight(g, xdata) if need_w else None
        gb = g.sum(axis=(1, 2)) if need_b else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op("depthwise_conv3x3", out, inputs, _backward)


# -- elementwise ---------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _probe(mask)
    return make_op("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return make_op("scale", x.data * factor, (x,), lambda g: (g * factor,))


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Stack ``[c_i, h, w]`` tensors along the channel axis."""
    tensors = tuple(tensors)
    if not tensors:
        raise DimensionError("concat_channels needs at least one tensor")
    spatial = tensors[0].shape[1:]
    for t in tensors:
        if t.ndim != 3 or t.shape[1:] != spatial:
            raise DimensionError(f"concat_channels: spatial extents {t.shape[1:]} and {spatial} differ")
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=0)

    def _backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return make_op("concat_channels", out, tensors, _backward)


# -- reductions ----------------------------------------------------------------

def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return make_op("mean_all", np.array(x.data.mean()), (x,),
                   lambda g: (np.full(x.shape, float(g) / n),))


def sum_abs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    _probe(sign)
    return make_op("sum_abs", np.array(np.abs(x.data).sum()), (x,), lambda g: (sign * float(g),))


def sum_sq(x: Tensor) -> Tensor:
    xd = x.data
    return make_op("sum_sq", np.array(np.square(xd).sum()), (x,), lambda g: (xd * (2.0 * float(g)),))
