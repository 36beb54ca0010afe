"""Dense-array reverse-mode automatic differentiation.

A :class:`Tensor` wraps a float64 numpy array. Every differentiable op
records its inputs and a backward closure on the output tensor, so the
"tape" is the graph reachable from a result; :meth:`Tensor.backward`
linearises it topologically and visits each recorded op exactly once.
There is no global state: independent graphs (e.g. separate model
instances) never interact, and each graph supports one backward pass
per forward pass.

All ops are pure given their inputs plus, where randomness is involved
(dropout), an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's shape rule."""


class Tensor:
    """Node of the autodiff graph: a float64 array plus gradient metadata."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[], None] | None = None
        self._op = "leaf"
        self._backward_ran = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements, expected 1")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Run reverse-mode accumulation from this scalar.

        Gradients land on every reachable tensor with ``requires_grad``;
        constants are skipped entirely. The graph is consumed: a second
        call without a fresh forward pass raises.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
        if not self._parents:
            raise ValueError("backward: no ops recorded for this tensor (empty tape)")
        if self._backward_ran:
            raise RuntimeError("backward: graph already consumed; run a new forward pass first")

        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn()
        self._backward_ran = True

    def __getitem__(self, idx) -> "Tensor":
        return take(self, idx)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative post-order over grad-requiring nodes only.
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


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str,
          backward_fn: Callable[[], None] | None) -> Tensor:
    out = Tensor(data)
    grad_parents = tuple(p for p in parents if p.requires_grad)
    if grad_parents:
        out.requires_grad = True
        out._parents = grad_parents
        out._backward_fn = backward_fn
    out._op = op
    return out


def _accum(t: Tensor, delta: np.ndarray) -> None:
    # The first accumulation borrows `delta` without copying; a borrowed
    # buffer may alias another tensor's grad, so accumulation is always
    # out of place and no grad buffer is ever mutated.
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = delta
    else:
        t.grad = t.grad + delta


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out_data = a.data + b.data

    def backward():
        _accum(a, _unbroadcast(out.grad, a.shape))
        _accum(b, _unbroadcast(out.grad, b.shape))

    out = _node(out_data, (a, b), "add", backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out_data = a.data - b.data

    def backward():
        _accum(a, _unbroadcast(out.grad, a.shape))
        _accum(b, _unbroadcast(-out.grad, b.shape))

    out = _node(out_data, (a, b), "sub", backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    out_data = a.data * b.data

    def backward():
        _accum(a, _unbroadcast(out.grad * b.data, a.shape))
        _accum(b, _unbroadcast(out.grad * a.data, b.shape))

    out = _node(out_data, (a, b), "mul", backward)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    out_data = a.data / b.data

    def backward():
        _accum(a, _unbroadcast(out.grad / b.data, a.shape))
        _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    out = _node(out_data, (a, b), "div", backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward():
        _accum(a, _unbroadcast(np.matmul(out.grad, np.swapaxes(b.data, -1, -2)), a.shape))
        _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), out.grad), b.shape))

    out = _node(out_data, (a, b), "matmul", backward)
    return out


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` applied to the last axis of ``x``."""
    return add(matmul(x, weight), bias)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 convolution over the time axis.

    ``x`` is [B, T, C_in], ``weight`` is [K, C_in, C_out], output is
    [B, T + 2*padding - K + 1, C_out].
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d: expected 3-D input and kernel, got {x.shape} and {weight.shape}")
    if x.shape[2] != weight.shape[1]:
        raise ShapeError(f"conv1d: input channels {x.shape} do not match kernel {weight.shape}")
    k = weight.shape[0]
    t_out = x.shape[1] + 2 * padding - k + 1
    if t_out < 1:
        raise ShapeError(f"conv1d: kernel {k} with padding {padding} exceeds input length {x.shape[1]}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    out_data = np.zeros((x.shape[0], t_out, weight.shape[2]))
    for i in range(k):
        out_data += np.matmul(xp[:, i:i + t_out, :], weight.data[i])
    out_data += bias.data

    def backward():
        g = out.grad
        _accum(bias, g.sum(axis=(0, 1)))
        g2 = g.reshape(-1, g.shape[2])
        gw = np.empty_like(weight.data)
        gxp = np.zeros_like(xp)
        for i in range(k):
            window = np.ascontiguousarray(xp[:, i:i + t_out, :])
            gw[i] = window.reshape(-1, window.shape[2]).T @ g2
            gxp[:, i:i + t_out, :] += np.matmul(g, weight.data[i].T)
        _accum(weight, gw)
        _accum(x, gxp[:, padding:padding + x.shape[1], :] if padding else gxp)

    out = _node(out_data, (x, weight, bias), "conv1d", backward)
    return out


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward():
        _accum(x, out.grad * (x.data > 0.0))

    out = _node(out_data, (x,), "relu", backward)
    return out


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward():
        _accum(x, out.grad * (1.0 - out_data * out_data))

    out = _node(out_data, (x,), "tanh", backward)
    return out


# Smallest representable values keeping sigmoid output in the open interval
# (0, 1) even when exp() under/overflows for extreme arguments.
_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = float(np.nextafter(1.0, 0.0))


def sigmoid(x: Tensor, steepness: float = 1.0) -> Tensor:
    """Logistic function ``1 / (1 + exp(-steepness * x))``.

    Large ``steepness`` turns it into an approximate step function used
    for near-binary gate outputs; the gradient is the analytic steep
    derivative, with ``steepness`` a forward-time constant.
    """
    out_data = np.clip(expit(steepness * x.data), _SIG_LO, _SIG_HI)

    def backward():
        _accum(x, out.grad * steepness * out_data * (1.0 - out_data))

    out = _node(out_data, (x,), "sigmoid", backward)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward():
        g = out.grad
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(x, (g - inner) * out_data)

    out = _node(out_data, (x,), "softmax", backward)
    return out


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out_data = x.data * keep

    def backward():
        _accum(x, out.grad * keep)

    out = _node(out_data, (x,), "dropout", backward)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def take(x: Tensor, idx) -> Tensor:
    """Basic (slice/index) selection, e.g. ``x[:, t, :]``."""
    out_data = x.data[idx]

    def backward():
        gx = np.zeros_like(x.data)
        gx[idx] += out.grad
        _accum(x, gx)

    out = _node(out_data, (x,), "slice", backward)
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward():
        _accum(x, out.grad.reshape(x.shape))

    out = _node(out_data, (x,), "reshape", backward)
    return out


def flatten(x: Tensor) -> Tensor:
    """Collapse all axes after the first: [B, ...] -> [B, prod(...)]."""
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    out_data = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def backward():
        _accum(x, np.transpose(out.grad, inverse))

    out = _node(out_data, (x,), "transpose", backward)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty input list")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        ax = axis % len(base)
        if len(other) != len(base) or other[:ax] + other[ax + 1:] != base[:ax] + base[ax + 1:]:
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} disagree off axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward():
        moved = np.moveaxis(out.grad, axis, 0)
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _accum(t, np.moveaxis(moved[lo:hi], 0, axis))

    out = _node(out_data, tuple(tensors), "concat", backward)
    return out


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    out = _node(out_data, (x,), "reduce_sum", backward)
    return out


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        count = int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    out_data = x.data.mean(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape) / count)

    out = _node(out_data, (x,), "reduce_mean", backward)
    return out


# ---------------------------------------------------------------------------
# op facade

OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "affine": affine,
    "conv1d": conv1d,
    "relu": relu,
    "tanh": tanh,
    "sigmoid_steep": sigmoid,
    "softmax": softmax,
    "dropout": dropout,
    "concat": concat,
    "slice": take,
    "reshape": reshape,
    "flatten": flatten,
    "transpose": transpose,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
}


def tensor_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by name; the functional API with a string switch."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; known: {sorted(OPS)}") from None
    return fn(*inputs, **kwargs)
