"""Dense float64 tensors and a reverse-mode automatic differentiation tape.

Design constraints, in rough order of importance:

* everything is float64 -- gradient checks need the precision and desk-scale
  problems make speed a non-issue;
* tensors are row-major numpy arrays; elementwise broadcasting is restricted
  to the four cases the model actually uses (equal shapes, scalar against
  anything, a ``(d,)`` row applied to each row of ``(n, d)``, and a ``(n, 1)``
  column applied across ``(n, d)``);
* a tape is built per forward pass; ``backward`` visits every reachable node
  exactly once in reverse topological order and accumulates ``d root / d node``
  into freshly zeroed accumulators.

Optional non-finite checking (`set_nan_checks`) validates every op output;
the training loop turns it off for speed and instead checks the scalar
objective each step.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import special
from .errors import DomainError, NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "Node",
    "ParamStore",
    "constant",
    "backward",
    "set_nan_checks",
    "nan_checks",
    "nan_checks_enabled",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "exp",
    "log",
    "tanh",
    "relu",
    "sigmoid",
    "softplus",
    "lgamma",
    "digamma",
    "tsum",
    "tmean",
    "reshape",
    "concat",
    "slice_axis",
    "logsumexp",
    "log_softmax",
    "apply_mask",
]

_NAN_CHECKS = True


def set_nan_checks(enabled: bool) -> None:
    """Globally enable/disable the post-op non-finite check."""
    global _NAN_CHECKS
    _NAN_CHECKS = bool(enabled)


def nan_checks_enabled() -> bool:
    return _NAN_CHECKS


@contextlib.contextmanager
def nan_checks(enabled: bool):
    """Temporarily override the non-finite check flag."""
    global _NAN_CHECKS
    prev = _NAN_CHECKS
    _NAN_CHECKS = bool(enabled)
    try:
        yield
    finally:
        _NAN_CHECKS = prev


class Tensor:
    """Immutable-by-convention dense array of float64 with shape metadata.

    ``data`` exposes the row-major flat storage; ``array`` is the shaped
    ndarray view used for arithmetic.
    """

    __slots__ = ("array",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keep 0-d scalars 0-d
        self.array = arr

    @property
    def shape(self) -> tuple:
        return self.array.shape

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def ndim(self) -> int:
        return self.array.ndim

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the storage."""
        return self.array.reshape(-1)

    def copy(self) -> "Tensor":
        return Tensor(self.array.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Node:
    """One entry on the tape: a value, its parents, and a backward rule.

    Leaf nodes (parameters, constants) have no parents. ``grad`` holds the
    accumulated gradient of the most recent ``backward`` pass and always has
    the value's shape.
    """

    __slots__ = ("value", "parents", "op", "grad", "_backward")

    def __init__(self, value: Tensor, parents: tuple = (), op: str = "leaf", backward_fn=None):
        self.value = value
        self.parents = parents
        self.op = op
        self.grad: np.ndarray | None = None
        self._backward: Callable[[np.ndarray], None] | None = backward_fn

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.shape})"

    # Operator sugar; python scalars are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_node(other))

    def __radd__(self, other):
        return add(_as_node(other), self)

    def __sub__(self, other):
        return sub(self, _as_node(other))

    def __rsub__(self, other):
        return sub(_as_node(other), self)

    def __mul__(self, other):
        return mul(self, _as_node(other))

    def __rmul__(self, other):
        return mul(_as_node(other), self)

    def __truediv__(self, other):
        return div(self, _as_node(other))

    def __rtruediv__(self, other):
        return div(_as_node(other), self)

    def __neg__(self):
        return mul(self, _as_node(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def constant(values, op: str = "const") -> Node:
    """Wrap an array-like as a leaf node."""
    t = values if isinstance(values, Tensor) else Tensor(values)
    _check_finite(t.array, op)
    return Node(t, (), op)


def _as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return constant(np.asarray(x, dtype=np.float64))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _NAN_CHECKS and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")


def _make(values: np.ndarray, parents: tuple, op: str, backward_fn) -> Node:
    _check_finite(values, op)
    return Node(Tensor(values), parents, op, backward_fn)


# ---------------------------------------------------------------------------
# broadcasting rules
# ---------------------------------------------------------------------------


def _broadcast_ok(sa: tuple, sb: tuple) -> bool:
    if sa == sb:
        return True
    if sa in ((), (1,)) or sb in ((), (1,)):
        return True
    if len(sa) == 2 and sb == (sa[1],):
        return True
    if len(sb) == 2 and sa == (sb[1],):
        return True
    if len(sa) == 2 and len(sb) == 2 and sa[0] == sb[0] and (sa[1] == 1 or sb[1] == 1):
        return True
    return False


def _check_ewise(a: Node, b: Node, op: str) -> None:
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_ewise(a, b, "add")

    def bk(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    return _make(a.value.array + b.value.array, (a, b), "add", bk)


def sub(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_ewise(a, b, "sub")

    def bk(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad -= _unbroadcast(g, b.shape)

    return _make(a.value.array - b.value.array, (a, b), "sub", bk)


def mul(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_ewise(a, b, "mul")
    av, bv = a.value.array, b.value.array

    def bk(g):
        a.grad += _unbroadcast(g * bv, a.shape)
        b.grad += _unbroadcast(g * av, b.shape)

    return _make(av * bv, (a, b), "mul", bk)


def div(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_ewise(a, b, "div")
    av, bv = a.value.array, b.value.array

    def bk(g):
        a.grad += _unbroadcast(g / bv, a.shape)
        b.grad += _unbroadcast(-g * av / (bv * bv), b.shape)

    return _make(av / bv, (a, b), "div", bk)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.value.array, b.value.array

    def bk(g):
        a.grad += g @ bv.T
        b.grad += av.T @ g

    return _make(av @ bv, (a, b), "matmul", bk)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


def exp(a: Node) -> Node:
    out = np.exp(a.value.array)

    def bk(g):
        a.grad += g * out

    return _make(out, (a,), "exp", bk)


def log(a: Node) -> Node:
    av = a.value.array
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)

    def bk(g):
        a.grad += g / av

    return _make(out, (a,), "log", bk)


def tanh(a: Node) -> Node:
    out = np.tanh(a.value.array)

    def bk(g):
        a.grad += g * (1.0 - out * out)

    return _make(out, (a,), "tanh", bk)


def relu(a: Node) -> Node:
    av = a.value.array
    out = np.maximum(av, 0.0)

    def bk(g):
        a.grad += g * (av > 0.0)

    return _make(out, (a,), "relu", bk)


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Node) -> Node:
    out = _sigmoid_arr(a.value.array)

    def bk(g):
        a.grad += g * out * (1.0 - out)

    return _make(out, (a,), "sigmoid", bk)


def softplus(a: Node) -> Node:
    av = a.value.array
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))

    def bk(g):
        a.grad += g * _sigmoid_arr(av)

    return _make(out, (a,), "softplus", bk)


def lgamma(a: Node) -> Node:
    av = a.value.array
    if av.size and np.min(av) <= 0.0:
        raise DomainError(f"lgamma requires positive input, got min {np.min(av)!r}")
    out = special.lgamma(av)

    def bk(g):
        a.grad += g * special.digamma(av)

    return _make(np.asarray(out), (a,), "lgamma", bk)


def digamma(a: Node) -> Node:
    av = a.value.array
    if av.size and np.min(av) <= 0.0:
        raise DomainError(f"digamma requires positive input, got min {np.min(av)!r}")
    out = special.digamma(av)

    def bk(g):
        a.grad += g * special.trigamma(av)

    return _make(np.asarray(out), (a,), "digamma", bk)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def tsum(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
    av = a.value.array
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def bk(g):
        if axis is None:
            a.grad += g  # scalar broadcasts
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.grad += np.broadcast_to(gg, av.shape)

    return _make(np.asarray(out), (a,), "sum", bk)


def tmean(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
    av = a.value.array
    count = av.size if axis is None else av.shape[axis]
    out = np.mean(av, axis=axis, keepdims=keepdims)

    def bk(g):
        if axis is None:
            a.grad += g / count
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.grad += np.broadcast_to(gg, av.shape) / count

    return _make(np.asarray(out), (a,), "mean", bk)


def reshape(a: Node, shape: Sequence[int]) -> Node:
    av = a.value.array
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != av.size:
        raise ShapeError(f"reshape: cannot view {av.shape} as {shape}")
    out = av.reshape(shape)

    def bk(g):
        a.grad += g.reshape(av.shape)

    return _make(out.copy(), (a,), "reshape", bk)


def concat(nodes: Iterable[Node], axis: int = 0) -> Node:
    nodes = tuple(nodes)
    if not nodes:
        raise ShapeError("concat of zero nodes")
    ndim = nodes[0].value.ndim
    for n in nodes[1:]:
        if n.value.ndim != ndim:
            raise ShapeError(
                f"concat: rank mismatch between {nodes[0].shape} and {n.shape}"
            )
    arrays = [n.value.array for n in nodes]
    out = np.concatenate(arrays, axis=axis)
    sizes = [arr.shape[axis] for arr in arrays]
    bounds = np.cumsum(sizes)[:-1]

    def bk(g):
        pieces = np.split(g, bounds, axis=axis)
        for n, piece in zip(nodes, pieces):
            n.grad += piece

    return _make(out, nodes, "concat", bk)


def slice_axis(a: Node, axis: int, start: int, stop: int) -> Node:
    av = a.value.array
    axis = axis % av.ndim
    if not (0 <= start <= stop <= av.shape[axis]):
        raise ShapeError(
            f"slice_axis: [{start}:{stop}] out of bounds for axis {axis} of {av.shape}"
        )
    index = tuple(slice(None) if d != axis else slice(start, stop) for d in range(av.ndim))
    out = av[index].copy()

    def bk(g):
        a.grad[index] += g

    return _make(out, (a,), "slice", bk)


def logsumexp(a: Node, axis: int = -1) -> Node:
    av = a.value.array
    m = np.max(av, axis=axis, keepdims=True)
    out = np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(av - m), axis=axis))

    def bk(g):
        soft = np.exp(av - np.expand_dims(out, axis))
        a.grad += soft * np.expand_dims(g, axis)

    return _make(np.asarray(out), (a,), "logsumexp", bk)


def log_softmax(a: Node, axis: int = -1) -> Node:
    av = a.value.array
    m = np.max(av, axis=axis, keepdims=True)
    lse = m + np.log(np.sum(np.exp(av - m), axis=axis, keepdims=True))
    out = av - lse

    def bk(g):
        a.grad += g - np.exp(out) * np.sum(g, axis=axis, keepdims=True)

    return _make(out, (a,), "log_softmax", bk)


def apply_mask(a: Node, mask) -> Node:
    """Zero out entries where ``mask`` is 0; exact +0.0 in masked slots.

    ``mask`` is a constant 0/1 array of the same shape. Gradient flows only
    through kept entries.
    """
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != a.shape:
        raise ShapeError(f"apply_mask: mask shape {m.shape} != value shape {a.shape}")
    keep = m != 0.0
    out = np.where(keep, a.value.array, 0.0)

    def bk(g):
        a.grad += np.where(keep, g, 0.0)

    return _make(out, (a,), "mask", bk)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _toposort(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``grad`` for every reachable node.

    The root must be scalar-valued. Gradient accumulators of all reachable
    nodes are zeroed first, so repeated calls do not leak state.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    order = _toposort(root)
    for n in order:
        n.grad = np.zeros(n.value.shape, dtype=np.float64)
    root.grad = np.ones(root.value.shape, dtype=np.float64)
    for n in reversed(order):
        if n._backward is not None:
            n._backward(n.grad)


# ---------------------------------------------------------------------------
# named parameter store
# ---------------------------------------------------------------------------


class ParamStore:
    """Named trainable leaf nodes with stable (insertion) iteration order.

    Names are unique and shapes are fixed at creation; the optimizer mutates
    values strictly in place.
    """

    def __init__(self):
        self._nodes: dict[str, Node] = {}

    def add(self, name: str, values) -> Node:
        if name in self._nodes:
            raise ValueError(f"parameter {name!r} already exists")
        node = Node(Tensor(values), (), "param")
        self._nodes[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._nodes[name]

    def __contains__(self, name: str) -> bool:
        return name in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __iter__(self) -> Iterator[str]:
        return iter(self._nodes)

    def names(self) -> list[str]:
        return list(self._nodes)

    def items(self) -> Iterator[tuple[str, Node]]:
        return iter(self._nodes.items())

    def nodes(self) -> list[Node]:
        return list(self._nodes.values())

    def n_parameters(self) -> int:
        return sum(n.value.size for n in self._nodes.values())

    def assign(self, name: str, values) -> None:
        """Overwrite a parameter's value in place; shape must match."""
        node = self._nodes[name]
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != node.value.shape:
            raise ShapeError(
                f"assign to {name!r}: new shape {arr.shape} != stored {node.value.shape}"
            )
        node.value.array[...] = arr
