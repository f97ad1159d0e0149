"""Dense float64 tensors with reverse-mode automatic differentiation.

A deliberately small engine: each operation stores, on its output tensor,
links to the parents that need gradients together with a vector-Jacobian
closure. `backward` replays the recorded graph once in reverse topological
order. The same machinery serves parameter gradients during training and
input gradients inside Langevin and attack loops, so everything stays in
double precision end to end.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    NonFiniteError,
    UsageError,
)

Array = np.ndarray
TensorLike = Union["Tensor", Array, float, int]

# (parent, vjp) pairs; vjp maps the output cotangent to the parent's share.
_Link = tuple["Tensor", Callable[[Array], Array]]


class Tensor:
    """A float64 array plus the bookkeeping needed for one backward pass.

    Leaves are built through the public constructor and validated to be
    finite; interior nodes are produced by the ops below and carry links
    back to their parents. Gradients accumulate additively into the `grad`
    attribute of leaves that were created with `requires_grad=True`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_links", "_spent")

    def __init__(self, data: TensorLike, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._links: tuple[_Link, ...] = ()
        self._spent = False

    @classmethod
    def _result(cls, data: Array, links: Iterable[_Link]) -> "Tensor":
        # Internal fast path for op outputs: no copy, no finite check here.
        # Finiteness is enforced at the boundaries (leaf construction, loss
        # evaluation, sampler/attack gradients).
        out = cls.__new__(cls)
        out.data = data
        out._links = tuple(links)
        out.requires_grad = bool(out._links)
        out.grad = None
        out._spent = False
        return out

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._links

    def item(self) -> float:
        if self.data.shape != ():
            raise UsageError("item() requires a scalar tensor")
        return float(self.data)

    def detach(self) -> "Tensor":
        """A gradient-free leaf sharing this tensor's storage."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._links = ()
        out._spent = False
        return out

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other: TensorLike) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: TensorLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: TensorLike) -> "Tensor":
        return sub(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __mul__(self, other: TensorLike) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _data(x: TensorLike) -> Array:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _links_for(*pairs: tuple[TensorLike, Callable[[Array], Array]]) -> list[_Link]:
    return [(t, fn) for t, fn in pairs if isinstance(t, Tensor) and t.requires_grad]


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the parent's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- primitive operations ----------------------------------------------------


def add(a: TensorLike, b: TensorLike) -> Tensor:
    da, db = _data(a), _data(b)
    out = da + db
    links = _links_for(
        (a, lambda g: _unbroadcast(g, da.shape)),
        (b, lambda g: _unbroadcast(g, db.shape)),
    )
    return Tensor._result(out, links)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    da, db = _data(a), _data(b)
    out = da - db
    links = _links_for(
        (a, lambda g: _unbroadcast(g, da.shape)),
        (b, lambda g: _unbroadcast(-g, db.shape)),
    )
    return Tensor._result(out, links)


def neg(a: TensorLike) -> Tensor:
    return Tensor._result(-_data(a), _links_for((a, lambda g: -g)))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    da, db = _data(a), _data(b)
    out = da * db
    links = _links_for(
        (a, lambda g: _unbroadcast(g * db, da.shape)),
        (b, lambda g: _unbroadcast(g * da, db.shape)),
    )
    return Tensor._result(out, links)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    da, db = _data(a), _data(b)
    if da.ndim != 2 or db.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-d operands, got {da.ndim}-d and {db.ndim}-d"
        )
    if da.shape[1] != db.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {da.shape} @ {db.shape}"
        )
    out = da @ db
    links = _links_for(
        (a, lambda g: g @ db.T),
        (b, lambda g: da.T @ g),
    )
    return Tensor._result(out, links)


def tsum(a: Tensor) -> Tensor:
    da = _data(a)
    out = np.asarray(da.sum())
    links = _links_for((a, lambda g: np.broadcast_to(g, da.shape).copy()))
    return Tensor._result(out, links)


def tmean(a: Tensor) -> Tensor:
    da = _data(a)
    n = da.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    out = np.asarray(da.sum() / n)
    links = _links_for((a, lambda g: np.broadcast_to(g / n, da.shape).copy()))
    return Tensor._result(out, links)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a [m, k] tensor, computed with a max shift.

    The shift keeps exp() bounded so rows like [1000, 1000] come out as
    1000 + log 2 instead of overflowing.
    """
    da = _data(a)
    if da.ndim != 2 or da.shape[1] < 1:
        raise DimensionError(f"logsumexp_rows expects [m, k] with k >= 1, got {da.shape}")
    m = da.max(axis=1, keepdims=True)
    z = np.exp(da - m)
    s = z.sum(axis=1, keepdims=True)
    out = (m + np.log(s)).reshape(-1)
    softmax = z / s
    links = _links_for((a, lambda g: g[:, None] * softmax))
    return Tensor._result(out, links)


def gather_rows(a: Tensor, idx: Array) -> Tensor:
    """Pick one entry per row: out[i] = a[i, idx[i]]."""
    da = _data(a)
    ii = np.asarray(idx)
    if da.ndim != 2:
        raise DimensionError(f"gather_rows expects a 2-d tensor, got {da.shape}")
    if ii.ndim != 1 or ii.shape[0] != da.shape[0]:
        raise DimensionError(
            f"index length {ii.shape} does not match {da.shape[0]} rows"
        )
    if not np.issubdtype(ii.dtype, np.integer):
        raise DomainError("gather_rows indices must be integers")
    if ii.size and (ii.min() < 0 or ii.max() >= da.shape[1]):
        raise DomainError(
            f"gather_rows index out of range for {da.shape[1]} columns"
        )
    rows = np.arange(da.shape[0])
    out = da[rows, ii]

    def vjp(g: Array) -> Array:
        z = np.zeros_like(da)
        z[rows, ii] = g
        return z

    return Tensor._result(out, _links_for((a, vjp)))


def _sigmoid(x: Array) -> Array:
    # exp(-softplus(-x)): stable at both tails.
    return np.exp(-np.logaddexp(0.0, -x))


def swish(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    da = _data(a)
    s = _sigmoid(da)
    out = da * s
    links = _links_for((a, lambda g: g * (s * (1.0 + da * (1.0 - s)))))
    return Tensor._result(out, links)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    da = _data(a)
    out = np.where(da > 0, da, slope * da)
    links = _links_for((a, lambda g: g * np.where(da > 0, 1.0, slope)))
    return Tensor._result(out, links)


ACTIVATIONS = ("swish", "leaky-relu")


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "swish":
        return swish(a)
    if kind == "leaky-relu":
        return leaky_relu(a)
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# -- backward pass ------------------------------------------------------------


def topo_order(root: Tensor) -> list[Tensor]:
    """Tensors of the recorded graph, parents before children."""
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
        for parent, _ in node._links:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(leaf) into every requires-grad leaf under `loss`.

    One pass per recorded graph: calling backward twice on the same output
    raises UsageError, as does calling it on a non-scalar or on a tensor
    with no recorded operations.
    """
    if loss.data.shape != ():
        raise UsageError("backward requires a scalar loss")
    if loss._spent:
        raise UsageError("graph already consumed; re-record the forward pass")
    if not loss._links:
        raise UsageError("loss has no recorded graph to differentiate")

    order = topo_order(loss)
    flowing: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.array(g, dtype=np.float64)
                else:
                    node.grad = node.grad + g
            continue
        for parent, vjp in node._links:
            contrib = vjp(g)
            acc = flowing.get(id(parent))
            flowing[id(parent)] = contrib if acc is None else acc + contrib
    loss._spent = True


def check_finite(t: Tensor, context: str) -> Tensor:
    """Raise NonFiniteError naming `context` if `t` holds NaN or Inf."""
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values in {context}")
    return t
