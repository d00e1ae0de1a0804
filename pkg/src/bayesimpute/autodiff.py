"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

A ``Tape`` records operations in execution order (which is already a
topological order of the graph), and ``backward`` replays the records once,
in reverse, accumulating gradients into every registered leaf. Tensors built
without a tape are constants: they participate in forward math but receive
no gradient.

Broadcasting is deliberately restricted to scalar-with-tensor so every
backward rule stays auditable; batching across rows is done with the
explicit ``repeat_rows`` op instead.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError, DomainError

Scalar = Union[int, float, np.floating]


class Tensor:
    """A shaped float64 array, optionally recorded on a tape.

    ``node_id`` is the handle into the owning tape; it is ``None`` for
    constants.
    """

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: Optional["Tape"] = None, node_id: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        kind = "const" if self.node_id is None else f"node {self.node_id}"
        return f"Tensor(shape={self.shape}, {kind})"

    # Operator sugar; all arithmetic is elementwise except @.
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


class _Entry:
    """One recorded operation: op name, node ids, and its backward closure."""

    __slots__ = ("op", "out_id", "in_ids", "out_data", "backward")

    def __init__(self, op, out_id, in_ids, out_data, backward):
        self.op = op
        self.out_id = out_id
        self.in_ids = in_ids
        self.out_data = out_data
        self.backward = backward


class Tape:
    """Ordered record of operations; append order is topological order."""

    def __init__(self):
        self.entries: list[_Entry] = []
        self._next_id = 0
        self._leaf_shapes: dict[int, tuple] = {}

    def _alloc(self) -> int:
        i = self._next_id
        self._next_id += 1
        return i

    def leaf(self, values) -> Tensor:
        """Register an input tensor that should receive a gradient."""
        t = Tensor(values, self, self._alloc())
        self._leaf_shapes[t.node_id] = t.data.shape
        return t

    @property
    def leaf_ids(self) -> list[int]:
        return list(self._leaf_shapes)

    def first_nonfinite(self) -> Optional[tuple[int, str]]:
        """(index, op name) of the earliest entry with a non-finite value."""
        for i, e in enumerate(self.entries):
            if not np.all(np.isfinite(e.out_data)):
                return i, e.op
        return None


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor],
            backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    tapes = {t.tape for t in inputs if t.tape is not None}
    if not tapes:
        return Tensor(out_data)
    if len(tapes) > 1:
        raise ContractError(f"operands of '{op}' are recorded on different tapes")
    tape = tapes.pop()
    out = Tensor(out_data, tape, tape._alloc())
    in_ids = tuple(t.node_id for t in inputs)
    tape.entries.append(_Entry(op, out.node_id, in_ids, out.data, backward))
    return out


# ---------------------------------------------------------------------------
# matrix product


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes do not chain: {a.shape} x {b.shape}")
    ad_, bd = a.data, b.data
    out = ad_ @ bd

    def backward(g):
        return g @ bd.T, ad_.T @ g

    return _record("matmul", out, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise binary ops (equal shapes, or scalar broadcast on one side)


def _binary_shapes(op, a, b):
    if a.shape == b.shape:
        return None
    if a.size == 1:
        return "a"
    if b.size == 1:
        return "b"
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, t: Tensor, scalar_side: bool) -> np.ndarray:
    if scalar_side:
        return np.sum(g).reshape(t.shape)
    return g


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    side = _binary_shapes("add", a, b)

    def backward(g):
        return _reduce_to(g, a, side == "a"), _reduce_to(g, b, side == "b")

    return _record("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    side = _binary_shapes("sub", a, b)

    def backward(g):
        return _reduce_to(g, a, side == "a"), _reduce_to(-g, b, side == "b")

    return _record("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    side = _binary_shapes("mul", a, b)
    ad_, bd = a.data, b.data

    def backward(g):
        return _reduce_to(g * bd, a, side == "a"), _reduce_to(g * ad_, b, side == "b")

    return _record("mul", ad_ * bd, (a, b), backward)


_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise_binary(op: str, a, b) -> Tensor:
    try:
        fn = _BINARY[op]
    except KeyError:
        raise ContractError(f"unknown binary op '{op}'") from None
    return fn(a, b)


# ---------------------------------------------------------------------------
# elementwise unary ops


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    s = _sigmoid(a.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _record("sigmoid", s, (a,), backward)


def tanh(a) -> Tensor:
    a = _coerce(a)
    t = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - t * t),)

    return _record("tanh", t, (a,), backward)


def relu(a) -> Tensor:
    a = _coerce(a)
    x = a.data

    def backward(g):
        # Subgradient at 0 is 0.
        return (g * (x > 0.0),)

    return _record("relu", np.maximum(x, 0.0), (a,), backward)


def softplus(a) -> Tensor:
    a = _coerce(a)
    x = a.data

    def backward(g):
        return (g * _sigmoid(x),)

    return _record("softplus", np.logaddexp(0.0, x), (a,), backward)


def exp(a) -> Tensor:
    a = _coerce(a)
    e = np.exp(a.data)

    def backward(g):
        return (g * e,)

    return _record("exp", e, (a,), backward)


def log(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    if np.any(x <= 0.0):
        idx = tuple(int(i) for i in np.argwhere(x <= 0.0)[0])
        raise DomainError(f"log of non-positive value at index {idx}")

    def backward(g):
        return (g / x,)

    return _record("log", np.log(x), (a,), backward)


def neg(a) -> Tensor:
    a = _coerce(a)

    def backward(g):
        return (-g,)

    return _record("neg", -a.data, (a,), backward)


def absolute(a) -> Tensor:
    a = _coerce(a)
    x = a.data

    def backward(g):
        # sign(0) = 0, so the subgradient at 0 is 0.
        return (g * np.sign(x),)

    return _record("abs", np.abs(x), (a,), backward)


_UNARY = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "neg": neg,
    "abs": absolute,
}


def elementwise_unary(op: str, a) -> Tensor:
    try:
        fn = _UNARY[op]
    except KeyError:
        raise ContractError(f"unknown unary op '{op}'") from None
    return fn(a)


# ---------------------------------------------------------------------------
# reductions


def _check_axis(a: Tensor, axis: Optional[int]) -> Optional[int]:
    if axis is None:
        return None
    if not -a.data.ndim <= axis < a.data.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {a.shape}")
    return axis % a.data.ndim


def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - numpy-style name
    a = _coerce(a)
    axis = _check_axis(a, axis)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _record("sum", np.sum(a.data, axis=axis), (a,), backward)


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = _coerce(a)
    axis = _check_axis(a, axis)
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise DegenerateInputError("mean over an empty selection")
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, shape),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape),)

    return _record("mean", np.mean(a.data, axis=axis), (a,), backward)


_REDUCE = {"sum": sum, "mean": mean}


def reduce(op: str, a, axis: Optional[int] = None) -> Tensor:
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ContractError(f"unknown reduce op '{op}'") from None
    return fn(a, axis=axis)


# ---------------------------------------------------------------------------
# shape ops


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise DegenerateInputError("concat of zero tensors")
    ndim = ts[0].data.ndim
    if not 0 <= axis < ndim:
        raise DimensionError(f"axis {axis} invalid for shape {ts[0].shape}")
    for t in ts[1:]:
        if t.data.ndim != ndim or any(
            t.shape[d] != ts[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise DimensionError(
                f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {axis}"
            )
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return _record("concat", np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    old = a.shape

    def backward(g):
        return (g.reshape(old),)

    return _record("reshape", a.data.reshape(shape), (a,), backward)


def repeat_rows(a, n: int) -> Tensor:
    """Tile a single-row matrix to n rows; backward sums the rows back."""
    a = _coerce(a)
    if a.data.ndim != 2 or a.shape[0] != 1:
        raise DimensionError(f"repeat_rows requires shape (1, k), got {a.shape}")
    if n < 1:
        raise ContractError("repeat_rows requires n >= 1")

    def backward(g):
        return (g.sum(axis=0, keepdims=True),)

    return _record("repeat_rows", np.repeat(a.data, n, axis=0), (a,), backward)


def take_row(a, index: int) -> Tensor:
    """Select one row of a matrix as a (1, k) tensor."""
    a = _coerce(a)
    if a.data.ndim != 2:
        raise DimensionError(f"take_row requires a matrix, got shape {a.shape}")
    if not 0 <= index < a.shape[0]:
        raise DimensionError(f"row {index} out of range for shape {a.shape}")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[index, :] = g[0, :]
        return (full,)

    return _record("take_row", a.data[index:index + 1, :].copy(), (a,), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Gradient of a scalar loss w.r.t. every leaf on its tape.

    Leaves not reachable from the loss get a zero gradient. Returned arrays
    must be treated as read-only.
    """
    if not isinstance(loss, Tensor) or loss.tape is None:
        raise ContractError("backward requires a tape-recorded tensor")
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    tape = loss.tape
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.out_id, None)
        if g is None:
            continue
        for in_id, gi in zip(entry.in_ids, entry.backward(g)):
            if in_id is None or gi is None:
                continue
            prev = grads.get(in_id)
            grads[in_id] = gi if prev is None else prev + gi
    return {
        lid: grads.get(lid, np.zeros(shape))
        for lid, shape in tape._leaf_shapes.items()
    }


def grad_check(build: Callable[..., Tensor], leaves: Sequence[np.ndarray],
               eps: float = 1e-5) -> float:
    """Max relative error of tape gradients vs central finite differences.

    ``build(*leaf_tensors)`` must deterministically produce a scalar tensor.
    The error is |autodiff - fd| / max(1e-8, |fd|), maximised over every
    entry of every leaf.
    """
    if eps <= 0:
        raise ContractError("grad_check requires eps > 0")
    base = [np.asarray(v, dtype=np.float64) for v in leaves]

    tape = Tape()
    ts = [tape.leaf(v) for v in base]
    grads = backward(build(*ts))
    auto = [grads[t.node_id] for t in ts]

    def value_at(vals):
        probe = Tape()
        return build(*[probe.leaf(v) for v in vals]).item()

    worst = 0.0
    for i in range(len(base)):
        flat_auto = auto[i].reshape(-1)
        for j in range(base[i].size):
            hi = [v.copy() for v in base]
            lo = [v.copy() for v in base]
            hi[i].reshape(-1)[j] += eps
            lo[i].reshape(-1)[j] -= eps
            fd = (value_at(hi) - value_at(lo)) / (2.0 * eps)
            err = abs(flat_auto[j] - fd) / max(1e-8, abs(fd))
            worst = max(worst, err)
    return worst
