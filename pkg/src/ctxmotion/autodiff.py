"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad`` appends a record
to the active :class:`Tape`.  :func:`backward` replays those records in reverse
order, accumulating adjoints into ``Tensor.grad``.  Values are float64 numpy
arrays; the only broadcasting supported is a bias row added to every row
(:func:`add_bias`) and a column of per-row scales (:func:`scale_rows`).
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A non-finite value reached an operation that forbids it."""


class ContractError(RuntimeError):
    """An operation was used outside its contract."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self.shape))

    def __radd__(self, other):
        return add(_lift(other, self.shape), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.shape))

    def __rsub__(self, other):
        return sub(_lift(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(shape, float(x)))


# --------------------------------------------------------------------------
# tape


class _Record:
    __slots__ = ("inputs", "output", "adjoint")

    def __init__(self, inputs, output, adjoint):
        self.inputs = inputs
        self.output = output
        self.adjoint = adjoint


class Tape:
    """Ordered record of executed operations.

    Used as a context manager it becomes the active tape for the current
    thread; otherwise a per-thread default tape is used.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._prev: Tape | None = None

    def __len__(self) -> int:
        return len(self.records)

    def reset(self) -> None:
        self.records.clear()

    def __enter__(self) -> "Tape":
        self._prev = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = self._prev
        self.reset()


_state = threading.local()


def active_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


def _recording() -> bool:
    return not getattr(_state, "no_grad", False)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording anything on the tape."""
    prev = getattr(_state, "no_grad", False)
    _state.no_grad = True
    try:
        yield
    finally:
        _state.no_grad = prev


def _emit(data: np.ndarray, inputs: Sequence[Tensor], adjoint: Callable) -> Tensor:
    needs = _recording() and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None
    out.name = None
    if needs:
        active_tape().records.append(_Record(tuple(inputs), out, adjoint))
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``grad`` on every tensor that contributed to ``loss``.

    Gradients accumulate into leaves that already hold a ``grad``; call
    ``zero_grad`` between steps.  The tape is cleared afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or active_tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        if rec.output.requires_grad:
            rec.output.grad = g
        parts = rec.adjoint(g)
        for inp, gi in zip(rec.inputs, parts):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    # whatever remains belongs to leaves (tensors not produced on this tape)
    leaves = _collect_leaves(tape, loss)
    for key, g in grads.items():
        t = leaves.get(key)
        if t is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
    tape.reset()


def _collect_leaves(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    produced = {id(r.output) for r in tape.records}
    leaves: dict[int, Tensor] = {}
    for r in tape.records:
        for t in r.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
    if loss.requires_grad and id(loss) not in produced:
        leaves[id(loss)] = loss
    return leaves


# --------------------------------------------------------------------------
# linear algebra and elementwise arithmetic


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def adjoint(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _emit(ad @ bd, (a, b), adjoint)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-F bias to every row of an M x F matrix."""
    if x.data.ndim != 2 or bias.data.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise DimensionError(f"add_bias: bias {bias.shape} does not fit rows of {x.shape}")
    return _emit(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of ``x`` by ``s[i, 0]``."""
    if x.data.ndim != 2 or s.shape != (x.shape[0], 1):
        raise DimensionError(f"scale_rows: scales {s.shape} do not fit rows of {x.shape}")
    xd, sd = x.data, s.data
    return _emit(xd * sd, (x, s), lambda g: (g * sd, (g * xd).sum(axis=1, keepdims=True)))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _emit(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; the adjoint at 0 is taken as 0."""
    out = np.sqrt(x.data)
    safe = np.where(out > 0, out, 1.0)

    def adjoint(g):
        return (np.where(out > 0, g * 0.5 / safe, 0.0),)

    return _emit(out, (x,), adjoint)


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
}


def elementwise(op: str, *args: Tensor) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# --------------------------------------------------------------------------
# reductions and normalisation


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _emit(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = x.data.sum(axis=axis, keepdims=True)
    return _emit(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    return scale(sum(x), 1.0 / x.data.size)


def softmax_rows(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax with max subtraction.

    With ``mask`` only entries where the mask is true take part; the rest are
    exactly zero.  Every row must keep at least one entry.
    """
    z = logits.data
    if z.ndim != 2:
        raise DimensionError(f"softmax_rows: expected a matrix, got {logits.shape}")
    if mask is not None:
        if mask.shape != z.shape:
            raise DimensionError(f"softmax_rows: mask {mask.shape} vs logits {z.shape}")
        if not np.isfinite(z[mask]).all():
            raise NumericError("softmax_rows: non-finite logits")
        z = np.where(mask, z, -np.inf)
    elif not np.isfinite(z).all():
        raise NumericError("softmax_rows: non-finite logits")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    out = e / e.sum(axis=1, keepdims=True)

    def adjoint(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _emit(out, (logits,), adjoint)


# --------------------------------------------------------------------------
# structural operations


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    nd = tensors[0].data.ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"concat: axis {axis} out of range for {nd}-d tensors")
    axis %= nd
    for t in tensors[1:]:
        if t.data.ndim != nd or any(
            t.shape[k] != tensors[0].shape[k] for k in range(nd) if k != axis
        ):
            raise DimensionError(
                f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}"
            )
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def adjoint(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), adjoint)


def slice(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:  # noqa: A001
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"slice: axis {axis} out of range for shape {x.shape}")
    axis %= nd
    n = x.shape[axis]
    if not 0 <= start <= stop <= n:
        raise DimensionError(f"slice: range {start}..{stop} outside 0..{n}")
    index = [np.s_[:]] * nd
    index[axis] = np.s_[start:stop]
    index = tuple(index)
    shape = x.shape

    def adjoint(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _emit(x.data[index].copy(), (x,), adjoint)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows ``x[idx]``; repeated indices accumulate in the adjoint."""
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def adjoint(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(x.data[idx], (x,), adjoint)


def scatter_matrix(values: Tensor, rows: np.ndarray, cols: np.ndarray,
                   shape: tuple[int, int]) -> Tensor:
    """Place a P x 1 column of values at (rows[p], cols[p]) of a zero matrix."""
    if values.shape != (len(rows), 1):
        raise DimensionError(f"scatter_matrix: values {values.shape} vs {len(rows)} positions")
    out = np.zeros(shape)
    out[rows, cols] = values.data[:, 0]
    return _emit(out, (values,), lambda g: (g[rows, cols][:, None],))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def point_extent(points: Tensor) -> Tensor:
    """Axis-aligned extent of the 3-D points packed in each row.

    Input M x 3k (k points, xyz interleaved); output M x 6 as
    [min x, min y, min z, max x, max y, max z].  Adjoints go to the arg-extreme.
    """
    m, w = points.shape
    if w % 3:
        raise DimensionError(f"point_extent: row width {w} is not a multiple of 3")
    p = points.data.reshape(m, w // 3, 3)
    lo_i = p.argmin(axis=1)
    hi_i = p.argmax(axis=1)
    rows = np.arange(m)[:, None]
    axes = np.arange(3)[None, :]
    out = np.concatenate([p[rows, lo_i, axes], p[rows, hi_i, axes]], axis=1)

    def adjoint(g):
        full = np.zeros_like(p)
        np.add.at(full, (rows, lo_i, axes), g[:, :3])
        np.add.at(full, (rows, hi_i, axes), g[:, 3:])
        return (full.reshape(m, w),)

    return _emit(out, (points,), adjoint)


# --------------------------------------------------------------------------
# checking


def numerical_gradient(f: Callable[[], float], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to ``param``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        up = f()
        flat[k] = orig - eps
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), elementwise then maximised."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
