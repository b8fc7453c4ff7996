"""Minimal dense-matrix engine with reverse-mode gradients.

Every value is a 2-D float64 matrix. Gradients are produced by explicit
per-op backward rules recorded on a :class:`Tape` in evaluation order and
replayed in reverse; there is no graph rewriting. One training step owns
one tape. Matrices are immutable by convention once created, so forward
evaluation (no active tape) is safe to run concurrently.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

NORM_FLOOR = 1e-12


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


class DomainInputError(ValueError):
    """An input lies outside an op's mathematical domain."""


class DegenerateInputError(ValueError):
    """An input row/column is degenerate (e.g. zero norm)."""


class EmptySumError(ValueError):
    """A reduction would run over an empty index set."""


class Tensor:
    """A rows x cols float64 matrix, optionally carrying a gradient buffer.

    ``grad`` accumulates additively across every use of the tensor during
    one backward pass; callers reset it between steps (``grad = None``).
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatchError(f"tensor must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def accumulate_grad(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_ACTIVE_TAPE: Optional["Tape"] = None


class Tape:
    """Records backward closures in evaluation order.

    Use as a context manager around one step's forward pass, then call
    :meth:`backward` on the scalar loss. Single-writer: nesting or sharing
    a tape across concurrent steps is not supported.
    """

    def __init__(self):
        self._steps: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def record(self, fn: Callable[[], None]) -> None:
        self._steps.append(fn)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and replay recorded ops in reverse."""
        if loss.data.size != 1:
            raise ShapeMismatchError(
                f"backward() expects a 1x1 loss tensor, got {loss.shape}"
            )
        loss.accumulate_grad(np.ones((1, 1)))
        for fn in reversed(self._steps):
            fn()


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable[[Tensor], Callable[[], None]]) -> Tensor:
    """Wrap an op result; record its backward closure if a tape is active."""
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE.record(backward(out))
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# binary ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. dA = dC @ B^T, dB = A^T @ dC."""
    if a.cols != b.rows:
        raise ShapeMismatchError(
            f"matmul: inner dims differ, {a.shape} x {b.shape}"
        )
    a_data, b_data = a.data, b.data

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g @ b_data.T)
            if b.requires_grad:
                b.accumulate_grad(a_data.T @ g)
        return fn

    return _result(a_data @ b_data, (a, b), backward)


def _broadcast_check(a: Tensor, b: Tensor, opname: str) -> None:
    # b may equal a's shape, or be a 1 x cols row vector, or rows x 1 column
    # vector; anything wider is out of scope for this engine.
    if b.shape == a.shape:
        return
    if b.rows == 1 and b.cols == a.cols:
        return
    if b.cols == 1 and b.rows == a.rows:
        return
    raise ShapeMismatchError(f"{opname}: shapes {a.shape} and {b.shape} do not align")


def _reduce_to(shape: tuple[int, int], g: np.ndarray) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1:
        return g.sum(axis=0, keepdims=True)
    return g.sum(axis=1, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; second operand may be a row or column vector."""
    _broadcast_check(a, b, "add")

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(_reduce_to(b.shape, g))
        return fn

    return _result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """a - b with the same broadcasting rules as :func:`add`."""
    _broadcast_check(a, b, "sub")

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(-_reduce_to(b.shape, g))
        return fn

    return _result(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product; second operand may be a row or column vector."""
    _broadcast_check(a, b, "mul")
    a_data, b_data = a.data, b.data

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g * b_data)
            if b.requires_grad:
                b.accumulate_grad(_reduce_to(b.shape, g * a_data))
        return fn

    return _result(a_data * b_data, (a, b), backward)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack two matrices vertically."""
    if a.cols != b.cols:
        raise ShapeMismatchError(f"concat_rows: col counts differ, {a.shape} vs {b.shape}")
    na = a.rows

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g[:na])
            if b.requires_grad:
                b.accumulate_grad(g[na:])
        return fn

    return _result(np.vstack([a.data, b.data]), (a, b), backward)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Stack two matrices horizontally."""
    if a.rows != b.rows:
        raise ShapeMismatchError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    ca = a.cols

    def backward(out: Tensor):
        def fn():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(g[:, :ca])
            if b.requires_grad:
                b.accumulate_grad(g[:, ca:])
        return fn

    return _result(np.hstack([a.data, b.data]), (a, b), backward)


# ---------------------------------------------------------------------------
# unary / constant-operand ops


def transpose(a: Tensor) -> Tensor:
    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(out.grad.T)
        return fn

    return _result(a.data.T.copy(), (a,), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar (no gradient for the scalar)."""
    c = float(c)

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(c * out.grad)
        return fn

    return _result(c * a.data, (a,), backward)


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(out.grad)
        return fn

    return _result(a.data + c, (a,), backward)


def mul_const(a: Tensor, k: Union[np.ndarray, float]) -> Tensor:
    """Hadamard product with a constant array (masks, weights)."""
    k_arr = np.asarray(k, dtype=np.float64)
    if k_arr.ndim == 2 and k_arr.shape != a.shape:
        raise ShapeMismatchError(f"mul_const: {a.shape} vs constant {k_arr.shape}")

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(out.grad * k_arr)
        return fn

    return _result(a.data * k_arr, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(out.grad * out_data)
        return fn

    return _result(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        bad = np.argwhere(a.data <= 0.0)[0]
        raise DomainInputError(
            f"log: non-positive entry {a.data[bad[0], bad[1]]!r} at ({bad[0]}, {bad[1]})"
        )
    a_data = a.data

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(out.grad / a_data)
        return fn

    return _result(np.log(a_data), (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(out.grad * mask)
        return fn

    return _result(np.where(mask, a.data, 0.0), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(out.grad * (1.0 - out_data * out_data))
        return fn

    return _result(out_data, (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                g = out.grad
                dot = (g * out_data).sum(axis=1, keepdims=True)
                a.accumulate_grad(out_data * (g - dot))
        return fn

    return _result(out_data, (a,), backward)


def row_l2_normalize(a: Tensor) -> Tensor:
    """Scale each row to unit L2 norm.

    Rows with norm below ``NORM_FLOOR`` are rejected rather than clamped,
    so degenerate embeddings fail loudly. Backward applies the projection
    rule d x = (g - <g, u> u) / |x| with u the unit row.
    """
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        idx = int(np.argmax(norms.ravel() < NORM_FLOOR))
        raise DegenerateInputError(f"row_l2_normalize: row {idx} has norm < {NORM_FLOOR}")
    out_data = a.data / norms

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                g = out.grad
                dot = (g * out_data).sum(axis=1, keepdims=True)
                a.accumulate_grad((g - dot * out_data) / norms)
        return fn

    return _result(out_data, (a,), backward)


def log_sum_exp_rows(a: Tensor, exclude_diagonal: bool = False) -> Tensor:
    """Row-wise log(sum(exp)), max-shifted, as a rows x 1 column.

    With ``exclude_diagonal`` the term j = i is dropped from row i; the
    matrix must then be square and at least 2 x 2 so every row keeps at
    least one term.
    """
    data = a.data
    if exclude_diagonal:
        if a.rows != a.cols:
            raise ShapeMismatchError(
                f"log_sum_exp_rows: exclude_diagonal needs a square matrix, got {a.shape}"
            )
        if a.rows < 2:
            raise EmptySumError(
                "log_sum_exp_rows: excluding the diagonal of a 1x1 matrix leaves an empty sum"
            )
        include = ~np.eye(a.rows, dtype=bool)
    else:
        include = np.ones(a.shape, dtype=bool)

    # Shift by the row max over *included* entries so the largest surviving
    # exponent is exactly 1.
    shifted_max = np.where(include, data, -np.inf).max(axis=1, keepdims=True)
    e = np.exp(data - shifted_max) * include
    sums = e.sum(axis=1, keepdims=True)
    out_data = np.log(sums) + shifted_max
    weights = e / sums  # softmax over included entries; rows sum to 1

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(out.grad * weights)
        return fn

    return _result(out_data, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(np.full(shape, out.grad[0, 0]))
        return fn

    return _result(np.array([[a.data.sum()]]), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    shape = a.shape
    size = a.data.size

    def backward(out: Tensor):
        def fn():
            if a.requires_grad:
                a.accumulate_grad(np.full(shape, out.grad[0, 0] / size))
        return fn

    return _result(np.array([[a.data.mean()]]), (a,), backward)
