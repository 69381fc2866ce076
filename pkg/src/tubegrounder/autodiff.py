"""Reverse-mode automatic differentiation on small dense matrices.

All values are C-contiguous float64 arrays of rank 2: a scalar is stored as
1x1 and a row vector as 1xn, so "shape + row-major data" is literally the
ndarray layout. Every operation appends one node to a :class:`Tape`;
``Tape.backward`` replays the nodes exactly once in reverse insertion order.

The graph is rebuilt from scratch for every forward pass (define-by-run).
Broadcasting is deliberately limited to adding a 1xk bias row to an mxk
matrix; anything else raises so each backward rule stays easy to audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

__all__ = [
    "Tape",
    "TapeNode",
    "as_matrix",
    "grad_check",
    "numeric_gradients",
    "registered_ops",
]


def as_matrix(value, name: str = "tensor") -> np.ndarray:
    """Coerce ``value`` to a finite, C-contiguous float64 matrix.

    Scalars become 1x1, flat sequences become 1xn row vectors. Raises
    DimensionError for rank > 2 and DomainError for NaN/Inf entries.
    """
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, arr.size)
    elif arr.ndim != 2:
        raise DimensionError(f"{name} must be rank <= 2, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DomainError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


@dataclass
class TapeNode:
    """One recorded operation: its value, gradient buffer and provenance."""

    value: np.ndarray
    grad: np.ndarray
    op: str
    parents: tuple[int, ...]
    index: int
    tape: "Tape"
    aux: tuple = field(default=())

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() requires a scalar node, got {self.value.shape}")
        return float(self.value[0, 0])

    # Arithmetic sugar; each dunder delegates to the owning tape.
    def __add__(self, other: "TapeNode") -> "TapeNode":
        return self.tape.add(self, other)

    def __sub__(self, other: "TapeNode") -> "TapeNode":
        return self.tape.add(self, self.tape.scale(other, -1.0))

    def __mul__(self, other: "TapeNode") -> "TapeNode":
        return self.tape.mul(self, other)

    def __matmul__(self, other: "TapeNode") -> "TapeNode":
        return self.tape.matmul(self, other)

    def __neg__(self) -> "TapeNode":
        return self.tape.scale(self, -1.0)


BackwardRule = Callable[[TapeNode, Sequence[TapeNode]], None]

_BACKWARD: dict[str, BackwardRule] = {}


def _rule(tag: str):
    def register(fn: BackwardRule) -> BackwardRule:
        _BACKWARD[tag] = fn
        return fn

    return register


def registered_ops() -> tuple[str, ...]:
    """Tags of every differentiable operation with a backward rule."""
    return tuple(sorted(_BACKWARD))


class Tape(object):
    """Append-only operation record supporting one reverse sweep.

    Nodes reference parents by index, so the tape is topologically ordered
    by construction. A tape is single-threaded; build a fresh one per
    forward pass.
    """

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, value: np.ndarray, op: str, parents: tuple[TapeNode, ...], aux: tuple = ()) -> TapeNode:
        for p in parents:
            if p.tape is not self:
                raise ContractError("operands must belong to the same tape")
        # Overflow surfaces here as a DomainError, not a numpy warning.
        if not np.isfinite(value).all():
            raise DomainError(f"op '{op}' produced non-finite values")
        node = TapeNode(
            value=value,
            grad=np.zeros_like(value),
            op=op,
            parents=tuple(p.index for p in parents),
            index=len(self.nodes),
            tape=self,
            aux=aux,
        )
        self.nodes.append(node)
        return node

    # ------------------------------------------------------------------ leaves

    def leaf(self, value) -> TapeNode:
        """Insert an input (parameter or constant) node."""
        return self._push(as_matrix(value).copy(), "leaf", ())

    # ------------------------------------------------------------------- ops

    def matmul(self, a: TapeNode, b: TapeNode) -> TapeNode:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul inner dims differ: {a.shape} x {b.shape}")
        return self._push(a.value @ b.value, "matmul", (a, b))

    def add(self, a: TapeNode, b: TapeNode) -> TapeNode:
        """Elementwise sum; also accepts a 1xk bias row added to an mxk matrix."""
        if a.shape == b.shape:
            return self._push(a.value + b.value, "add", (a, b))
        if b.shape == (1, a.shape[1]):
            return self._push(a.value + b.value, "add_bias", (a, b))
        raise DimensionError(f"add shapes incompatible: {a.shape} vs {b.shape}")

    def mul(self, a: TapeNode, b: TapeNode) -> TapeNode:
        if a.shape != b.shape:
            raise DimensionError(f"mul shapes differ: {a.shape} vs {b.shape}")
        with np.errstate(over="ignore"):
            value = a.value * b.value
        return self._push(value, "mul", (a, b))

    def tanh(self, a: TapeNode) -> TapeNode:
        return self._push(np.tanh(a.value), "tanh", (a,))

    def sigmoid(self, a: TapeNode) -> TapeNode:
        # Split by sign to avoid overflow in exp for large |x|.
        x = a.value
        out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return self._push(out, "sigmoid", (a,))

    def exp(self, a: TapeNode) -> TapeNode:
        with np.errstate(over="ignore"):
            value = np.exp(a.value)
        return self._push(value, "exp", (a,))

    def log(self, a: TapeNode) -> TapeNode:
        if (a.value <= 0).any():
            raise DomainError("log requires strictly positive inputs")
        return self._push(np.log(a.value), "log", (a,))

    def relu(self, a: TapeNode) -> TapeNode:
        return self._push(np.maximum(a.value, 0.0), "relu", (a,))

    def scale(self, a: TapeNode, factor: float) -> TapeNode:
        return self._push(a.value * float(factor), "scale", (a,), aux=(float(factor),))

    def shift(self, a: TapeNode, offset: float) -> TapeNode:
        return self._push(a.value + float(offset), "shift", (a,))

    def transpose(self, a: TapeNode) -> TapeNode:
        return self._push(np.ascontiguousarray(a.value.T), "transpose", (a,))

    def slice_cols(self, a: TapeNode, start: int, stop: int) -> TapeNode:
        if not (0 <= start < stop <= a.shape[1]):
            raise DimensionError(f"column slice [{start}:{stop}] out of range for {a.shape}")
        return self._push(np.ascontiguousarray(a.value[:, start:stop]), "slice_cols", (a,), aux=(start, stop))

    def stack_rows(self, rows: Iterable[TapeNode]) -> TapeNode:
        rows = tuple(rows)
        if not rows:
            raise DimensionError("stack_rows needs at least one row")
        width = rows[0].shape[1]
        for r in rows:
            if r.shape != (1, width):
                raise DimensionError(f"stack_rows expects 1x{width} rows, got {r.shape}")
        return self._push(np.vstack([r.value for r in rows]), "stack_rows", rows)

    def concat_scalars(self, items: Iterable[TapeNode]) -> TapeNode:
        items = tuple(items)
        if not items:
            raise DimensionError("concat_scalars needs at least one scalar")
        for s in items:
            if s.shape != (1, 1):
                raise DimensionError(f"concat_scalars expects 1x1 nodes, got {s.shape}")
        value = np.array([[s.item() for s in items]], dtype=np.float64)
        return self._push(value, "concat_scalars", items)

    def sum_all(self, a: TapeNode) -> TapeNode:
        return self._push(np.array([[a.value.sum()]]), "sum_all", (a,))

    def mean_all(self, a: TapeNode) -> TapeNode:
        return self.scale(self.sum_all(a), 1.0 / a.value.size)

    def max_scalars(self, items: Iterable[TapeNode]) -> tuple[TapeNode, int]:
        """Maximum of scalar nodes; gradient routes to the lowest-index argmax."""
        items = tuple(items)
        if not items:
            raise ContractError("max_scalars needs at least one scalar")
        values = [s.item() for s in items]
        for s in items:
            if s.shape != (1, 1):
                raise DimensionError(f"max_scalars expects 1x1 nodes, got {s.shape}")
        best = int(np.argmax(values))
        node = self._push(np.array([[values[best]]]), "max_scalars", items, aux=(best,))
        return node, best

    def softmax_row(self, a: TapeNode) -> TapeNode:
        """Row softmax of a 1xn vector, computed with max-subtraction."""
        if a.shape[0] != 1:
            raise DimensionError(f"softmax_row expects a 1xn row, got {a.shape}")
        shifted = a.value - a.value.max()
        e = np.exp(shifted)
        return self._push(e / e.sum(), "softmax_row", (a,))

    def log_softmax_row(self, a: TapeNode) -> TapeNode:
        if a.shape[0] != 1:
            raise DimensionError(f"log_softmax_row expects a 1xn row, got {a.shape}")
        shifted = a.value - a.value.max()
        return self._push(shifted - np.log(np.exp(shifted).sum()), "log_softmax_row", (a,))

    def cosine(self, a: TapeNode, b: TapeNode) -> TapeNode:
        """Cosine similarity of two 1xn rows; 0 (with zero gradient) if either norm ~ 0."""
        if a.shape != b.shape or a.shape[0] != 1:
            raise DimensionError(f"cosine expects matching 1xn rows, got {a.shape} vs {b.shape}")
        na = float(np.linalg.norm(a.value))
        nb = float(np.linalg.norm(b.value))
        if na < 1e-12 or nb < 1e-12:
            return self._push(np.zeros((1, 1)), "cosine", (a, b), aux=(True,))
        value = (a.value @ b.value.T).item() / (na * nb)
        return self._push(np.array([[value]]), "cosine", (a, b), aux=(False,))

    # -------------------------------------------------------------- backward

    def backward(self, root: TapeNode) -> None:
        """Accumulate d(root)/d(node) into every node's ``grad``.

        Visits the tape once in strict reverse insertion order. The root
        must be a scalar node on this tape.
        """
        if root.tape is not self:
            raise ContractError("root node does not belong to this tape")
        if root.shape != (1, 1):
            raise ContractError(f"backward requires a scalar root, got shape {root.shape}")
        root.grad[0, 0] += 1.0
        for node in reversed(self.nodes):
            if node.op == "leaf" or not node.parents:
                continue
            _BACKWARD[node.op](node, [self.nodes[i] for i in node.parents])


# Backward rules. Each receives the finished node and its parent nodes and
# accumulates into the parents' grad buffers.


@_rule("matmul")
def _bw_matmul(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    a, b = parents
    a.grad += node.grad @ b.value.T
    b.grad += a.value.T @ node.grad


@_rule("add")
def _bw_add(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad
    parents[1].grad += node.grad


@_rule("add_bias")
def _bw_add_bias(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad
    parents[1].grad += node.grad.sum(axis=0, keepdims=True)


@_rule("mul")
def _bw_mul(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    a, b = parents
    a.grad += node.grad * b.value
    b.grad += node.grad * a.value


@_rule("tanh")
def _bw_tanh(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad * (1.0 - node.value * node.value)


@_rule("sigmoid")
def _bw_sigmoid(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad * node.value * (1.0 - node.value)


@_rule("exp")
def _bw_exp(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad * node.value


@_rule("log")
def _bw_log(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad / parents[0].value


@_rule("relu")
def _bw_relu(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad * (parents[0].value > 0)


@_rule("scale")
def _bw_scale(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad * node.aux[0]


@_rule("shift")
def _bw_shift(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad


@_rule("transpose")
def _bw_transpose(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad.T


@_rule("slice_cols")
def _bw_slice_cols(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    start, stop = node.aux
    parents[0].grad[:, start:stop] += node.grad


@_rule("stack_rows")
def _bw_stack_rows(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    for i, p in enumerate(parents):
        p.grad += node.grad[i : i + 1, :]


@_rule("concat_scalars")
def _bw_concat_scalars(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    for i, p in enumerate(parents):
        p.grad[0, 0] += node.grad[0, i]


@_rule("sum_all")
def _bw_sum_all(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[0].grad += node.grad[0, 0]


@_rule("max_scalars")
def _bw_max_scalars(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    parents[node.aux[0]].grad[0, 0] += node.grad[0, 0]


@_rule("softmax_row")
def _bw_softmax_row(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    y = node.value
    dot = float((node.grad * y).sum())
    parents[0].grad += y * (node.grad - dot)


@_rule("log_softmax_row")
def _bw_log_softmax_row(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    p = np.exp(node.value)
    parents[0].grad += node.grad - p * node.grad.sum()


@_rule("cosine")
def _bw_cosine(node: TapeNode, parents: Sequence[TapeNode]) -> None:
    guarded = node.aux[0]
    if guarded:
        return
    a, b = parents
    na = float(np.linalg.norm(a.value))
    nb = float(np.linalg.norm(b.value))
    c = float(node.value[0, 0])
    g = float(node.grad[0, 0])
    a.grad += g * (b.value / (na * nb) - c * a.value / (na * na))
    b.grad += g * (a.value / (na * nb) - c * b.value / (nb * nb))


# ----------------------------------------------------------- gradient check

GraphBuilder = Callable[[Tape, dict[str, TapeNode]], TapeNode]


def _evaluate(build: GraphBuilder, params: Mapping[str, np.ndarray]) -> float:
    tape = Tape()
    nodes = {name: tape.leaf(value) for name, value in params.items()}
    return build(tape, nodes).item()


def numeric_gradients(
    build: GraphBuilder, params: Mapping[str, np.ndarray], step: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central-difference gradients of ``build`` w.r.t. every param entry."""
    if step <= 0:
        raise ContractError("finite-difference step must be positive")
    grads: dict[str, np.ndarray] = {}
    work = {name: as_matrix(value, name).copy() for name, value in params.items()}
    for name, value in work.items():
        out = np.zeros_like(value)
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = _evaluate(build, work)
            flat[i] = orig - step
            lo = _evaluate(build, work)
            flat[i] = orig
            out.reshape(-1)[i] = (hi - lo) / (2.0 * step)
        grads[name] = out
    return grads


def grad_check(
    build: GraphBuilder,
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    floor: float = 1e-5,
) -> float:
    """Max relative disagreement between analytic and central-difference grads.

    The relative error per entry is |analytic - numeric| divided by
    max(``floor``, |analytic| + |numeric|); the max over all entries of all
    parameters is returned.

    The floor reflects the resolution of central differences: an entry whose
    gradient magnitudes fall below it can disagree only through roundoff in
    the two loss evaluations, so it is measured against the floor rather
    than against its own vanishing magnitude.
    """
    if floor <= 0:
        raise ContractError(f"relative-error floor must be positive, got {floor}")
    clean = {name: as_matrix(value, name) for name, value in params.items()}
    tape = Tape()
    nodes = {name: tape.leaf(value) for name, value in clean.items()}
    root = build(tape, nodes)
    tape.backward(root)
    analytic = {name: nodes[name].grad for name in clean}
    numeric = numeric_gradients(build, clean, step)
    worst = 0.0
    for name in clean:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(floor, np.abs(a) + np.abs(n))
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
