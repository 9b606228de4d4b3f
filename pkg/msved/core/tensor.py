"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive computes its output eagerly with numpy and, when one of its
inputs requires a gradient, records a backward rule on the output. Outputs
carry a creation sequence number, so sorting the nodes reachable from a loss
by that number replays them in execution order; `backward` walks that
order in reverse and hands every node its accumulated upstream gradient
exactly once.

Shapes must agree exactly. The only broadcast is the row-vector bias of
`affine`.
"""

import itertools
import os
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from loguru import logger

from msved.common.errors import ContractError, DimensionError, NumericError

BackwardRule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_sequence = itertools.count()
_state = threading.local()
_DEFAULT_CHECKED = os.environ.get("MSVED_CHECKED", "0") == "1"


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def is_checked() -> bool:
    return getattr(_state, "checked", _DEFAULT_CHECKED)


@contextmanager
def no_grad():
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def checked_mode(enabled: bool = True):
    """Raise NumericError as soon as any tensor holds NaN or Inf."""
    previous = is_checked()
    _state.checked = enabled
    try:
        yield
    finally:
        _state.checked = previous


def _ensure_finite(values: np.ndarray, op: str):
    if not np.all(np.isfinite(values)):
        bad = int(np.size(values) - np.count_nonzero(np.isfinite(values)))
        raise NumericError(f"{op}: {bad} non-finite value(s) in output of shape {values.shape}")


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "parents", "backward_rule", "seq", "op")

    def __init__(self, values, requires_grad: bool = False, op: str = "leaf"):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple["Tensor", ...] = ()
        self.backward_rule: BackwardRule | None = None
        self.seq = next(_sequence)
        self.op = op
        if is_checked():
            _ensure_finite(self.values, op)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def is_leaf(self) -> bool:
        return self.backward_rule is None

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    def __radd__(self, other):
        return add_scalar(self, float(other))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    def __rmul__(self, other):
        return mul_scalar(self, float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False, op="constant")


def _record(values: np.ndarray, parents: Sequence[Tensor], rule: BackwardRule, op: str) -> Tensor:
    needs_grad = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=needs_grad, op=op)
    if needs_grad:
        out.parents = tuple(parents)
        out.backward_rule = rule
    return out


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(op, a.shape, b.shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)
    av, bv = a.values, b.values
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias, with bias a row vector added to every row."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError("affine", x.shape, weight.shape)
    if bias.shape != (weight.shape[1],):
        raise DimensionError("affine bias", weight.shape, bias.shape)
    xv, wv = x.values, weight.values
    return _record(
        xv @ wv + bias.values,
        (x, weight, bias),
        lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)),
        "affine",
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _record(a.values + b.values, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _record(a.values - b.values, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _record(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.values * c, (a,), lambda g: (g * c,), "mul_scalar")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.values + c, (a,), lambda g: (g,), "add_scalar")


def neg(a: Tensor) -> Tensor:
    return _record(-a.values, (a,), lambda g: (-g,), "neg")


def sigmoid(x: Tensor) -> Tensor:
    # tanh form is stable for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * x.values))
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(x: Tensor) -> Tensor:
    xv = x.values
    out = np.logaddexp(0.0, xv)
    return _record(out, (x,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * xv)),), "softplus")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.values)
    return _record(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xv = x.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xv)
    return _record(out, (x,), lambda g: (g / xv,), "log")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise DimensionError("concat", tensors[0].shape, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return np.split(g, splits, axis=axis)

    return _record(np.concatenate([t.values for t in tensors], axis=axis), tensors, rule, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Stack equally shaped tensors along a new axis."""
    if not tensors:
        raise ContractError("stack needs at least one tensor")
    for t in tensors[1:]:
        _same_shape("stack", tensors[0], t)
    count = len(tensors)

    def rule(g):
        return [np.take(g, i, axis=axis) for i in range(count)]

    return _record(np.stack([t.values for t in tensors], axis=axis), tensors, rule, "stack")


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    """Column slice x[:, start:stop] of a matrix."""
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise DimensionError("columns", x.shape, (start, stop))
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _record(x.values[:, start:stop], (x,), rule, "columns")


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: out[i] = table[ids[i]]."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or ids.ndim != 1:
        raise DimensionError("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"embedding index out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def rule(g):
        full = np.zeros(shape)
        np.add.at(full, ids, g)
        return (full,)

    return _record(table.values[ids], (table,), rule, "embedding")


def _stable_softmax(values: np.ndarray, tau: float = 1.0) -> np.ndarray:
    shifted = (values - values.max(axis=-1, keepdims=True)) / tau
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _stable_log_softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(x: Tensor, tau: float = 1.0) -> Tensor:
    """Softmax of x / tau along the last axis."""
    if not tau > 0.0:
        raise ContractError(f"softmax temperature must be positive, got {tau}")
    out = _stable_softmax(x.values, tau)

    def rule(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner) / tau,)

    return _record(out, (x,), rule, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    out = _stable_log_softmax(x.values)
    probs = np.exp(out)

    def rule(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _record(out, (x,), rule, "log_softmax")


def masked_cross_entropy(logits: Tensor, targets, mask) -> Tensor:
    """Per-row -log softmax(logits)[target], zeroed where mask is 0.

    Returns a vector with one entry per row.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],) or mask.shape != targets.shape:
        raise DimensionError("masked_cross_entropy", logits.shape, targets.shape, mask.shape)
    rows = np.arange(logits.shape[0])
    log_probs = _stable_log_softmax(logits.values)
    out = -log_probs[rows, targets] * mask

    def rule(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (g * mask)[:, None],)

    return _record(out, (logits,), rule, "masked_cross_entropy")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _record(
            np.asarray(x.values.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum"
        )
    axis = axis % x.ndim

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(x.values.sum(axis=axis), (x,), rule, "sum")


def mean(x: Tensor) -> Tensor:
    return mul_scalar(sum(x), 1.0 / x.values.size)


def weighted_combine(weights: Tensor, items: Tensor) -> Tensor:
    """out[b] = sum_k weights[b, k] * items[b, k, :]."""
    if weights.ndim != 2 or items.ndim != 3 or weights.shape != items.shape[:2]:
        raise DimensionError("weighted_combine", weights.shape, items.shape)
    wv, iv = weights.values, items.values

    def rule(g):
        return (np.einsum("bd,bkd->bk", g, iv), wv[:, :, None] * g[:, None, :])

    return _record(np.einsum("bk,bkd->bd", wv, iv), (weights, items), rule, "weighted_combine")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

class ComputationTape:
    """The operations a loss depends on, in the order they executed."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationTape":
        seen = {id(output)}
        nodes = [output]
        pending = [output]
        while pending:
            node = pending.pop()
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    seen.add(id(parent))
                    nodes.append(parent)
                    pending.append(parent)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)

    def replay(self, output: Tensor, seed_grad: np.ndarray):
        grads = {id(output): seed_grad}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node), None)
            if upstream is None:
                continue
            if node.backward_rule is None:
                node.grad = upstream.copy() if node.grad is None else node.grad + upstream
                continue
            for parent, grad in zip(node.parents, node.backward_rule(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grad if key not in grads else grads[key] + grad


def backward(loss: Tensor):
    """Populate `.grad` of every leaf the scalar `loss` depends on.

    Gradients add onto whatever the leaves already hold; call `zero_grads`
    between optimizer steps.
    """
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.debug("backward on a tensor with no recorded operations; nothing to do")
        return
    tape = ComputationTape.from_output(loss)
    tape.replay(loss, np.ones(()))


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()
