"""
Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records primitive operations in execution order while a model is
traced once; afterwards ``forward`` replays the recording for new leaf values
and ``backward`` accumulates adjoints from a selected output back to the
leaves. Constants (data, finite-difference operators) live on the tape but
never receive adjoints.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from kan_compact.errors import EvaluationError, KancError
from kan_compact.splines import KnotVector, basis_deriv, basis_eval

logger = logging.getLogger(__name__)


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    attrs: dict[str, Any] = field(default_factory=dict)
    name: str | None = None


@dataclass(frozen=True)
class Primitive:
    """Forward map returning (value, saved) and vector-Jacobian products per input."""

    forward: Callable[..., tuple[np.ndarray, Any]]
    vjp: Callable[..., tuple[np.ndarray | None, ...]]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _elementwise(f, df) -> Primitive:
    def forward(x, **_):
        return f(x), None

    def vjp(g, x, out, saved, **_):
        return (g * df(x, out),)

    return Primitive(forward, vjp)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _silu_forward(x, **_):
    s = _sigmoid(x)
    return x * s, s


def _silu_vjp(g, x, out, s, **_):
    return (g * s * (1.0 + x * (1.0 - s)),)


def _pow_forward(x, p, **_):
    return np.power(x, p), None


def _pow_vjp(g, x, out, saved, p, **_):
    return (g * p * np.power(x, p - 1),)


def _sum_forward(x, axis, keepdims, **_):
    return np.sum(x, axis=axis, keepdims=keepdims), None


def _sum_vjp(g, x, out, saved, axis, keepdims, **_):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _reshape_forward(x, shape, **_):
    return np.reshape(x, shape), None


def _reshape_vjp(g, x, out, saved, shape, **_):
    return (np.reshape(g, x.shape),)


def _getitem_forward(x, index, **_):
    return np.array(x[index], dtype=np.float64), None


def _getitem_vjp(g, x, out, saved, index, **_):
    grad = np.zeros_like(x)
    np.add.at(grad, index, g)
    return (grad,)


def _einsum_forward(a, b, subscripts, **_):
    return np.einsum(subscripts, a, b, optimize=True), None


def _einsum_vjp(g, a, b, out, saved, subscripts, **_):
    operands, result = subscripts.split("->")
    sa, sb = operands.split(",")
    grad_a = np.einsum(f"{result},{sb}->{sa}", g, b, optimize=True)
    grad_b = np.einsum(f"{result},{sa}->{sb}", g, a, optimize=True)
    return grad_a, grad_b


def _linmap_forward(x, matrix, **_):
    return np.asarray(matrix @ x), None


def _linmap_vjp(g, x, out, saved, matrix, **_):
    return (np.asarray(matrix.T @ g),)


def _spline_forward(x, coeffs, knots: KnotVector, **_):
    B = basis_eval(knots, x)  # (p, in, nb)
    return np.einsum("pin,ion->pio", B, coeffs, optimize=True), B


def _spline_vjp(g, x, coeffs, out, B, knots: KnotVector, **_):
    dB = basis_deriv(knots, x)
    grad_x = np.einsum("pin,ion,pio->pi", dB, coeffs, g, optimize=True)
    grad_c = np.einsum("pin,pio->ion", B, g, optimize=True)
    return grad_x, grad_c


def _binary(f, vjp) -> Primitive:
    def forward(a, b, **_):
        return f(a, b), None

    return Primitive(forward, vjp)


PRIMITIVES: dict[str, Primitive] = {
    "add": _binary(
        np.add,
        lambda g, a, b, out, s, **_: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    ),
    "sub": _binary(
        np.subtract,
        lambda g, a, b, out, s, **_: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    ),
    "mul": _binary(
        np.multiply,
        lambda g, a, b, out, s, **_: (
            _unbroadcast(g * b, a.shape),
            _unbroadcast(g * a, b.shape),
        ),
    ),
    "div": _binary(
        np.divide,
        lambda g, a, b, out, s, **_: (
            _unbroadcast(g / b, a.shape),
            _unbroadcast(-g * a / b**2, b.shape),
        ),
    ),
    "neg": _elementwise(np.negative, lambda x, y: -np.ones_like(x)),
    "pow": Primitive(_pow_forward, _pow_vjp),
    "exp": _elementwise(np.exp, lambda x, y: y),
    "log": _elementwise(np.log, lambda x, y: 1.0 / x),
    "sin": _elementwise(np.sin, lambda x, y: np.cos(x)),
    "cos": _elementwise(np.cos, lambda x, y: -np.sin(x)),
    "tan": _elementwise(np.tan, lambda x, y: 1.0 + y**2),
    "tanh": _elementwise(np.tanh, lambda x, y: 1.0 - y**2),
    "arctan": _elementwise(np.arctan, lambda x, y: 1.0 / (1.0 + x**2)),
    "sqrt": _elementwise(np.sqrt, lambda x, y: 0.5 / y),
    "abs": _elementwise(np.abs, lambda x, y: np.sign(x)),
    "silu": Primitive(_silu_forward, _silu_vjp),
    "sum": Primitive(_sum_forward, _sum_vjp),
    "reshape": Primitive(_reshape_forward, _reshape_vjp),
    "getitem": Primitive(_getitem_forward, _getitem_vjp),
    "einsum": Primitive(_einsum_forward, _einsum_vjp),
    "linmap": Primitive(_linmap_forward, _linmap_vjp),
    "spline": Primitive(_spline_forward, _spline_vjp),
}


class Tape:
    """Single-writer recording of a computation; replay with ``forward``."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.values: list[np.ndarray] = []
        self.adjoints: list[np.ndarray | None] = []
        self.saved: list[Any] = []
        self.requires_grad: list[bool] = []
        self.leaves: list[int] = []
        self.outputs: list[int] = []

    def __len__(self):
        return len(self.nodes)

    # --- Recording ---
    def leaf(self, value, name: str | None = None) -> "Var":
        index = self._append(
            Node("leaf", (), name=name or f"leaf{len(self.leaves)}"),
            np.array(value, dtype=np.float64),
            requires_grad=True,
        )
        self.leaves.append(index)
        return Var(self, index)

    def constant(self, value) -> "Var":
        if isinstance(value, Var):
            return value
        value = np.asarray(value, dtype=np.float64)
        return Var(self, self._append(Node("const", ()), value, requires_grad=False))

    def apply(self, op: str, *args, **attrs) -> "Var":
        inputs = tuple(self.constant(a).index for a in args)
        node = Node(op, inputs, attrs)
        value, saved = PRIMITIVES[op].forward(
            *(self.values[i] for i in inputs), **attrs
        )
        index = self._append(
            node,
            np.asarray(value, dtype=np.float64),
            requires_grad=any(self.requires_grad[i] for i in inputs),
            saved=saved,
        )
        self._check_finite(index)
        return Var(self, index)

    def mark_output(self, var: "Var") -> int:
        self.outputs.append(var.index)
        return len(self.outputs) - 1

    def _append(self, node, value, requires_grad, saved=None) -> int:
        self.nodes.append(node)
        self.values.append(value)
        self.adjoints.append(None)
        self.saved.append(saved)
        self.requires_grad.append(requires_grad)
        return len(self.nodes) - 1

    def _check_finite(self, index: int):
        if not np.all(np.isfinite(self.values[index])):
            raise EvaluationError(index, self.nodes[index].op)

    @property
    def leaf_names(self) -> list[str]:
        return [self.nodes[i].name for i in self.leaves]


class Var:
    """Handle on one tape node with arithmetic operators."""

    __array_priority__ = 1000

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return self.tape.apply("add", self, other)

    def __radd__(self, other):
        return self.tape.apply("add", other, self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, other)

    def __rsub__(self, other):
        return self.tape.apply("sub", other, self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, other)

    def __rmul__(self, other):
        return self.tape.apply("mul", other, self)

    def __truediv__(self, other):
        return self.tape.apply("div", self, other)

    def __rtruediv__(self, other):
        return self.tape.apply("div", other, self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, p: float):
        return self.tape.apply("pow", self, p=float(p))

    def __getitem__(self, index):
        return self.tape.apply("getitem", self, index=index)

    def __matmul__(self, other):
        return einsum("pi,io->po", self, other)


# --- Primitive helpers ---
def _unary(op: str):
    def apply(x: Var) -> Var:
        return x.tape.apply(op, x)

    apply.__name__ = op
    return apply


exp = _unary("exp")
log = _unary("log")
sin = _unary("sin")
cos = _unary("cos")
tan = _unary("tan")
tanh = _unary("tanh")
arctan = _unary("arctan")
sqrt = _unary("sqrt")
absolute = _unary("abs")
silu = _unary("silu")


def sum(x: Var, axis: int | None = None, keepdims: bool = False) -> Var:  # noqa: A001
    return x.tape.apply("sum", x, axis=axis, keepdims=keepdims)


def mean(x: Var) -> Var:
    return sum(x) * (1.0 / x.value.size)


def reshape(x: Var, shape: tuple[int, ...]) -> Var:
    return x.tape.apply("reshape", x, shape=shape)


def einsum(subscripts: str, a: Var, b) -> Var:
    return a.tape.apply("einsum", a, b, subscripts=subscripts)


def linmap(matrix, x: Var) -> Var:
    """Apply a constant (dense or scipy.sparse) matrix to a vector."""
    return x.tape.apply("linmap", x, matrix=matrix)


def spline(x: Var, coeffs: Var, knots: KnotVector) -> Var:
    """Edge splines sum_n c[i,o,n] B_n(x[p,i]) as one primitive, shape (p, in, out)."""
    return x.tape.apply("spline", x, coeffs, knots=knots)


# --- Evaluation ---
def forward(tape: Tape, leaf_values: Sequence[np.ndarray]) -> list[np.ndarray]:
    """
    Replay the tape with new leaf values.

    Parameters:
    - tape: recorded computation
    - leaf_values: one array per leaf, in creation order
    Returns:
    - values of the marked outputs (or of the last node when none are marked)
    """
    if len(leaf_values) != len(tape.leaves):
        raise KancError(f"expected {len(tape.leaves)} leaf values, got {len(leaf_values)}")
    for index, value in zip(tape.leaves, leaf_values):
        value = np.array(value, dtype=np.float64)
        if value.shape != tape.values[index].shape:
            raise KancError(
                f"leaf {tape.nodes[index].name} expects shape {tape.values[index].shape}"
            )
        tape.values[index] = value
        tape._check_finite(index)

    for index, node in enumerate(tape.nodes):
        if node.op in ("leaf", "const"):
            continue
        value, saved = PRIMITIVES[node.op].forward(
            *(tape.values[i] for i in node.inputs), **node.attrs
        )
        tape.values[index] = np.asarray(value, dtype=np.float64)
        tape.saved[index] = saved
        tape._check_finite(index)

    outputs = tape.outputs or [len(tape.nodes) - 1]
    return [tape.values[i] for i in outputs]


def backward(tape: Tape, output_index: int = 0) -> dict[str, np.ndarray]:
    """Gradient of the selected output (summed if not scalar) with respect to every leaf."""
    outputs = tape.outputs or [len(tape.nodes) - 1]
    if not 0 <= output_index < len(outputs):
        raise KancError(f"output index {output_index} out of range")
    seed = outputs[output_index]

    tape.adjoints = [None] * len(tape.nodes)
    tape.adjoints[seed] = np.ones_like(tape.values[seed])

    for index in range(seed, -1, -1):
        g = tape.adjoints[index]
        node = tape.nodes[index]
        if g is None or not node.inputs:
            continue
        args = [tape.values[i] for i in node.inputs]
        grads = PRIMITIVES[node.op].vjp(
            g, *args, tape.values[index], tape.saved[index], **node.attrs
        )
        for i, grad in zip(node.inputs, grads):
            if grad is None or not tape.requires_grad[i]:
                continue
            if tape.adjoints[i] is None:
                tape.adjoints[i] = np.array(grad, dtype=np.float64)
            else:
                tape.adjoints[i] = tape.adjoints[i] + grad

    return {
        tape.nodes[i].name: (
            tape.adjoints[i] if tape.adjoints[i] is not None else np.zeros_like(tape.values[i])
        )
        for i in tape.leaves
    }


def grad_check(
    tape: Tape,
    leaf_values: Sequence[np.ndarray],
    step: float = 1e-5,
    output_index: int = 0,
    floor: float = 1e-12,
) -> float:
    """
    Largest relative disagreement between backward and central differences.

    Returns max over leaf entries of |analytic - numeric| / (|analytic| + floor).
    """
    if not 0 < step <= 1e-2:
        raise KancError(f"finite-difference step must lie in (0, 1e-2], got {step}")
    values = [np.array(v, dtype=np.float64) for v in leaf_values]

    def objective() -> float:
        return float(np.sum(forward(tape, values)[output_index]))

    objective()
    analytic = backward(tape, output_index)

    worst = 0.0
    for name, value in zip(tape.leaf_names, values):
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + step
            upper = objective()
            flat[j] = original - step
            lower = objective()
            flat[j] = original
            numeric = (upper - lower) / (2.0 * step)
            worst = max(worst, abs(grad[j] - numeric) / (abs(grad[j]) + floor))

    forward(tape, values)
    logger.debug("gradient check over %d leaves: max relative error %.3e", len(values), worst)
    return worst
