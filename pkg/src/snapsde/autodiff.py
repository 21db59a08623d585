"""Reverse-mode automatic differentiation over numpy arrays.

A growth-only tape records array-valued operations; ``gradient`` replays
it backwards to accumulate adjoints. Every primitive here dispatches on
its arguments: given plain numbers/arrays it computes with numpy directly,
given :class:`Var` operands it also records the step. Model and loss code
is therefore written once and works both inside and outside the tape.

Supported primitives: +, -, *, /, power, exp, log, sqrt, tanh, relu,
sigmoid, elementwise min/max, sums/means, squared norm, matmul, column
select/stack, and the RBF gram matrix (backed by :mod:`snapsde.backend`).
The rectifier derivative at exactly 0 is defined as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend


class DomainError(ArithmeticError):
    """An input left a primitive's domain (division by zero, log <= 0, ...)."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared; carries the offending primitive."""


class _Node:
    __slots__ = ("value", "vjp", "op")

    def __init__(self, value, vjp, op):
        self.value = value
        self.vjp = vjp  # callable g -> iterable of (parent_index, grad)
        self.op = op


class Tape:
    """Append-only computation record; one per objective evaluation."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def leaf(self, value) -> "Var":
        return self._record(np.asarray(value, dtype=np.float64), None, "leaf")

    def _record(self, value, vjp, op) -> "Var":
        self.nodes.append(_Node(value, vjp, op))
        return Var(self, len(self.nodes) - 1)

    def __len__(self):
        return len(self.nodes)


class Var:
    """Handle to one node of a tape; behaves like its array value."""

    __slots__ = ("tape", "index")
    # keep numpy from absorbing Var into object arrays; defer to our operators
    __array_ufunc__ = None

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return power(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _is_var(x):
    return isinstance(x, Var)


def value_of(x):
    """Plain value of a Var, or the input unchanged."""
    return x.value if isinstance(x, Var) else x


_val = value_of


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(g, shape):
    """Reduce an upstream gradient back to the shape of its input."""
    if np.shape(g) == shape:
        return g
    if shape == ():
        return np.sum(g)
    nd_extra = np.ndim(g) - len(shape)
    if nd_extra > 0:
        g = g.sum(axis=tuple(range(nd_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(op_name, a, b, forward, vjp_a, vjp_b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    value = forward(av, bv)
    if tape is None:
        return value
    sa, sb = np.shape(av), np.shape(bv)

    def vjp(g):
        out = []
        if _is_var(a):
            out.append((a.index, _unbroadcast(vjp_a(g, av, bv, value), sa)))
        if _is_var(b):
            out.append((b.index, _unbroadcast(vjp_b(g, av, bv, value), sb)))
        return out

    return tape._record(value, vjp, op_name)


def _unary(op_name, a, forward, vjp_fn):
    if not _is_var(a):
        return forward(a)
    av = a.value
    value = forward(av)

    def vjp(g):
        return [(a.index, vjp_fn(g, av, value))]

    return a.tape._record(value, vjp, op_name)


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y, v: g, lambda g, x, y, v: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y, v: g, lambda g, x, y, v: -g)


def mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y, v: g * y, lambda g, x, y, v: g * x)


def div(a, b):
    def forward(x, y):
        with np.errstate(divide="raise", invalid="raise"):
            try:
                return x / y
            except FloatingPointError as exc:
                raise DomainError(f"div: {exc}") from None

    return _binary("div", a, b, forward,
                   lambda g, x, y, v: g / y,
                   lambda g, x, y, v: -g * v / y)


def neg(a):
    return _unary("neg", a, lambda x: -x, lambda g, x, v: -g)


def power(a, b):
    """a ** b; a variable exponent requires a strictly positive base."""

    def forward(x, y):
        with np.errstate(invalid="raise"):
            try:
                return x**y
            except FloatingPointError:
                raise DomainError("power: negative base with real exponent") from None

    def vjp_a(g, x, y, v):
        return g * y * x ** (np.asarray(y) - 1.0)

    def vjp_b(g, x, y, v):
        if np.any(np.asarray(x) <= 0.0):
            raise DomainError("power: d/d(exponent) needs base > 0")
        return g * v * np.log(x)

    return _binary("power", a, b, forward, vjp_a, vjp_b)


def exp(a):
    return _unary("exp", a, np.exp, lambda g, x, v: g * v)


def log(a):
    def forward(x):
        if np.any(np.asarray(x) <= 0.0):
            raise DomainError("log: input <= 0")
        return np.log(x)

    return _unary("log", a, forward, lambda g, x, v: g / x)


def sqrt(a):
    def forward(x):
        if np.any(np.asarray(x) < 0.0):
            raise DomainError("sqrt: negative input")
        return np.sqrt(x)

    return _unary("sqrt", a, forward, lambda g, x, v: 0.5 * g / v)


def tanh(a):
    return _unary("tanh", a, np.tanh, lambda g, x, v: g * (1.0 - v * v))


def relu(a):
    # derivative at exactly 0 is 0 (strict inequality in the mask)
    return _unary("relu", a, lambda x: np.maximum(x, 0.0),
                  lambda g, x, v: g * (np.asarray(x) > 0.0))


def sigmoid(a):
    def forward(x):
        x = np.asarray(x, dtype=np.float64)
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary("sigmoid", a, forward, lambda g, x, v: g * v * (1.0 - v))


def maximum(a, b):
    # ties route the gradient to the first argument
    return _binary("maximum", a, b, np.maximum,
                   lambda g, x, y, v: g * (np.asarray(x) >= np.asarray(y)),
                   lambda g, x, y, v: g * (np.asarray(x) < np.asarray(y)))


def minimum(a, b):
    return _binary("minimum", a, b, np.minimum,
                   lambda g, x, y, v: g * (np.asarray(x) <= np.asarray(y)),
                   lambda g, x, y, v: g * (np.asarray(x) > np.asarray(y)))


def vsum(a):
    return _unary("sum", a, np.sum,
                  lambda g, x, v: np.broadcast_to(g, np.shape(x)))


def vmean(a):
    def vjp(g, x, v):
        n = np.size(x)
        return np.broadcast_to(g / n, np.shape(x))

    return _unary("mean", a, np.mean, vjp)


def sq_norm(a):
    """Squared Euclidean norm (sum of squared entries)."""
    return vsum(mul(a, a))


def matmul(a, b):
    return _binary("matmul", a, b, lambda x, y: x @ y,
                   lambda g, x, y, v: g @ np.asarray(y).T,
                   lambda g, x, y, v: np.asarray(x).T @ g)


def take_col(a, j):
    """Column j of a 2-D array."""
    if not _is_var(a):
        return np.asarray(a)[:, j]
    av = a.value
    value = av[:, j].copy()

    def vjp(g):
        out = np.zeros_like(av)
        out[:, j] = g
        return [(a.index, out)]

    return a.tape._record(value, vjp, "take_col")


def take_slice(a, start, stop):
    """Contiguous slice of a 1-D array."""
    if not _is_var(a):
        return np.asarray(a)[start:stop]
    av = a.value
    value = av[start:stop].copy()

    def vjp(g):
        out = np.zeros_like(av)
        out[start:stop] = g
        return [(a.index, out)]

    return a.tape._record(value, vjp, "take_slice")


def reshape(a, shape):
    if not _is_var(a):
        return np.reshape(a, shape)
    av = a.value

    def vjp(g):
        return [(a.index, np.reshape(g, np.shape(av)))]

    return a.tape._record(np.reshape(av, shape), vjp, "reshape")


def stack_cols(cols):
    """Stack scalars into a vector, or (M,) vectors into an (M, k) matrix."""
    tape = _tape_of(*cols)
    vals = [np.asarray(_val(c), dtype=np.float64) for c in cols]
    axis = 0 if vals[0].ndim == 0 else 1
    value = np.stack(vals, axis=axis)
    if tape is None:
        return value

    def vjp(g):
        out = []
        for j, c in enumerate(cols):
            if _is_var(c):
                out.append((c.index, g[j] if axis == 0 else g[:, j]))
        return out

    return tape._record(value, vjp, "stack_cols")


def rbf_gram(a, b, lengthscale):
    """RBF gram matrix node; either side may be a constant or a Var."""
    ell = float(lengthscale)
    tape = _tape_of(a, b)
    av = np.atleast_2d(_val(a))
    bv = np.atleast_2d(_val(b))
    value = backend.rbf_gram(av, bv, ell)
    if tape is None:
        return value

    def vjp(g):
        out = []
        if _is_var(a):
            out.append((a.index, backend.rbf_gram_grad_x(av, bv, ell, value, g)))
        if _is_var(b):
            out.append(
                (b.index, backend.rbf_gram_grad_x(bv, av, ell, value.T, g.T))
            )
        return out

    return tape._record(value, vjp, "rbf_gram")


def gradient(out: Var, leaves) -> list[np.ndarray]:
    """Adjoints of a scalar output with respect to the given leaf Vars."""
    if not _is_var(out):
        raise TypeError("output is not on a tape")
    if np.shape(out.value) != ():
        raise ValueError("gradient target must be scalar")
    nodes = out.tape.nodes
    adjoint = [None] * (out.index + 1)
    adjoint[out.index] = np.asarray(1.0)
    for i in range(out.index, -1, -1):
        g = adjoint[i]
        if g is None:
            continue
        node = nodes[i]
        if node.vjp is None:
            continue
        for idx, contrib in node.vjp(g):
            if adjoint[idx] is None:
                adjoint[idx] = np.array(contrib, dtype=np.float64, copy=True)
            else:
                adjoint[idx] += contrib
    result = []
    for leaf in leaves:
        g = adjoint[leaf.index] if leaf.index <= out.index else None
        result.append(np.zeros(np.shape(leaf.value)) if g is None else g)
    return result


def apply_transforms(raw, transforms):
    """Map the raw vector to natural space; works on arrays and Vars.

    Entries marked 'exp' are exponentiated, the rest pass through. On the
    mixed path the exponential sees raw * mask, which is exactly 0 (so
    exp gives 1) on identity entries before masking away.
    """
    transforms = tuple(transforms)
    if all(t == "identity" for t in transforms):
        return raw
    if all(t == "exp" for t in transforms):
        return exp(raw)
    exp_mask = np.array([1.0 if t == "exp" else 0.0 for t in transforms])
    id_mask = 1.0 - exp_mask
    return raw * id_mask + exp(raw * exp_mask) * exp_mask


def value_and_grad(objective, params):
    """Evaluate ``objective`` on the natural-space vector; return (value, d/d raw).

    ``params`` needs ``raw`` (unconstrained vector) and ``transforms``
    ('identity' or 'exp' per entry); the positivity transforms are applied
    on the tape so the chain rule back to raw space is automatic.
    """
    tape = Tape()
    leaf = tape.leaf(np.asarray(params.raw, dtype=np.float64))
    out = objective(apply_transforms(leaf, params.transforms))
    if not _is_var(out):
        raise TypeError("objective did not produce a tape result")
    value = float(out.value)
    grads = np.asarray(gradient(out, [leaf])[0], dtype=np.float64)
    if not np.isfinite(value):
        raise NumericalError(f"objective value is {value}")
    if not np.all(np.isfinite(grads)):
        bad = int(np.flatnonzero(~np.isfinite(grads))[0])
        raise NumericalError(f"non-finite gradient in coordinate {bad}")
    return value, grads


def grad(objective, params) -> np.ndarray:
    """Gradient of a scalar objective with respect to the raw parameters."""
    return value_and_grad(objective, params)[1]


@dataclass
class GradientReport:
    """Analytic-versus-finite-difference comparison on the raw vector."""

    analytic: np.ndarray
    fd: np.ndarray
    rel_errors: np.ndarray
    max_rel_error: float
    flagged: tuple[int, ...]

    def __str__(self):
        lines = [
            f"coord {i}: analytic={a:+.6e}  fd={f:+.6e}  rel_err={e:.3e}"
            for i, (a, f, e) in enumerate(
                zip(self.analytic, self.fd, self.rel_errors)
            )
        ]
        lines.append(f"max relative error: {self.max_rel_error:.3e}")
        if self.flagged:
            lines.append(f"flagged coordinates (possible kink): {list(self.flagged)}")
        return "\n".join(lines)


def check_gradient(objective, params, fd_step=1e-5, flag_tol=1e-3) -> GradientReport:
    """Verify the tape gradient against central finite differences.

    The objective must be deterministic (frozen noise) so that repeated
    evaluations at perturbed raw parameters are comparable. Coordinates
    whose relative error exceeds ``flag_tol`` are flagged; a rectifier
    kink sitting exactly at 0 shows up here.
    """
    analytic = grad(objective, params)
    raw = np.asarray(params.raw, dtype=np.float64)
    fd = np.zeros_like(raw)

    class _P:
        def __init__(self, raw, transforms):
            self.raw = raw
            self.transforms = transforms

    def eval_at(raw_pt):
        tape = Tape()
        _, nats = _natural_vars(tape, _P(raw_pt, params.transforms))
        return float(_val(objective(nats)))

    for j in range(raw.size):
        bump = np.zeros_like(raw)
        bump[j] = fd_step
        fd[j] = (eval_at(raw + bump) - eval_at(raw - bump)) / (2.0 * fd_step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    rel = np.abs(analytic - fd) / denom
    flagged = tuple(int(i) for i in np.flatnonzero(rel > flag_tol))
    return GradientReport(analytic, fd, rel, float(rel.max()), flagged)
