"""A minimal reverse-mode tape over numpy arrays.

Only the primitives the model needs are provided. Every primitive records
its inputs and a closure mapping the output gradient to input gradients;
``Tape.backward`` replays the records in reverse and accumulates into the
``ParamTable.grads`` of the leaves.

Everything runs in float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class ContractError(ValueError):
    """A primitive was called with inputs that violate its signature."""


class NonFiniteGradient(FloatingPointError):
    def __init__(self, diagnostics: dict[str, int]):
        detail = ", ".join(f"{k}: {v} non-finite" for k, v in diagnostics.items())
        super().__init__(f"optimizer step aborted ({detail})")
        self.diagnostics = diagnostics


@dataclass(eq=False)
class ParamTable:
    name: str
    values: np.ndarray
    grads: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError(f"{self.name}: parameter tables are 2-d, got shape {self.values.shape}")
        self.grads = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grads[...] = 0.0


class Var:
    """A value on the tape. ``table`` is set for parameter leaves."""

    __slots__ = ("value", "grad", "table", "requires_grad")

    def __init__(self, value, requires_grad=False, table=None):
        self.value = value
        self.grad = None
        self.table = table
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"


def _val(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tape:
    """Ordered record of primitive applications.

    With ``grad=False`` nothing is recorded and the primitives act as plain
    numpy functions; that is how inference reuses the training code path.
    """

    def __init__(self, grad: bool = True):
        self.grad_enabled = grad
        self.records: list[tuple[Var, tuple, object]] = []
        self.leaves: list[Var] = []
        self.consumed = False

    # ---- leaves ----
    def param(self, table: ParamTable) -> Var:
        v = Var(table.values, requires_grad=self.grad_enabled, table=table)
        if self.grad_enabled:
            self.leaves.append(v)
        return v

    def const(self, value) -> Var:
        return Var(np.asarray(value, dtype=np.float64))

    def _record(self, out_value, inputs, backward) -> Var:
        needs = self.grad_enabled and any(isinstance(x, Var) and x.requires_grad for x in inputs)
        out = Var(out_value, requires_grad=needs)
        if needs:
            self.records.append((out, inputs, backward))
        return out

    # ---- primitives ----
    def gather(self, x: Var, idx) -> Var:
        """Row lookup ``x[idx]``; backward scatter-adds."""
        idx = np.asarray(idx, dtype=np.int64)
        xv = _val(x)
        if idx.ndim != 1:
            raise ContractError("gather index must be 1-d")
        if len(idx) and (idx.min() < 0 or idx.max() >= xv.shape[0]):
            raise ContractError(f"gather index out of range for {xv.shape[0]} rows")

        def back(g):
            out = np.zeros_like(xv)
            np.add.at(out, idx, g)
            return (out,)

        return self._record(xv[idx], (x,), back)

    def scatter_mean(self, x: Var, op) -> Var:
        """Segment mean with a precomputed ``graph.SegmentMean`` operator."""
        xv = _val(x)
        if xv.shape[0] != op.num_messages:
            raise ContractError(f"scatter_mean expects {op.num_messages} rows, got {xv.shape[0]}")
        return self._record(op(xv), (x,), lambda g: (op.transpose(g),))

    def mul(self, a, b) -> Var:
        """Element-wise product with numpy broadcasting."""
        av, bv = _val(a), _val(b)
        try:
            out = av * bv
        except ValueError as e:
            raise ContractError(f"mul shape mismatch {np.shape(av)} vs {np.shape(bv)}") from e
        return self._record(out, (a, b), lambda g: (_unbroadcast(g * bv, np.shape(av)),
                                                    _unbroadcast(g * av, np.shape(bv))))

    def add(self, a, b) -> Var:
        av, bv = _val(a), _val(b)
        if np.shape(av) != np.shape(bv):
            raise ContractError(f"add shape mismatch {np.shape(av)} vs {np.shape(bv)}")
        return self._record(av + bv, (a, b), lambda g: (g, g))

    def sub(self, a, b) -> Var:
        av, bv = _val(a), _val(b)
        if np.shape(av) != np.shape(bv):
            raise ContractError(f"sub shape mismatch {np.shape(av)} vs {np.shape(bv)}")
        return self._record(av - bv, (a, b), lambda g: (g, -g))

    def scale(self, a, c: float) -> Var:
        c = float(c)
        return self._record(_val(a) * c, (a,), lambda g: (g * c,))

    def div(self, a, b) -> Var:
        """Element-wise quotient; ``b`` must broadcast against ``a``."""
        av, bv = _val(a), _val(b)
        out = av / bv
        return self._record(out, (a, b), lambda g: (_unbroadcast(g / bv, np.shape(av)),
                                                    _unbroadcast(-g * out / bv, np.shape(bv))))

    def matmul(self, a, b) -> Var:
        av, bv = _val(a), _val(b)
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ContractError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
        return self._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def transpose(self, a) -> Var:
        return self._record(_val(a).T, (a,), lambda g: (g.T,))

    def softmax(self, a, axis: int = -1) -> Var:
        av = _val(a)
        if av.shape[axis] == 0:
            raise ContractError("softmax over an empty axis")
        z = np.exp(av - av.max(axis=axis, keepdims=True))
        s = z / z.sum(axis=axis, keepdims=True)
        return self._record(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))

    def logsumexp(self, a, axis: int = -1) -> Var:
        av = _val(a)
        m = av.max(axis=axis, keepdims=True)
        z = np.exp(av - m)
        tot = z.sum(axis=axis, keepdims=True)
        out = (m + np.log(tot)).squeeze(axis)
        return self._record(out, (a,), lambda g: (np.expand_dims(g, axis) * (z / tot),))

    def rowdot(self, a, b) -> Var:
        """Dot product along the last axis: ``(n, d), (n, d) -> (n,)``."""
        av, bv = _val(a), _val(b)
        if np.shape(av) != np.shape(bv):
            raise ContractError(f"rowdot shape mismatch {np.shape(av)} vs {np.shape(bv)}")
        out = np.einsum("...d,...d->...", av, bv)
        return self._record(out, (a, b), lambda g: (g[..., None] * bv, g[..., None] * av))

    def sigmoid(self, a) -> Var:
        av = _val(a)
        s = _sigmoid(av)
        return self._record(s, (a,), lambda g: (g * s * (1.0 - s),))

    def log_sigmoid(self, a) -> Var:
        """Numerically stable ``log(sigmoid(a))``."""
        av = _val(a)
        out = -np.logaddexp(0.0, -av)
        return self._record(out, (a,), lambda g: (g * _sigmoid(-av),))

    def sum(self, a) -> Var:
        av = _val(a)
        return self._record(np.asarray(av.sum()), (a,), lambda g: (np.full_like(av, g),))

    def mean(self, a) -> Var:
        av = _val(a)
        n = av.size
        return self._record(np.asarray(av.mean()), (a,), lambda g: (np.full_like(av, g / n),))

    def sqnorm(self, a) -> Var:
        """Squared L2 norm of all entries."""
        av = _val(a)
        return self._record(np.asarray(np.sum(av * av)), (a,), lambda g: (2.0 * g * av,))

    def sqrt(self, a) -> Var:
        av = _val(a)
        if np.any(av < 0):
            raise ContractError("sqrt of a negative value")
        out = np.sqrt(av)
        return self._record(out, (a,), lambda g: (g * 0.5 / out,))

    def normalize_rows(self, a) -> Var:
        """Scale each row to unit L2 norm; zero rows are a contract error."""
        av = _val(a)
        norms = np.sqrt(np.sum(av * av, axis=1, keepdims=True))
        if np.any(norms == 0):
            raise ContractError(f"zero-norm rows {np.flatnonzero(norms[:, 0] == 0).tolist()}")
        y = av / norms

        def back(g):
            return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

        return self._record(y, (a,), back)

    def diag(self, a) -> Var:
        av = _val(a)
        if av.ndim != 2 or av.shape[0] != av.shape[1]:
            raise ContractError("diag expects a square matrix")

        def back(g):
            out = np.zeros_like(av)
            np.fill_diagonal(out, g)
            return (out,)

        return self._record(np.diagonal(av).copy(), (a,), back)

    def row(self, a, i: int) -> Var:
        av = _val(a)

        def back(g):
            out = np.zeros_like(av)
            out[i] = g
            return (out,)

        return self._record(av[i].copy(), (a,), back)

    def pairwise_absdiff(self, a) -> Var:
        """Distance matrix ``|x_j - x_k|`` of a 1-d vector."""
        av = _val(a)
        if av.ndim != 1:
            raise ContractError("pairwise_absdiff expects a vector")
        diff = av[:, None] - av[None, :]
        sign = np.sign(diff)
        return self._record(np.abs(diff), (a,), lambda g: (((g + g.T) * sign).sum(axis=1),))

    def double_center(self, a) -> Var:
        """Subtract row means and column means, add back the grand mean."""
        av = _val(a)
        out = av - av.mean(axis=0, keepdims=True) - av.mean(axis=1, keepdims=True) + av.mean()

        def back(g):
            return (g - g.mean(axis=0, keepdims=True) - g.mean(axis=1, keepdims=True) + g.mean(),)

        return self._record(out, (a,), back)

    # ---- backward ----
    def backward(self, out: Var, seed=None) -> None:
        if self.consumed:
            raise ContractError("backward already called on this tape")
        if not self.grad_enabled:
            raise ContractError("tape was created with grad=False")
        seed = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.float64)
        if seed.shape != np.shape(out.value):
            raise ContractError(f"seed shape {seed.shape} != output shape {np.shape(out.value)}")
        self.consumed = True
        out.grad = seed
        for node, inputs, back in reversed(self.records):
            if node.grad is None:
                continue
            for x, gx in zip(inputs, back(node.grad)):
                if isinstance(x, Var) and x.requires_grad:
                    x.grad = gx if x.grad is None else x.grad + gx
        for leaf in self.leaves:
            if leaf.grad is not None:
                leaf.table.grads += leaf.grad
        self.records.clear()


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


_PRIMITIVES = {
    "gather", "scatter_mean", "mul", "add", "sub", "scale", "div", "matmul", "transpose",
    "softmax", "logsumexp", "rowdot", "sigmoid", "log_sigmoid", "sum", "mean", "sqnorm",
    "sqrt", "normalize_rows", "diag", "row", "pairwise_absdiff", "double_center",
}


def forward_primitive(tape: Tape, op: str, *inputs, **kwargs) -> Var:
    """Apply primitive ``op`` by name; same as calling ``tape.<op>(...)``."""
    if op not in _PRIMITIVES:
        raise ContractError(f"unknown primitive {op!r}")
    return getattr(tape, op)(*inputs, **kwargs)


def backward(tape: Tape, out: Var, seed_grad=None) -> None:
    tape.backward(out, seed_grad)


class Adam:
    """Adam with per-table moment state, keyed by table name."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, tables) -> None:
        bad = {p.name: int(np.count_nonzero(~np.isfinite(p.grads))) for p in tables}
        bad = {k: n for k, n in bad.items() if n}
        if bad:
            raise NonFiniteGradient(bad)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in tables:
            m = self.m.setdefault(p.name, np.zeros_like(p.values))
            v = self.v.setdefault(p.name, np.zeros_like(p.values))
            g = p.grads
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, adam: Adam) -> None:
    adam.step(params)
