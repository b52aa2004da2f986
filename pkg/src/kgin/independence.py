"""Independence regularizers over intent embeddings.

Two forms are available:

``mutual_information``
    sum_p -log( exp(s(p,p)/tau) / sum_q exp(s(p,q)/tau) ) with cosine ``s``.
``distance_correlation``
    sum over unordered intent pairs of dCor(e_p, e_q).

For distance correlation the ``d`` embedding coordinates are the samples:
each intent is a variable observed ``d`` times.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .autograd import ContractError, Tape, Var

Variant = Literal["mutual_information", "distance_correlation"]
VARIANTS = ("mutual_information", "distance_correlation")


class DegenerateIntentError(ContractError):
    def __init__(self, intent: int):
        super().__init__(f"intent {intent} has a zero embedding; cosine similarity is undefined")
        self.intent = intent


@dataclass(frozen=True)
class IndependenceConfig:
    variant: Variant = "mutual_information"
    tau: float = 1.0
    lambda1: float = 1e-4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown independence variant {self.variant!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be non-negative")


# ---- mutual information (contrastive) form ----

def mi_loss_var(tape: Tape, intents: Var, tau: float = 1.0) -> Var:
    norms = np.linalg.norm(intents.value, axis=1)
    if np.any(norms == 0):
        raise DegenerateIntentError(int(np.flatnonzero(norms == 0)[0]))
    unit = tape.normalize_rows(intents)
    sim = tape.scale(tape.matmul(unit, tape.transpose(unit)), 1.0 / tau)
    return tape.sum(tape.sub(tape.logsumexp(sim, axis=1), tape.diag(sim)))


def mi_loss(intents, tau: float = 1.0) -> float:
    tape = Tape(grad=False)
    return float(mi_loss_var(tape, tape.const(intents), tau).value)


# ---- distance correlation ----

class DCorStats(NamedTuple):
    value: float
    dcov: float
    dvar_x: float
    dvar_y: float
    degenerate: bool


def _centered(tape: Tape, x: Var) -> Var:
    return tape.double_center(tape.pairwise_absdiff(x))


def _pair_dcor(tape: Tape, a: Var, b: Var, dvar_a: Var, dvar_b: Var) -> tuple[Var, bool]:
    """dCor from centered distance matrices. Returns (value, degenerate)."""
    if dvar_a.value * dvar_b.value <= 0.0:
        return tape.const(0.0), True
    m = tape.mean(tape.mul(a, b))
    if m.value <= 0.0:
        # V-statistic is non-negative; only roundoff takes it below zero
        return tape.const(0.0), False
    return tape.div(tape.sqrt(m), tape.sqrt(tape.mul(dvar_a, dvar_b))), False


def _dvar(tape: Tape, a: Var) -> Var:
    m = tape.mean(tape.mul(a, a))
    if m.value <= 0.0:
        return tape.const(0.0)
    return tape.sqrt(m)


def dcor_stats(x, y) -> DCorStats:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError(f"dcor expects two vectors of equal length, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ContractError("dcor needs at least 2 coordinates")
    tape = Tape(grad=False)
    a, b = _centered(tape, tape.const(x)), _centered(tape, tape.const(y))
    va, vb = _dvar(tape, a), _dvar(tape, b)
    val, degenerate = _pair_dcor(tape, a, b, va, vb)
    m = float(np.mean(a.value * b.value))
    return DCorStats(float(min(max(val.value, 0.0), 1.0)), float(np.sqrt(max(m, 0.0))),
                     float(va.value), float(vb.value), degenerate)


def dcor(x, y) -> float:
    """Sample distance correlation in [0, 1]; 0 when either vector is constant."""
    return dcor_stats(x, y).value


class DCorLoss(NamedTuple):
    loss: Var
    num_degenerate: int


def dcor_loss_var(tape: Tape, intents: Var) -> DCorLoss:
    P, d = intents.shape
    if d < 2:
        raise ContractError("dcor needs embedding size >= 2")
    if P < 2:
        return DCorLoss(tape.const(0.0), 0)
    centered = [_centered(tape, tape.row(intents, p)) for p in range(P)]
    dvars = [_dvar(tape, c) for c in centered]
    total, degenerate = None, 0
    for p, q in itertools.combinations(range(P), 2):
        val, flag = _pair_dcor(tape, centered[p], centered[q], dvars[p], dvars[q])
        degenerate += flag
        total = val if total is None else tape.add(total, val)
    return DCorLoss(total, degenerate)


def dcor_loss(intents) -> float:
    tape = Tape(grad=False)
    return float(dcor_loss_var(tape, tape.const(intents)).loss.value)


def mean_pairwise_dcor(intents) -> float:
    """Mean dCor over unordered intent pairs (0 for a single intent)."""
    intents = np.asarray(intents, dtype=np.float64)
    pairs = list(itertools.combinations(range(len(intents)), 2))
    if not pairs:
        return 0.0
    return float(np.mean([dcor(intents[p], intents[q]) for p, q in pairs]))


def independence_loss_var(tape: Tape, intents: Var, cfg: IndependenceConfig) -> Var:
    if cfg.variant == "mutual_information":
        return mi_loss_var(tape, intents, cfg.tau)
    return dcor_loss_var(tape, intents).loss
