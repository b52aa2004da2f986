"""Scoring, the BPR objective with L2 and independence terms, negative
sampling, and the training loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .aggregate import FinalReps, Forward, final_reps, propagate_vars
from .autograd import Adam, Tape, Var
from .config import TrainConfig
from .graph import GraphIndex, InteractionSet
from .independence import independence_loss_var, mean_pairwise_dcor
from .intents import compute_intents
from .params import ModelParams

logger = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    pass


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite loss; carries the parameters from the last
    completed epoch."""

    def __init__(self, epoch: int, last_good: ModelParams, log: list[dict]):
        super().__init__(f"non-finite loss in epoch {epoch}")
        self.epoch = epoch
        self.last_good = last_good
        self.log = log


@dataclass(frozen=True)
class Batch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self):
        return len(self.users)

    @classmethod
    def of(cls, triples) -> Batch:
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])


def score(u: int, i: int, reps: FinalReps) -> float:
    return float(reps.users[u] @ reps.items[i])


def bpr_loss(batch: Batch, reps: FinalReps) -> float:
    """Sum over the batch of -ln sigmoid(y_ui - y_uj)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    tape = Tape(grad=False)
    return float(_bpr_var(tape, tape.const(reps.users), tape.const(reps.items), batch).value)


def _bpr_var(tape: Tape, users: Var, items: Var, batch: Batch) -> Var:
    eu = tape.gather(users, batch.users)
    margin = tape.sub(tape.rowdot(eu, tape.gather(items, batch.pos)),
                      tape.rowdot(eu, tape.gather(items, batch.neg)))
    return tape.scale(tape.sum(tape.log_sigmoid(margin)), -1.0)


class LossParts(NamedTuple):
    total: Var
    bpr: Var
    independence: Var | None
    l2: Var
    forward: Forward


def loss_vars(tape: Tape, params: ModelParams, graph: GraphIndex, batch: Batch, cfg: TrainConfig) -> LossParts:
    fw = propagate_vars(tape, params, graph, cfg.effective_layers, cfg.variant, cfg.normalize_by_pairs)
    bpr = _bpr_var(tape, fw.final_users, fw.final_items, batch)

    if cfg.l2_full:
        terms = [tape.sqnorm(tape.param(t)) for t in params.tables()]
    else:
        # rows touched by the batch, plus the relation/intent tables
        users0, ents0 = fw.users[0], fw.entities[0]
        terms = [tape.sqnorm(tape.gather(users0, batch.users)),
                 tape.sqnorm(tape.gather(ents0, batch.pos)),
                 tape.sqnorm(tape.gather(ents0, batch.neg))]
        if cfg.uses_intents:
            terms += [tape.sqnorm(tape.param(params.relation)), tape.sqnorm(tape.param(params.intent_logits))]
    l2 = terms[0]
    for t in terms[1:]:
        l2 = tape.add(l2, t)

    total = tape.add(bpr, tape.scale(l2, cfg.lambda2))
    ind = None
    if cfg.uses_intents and cfg.lambda1 > 0:
        ind = independence_loss_var(tape, fw.intents, cfg.independence_config)
        total = tape.add(total, tape.scale(ind, cfg.lambda1))
    return LossParts(total, bpr, ind, l2, fw)


def total_loss(batch: Batch, params: ModelParams, graph: GraphIndex, cfg: TrainConfig) -> float:
    return float(loss_vars(Tape(grad=False), params, graph, batch, cfg).total.value)


def loss_and_grads(batch: Batch, params: ModelParams, graph: GraphIndex, cfg: TrainConfig) -> dict[str, float]:
    """Zero the grads, run forward + backward; grads land in ``params``."""
    params.zero_grad()
    tape = Tape()
    parts = loss_vars(tape, params, graph, batch, cfg)
    tape.backward(parts.total)
    return {
        "loss": float(parts.total.value),
        "bpr": float(parts.bpr.value),
        "independence": float(parts.independence.value) if parts.independence is not None else 0.0,
        "l2": float(parts.l2.value),
    }


# ---- negative sampling ----

def sample_negatives(u: int, cf: InteractionSet, rng: np.random.Generator) -> int:
    """Uniform item the user has not interacted with (rejection sampling)."""
    pos = cf.positives[u]
    if len(pos) >= cf.num_items:
        raise SamplingError(f"user {u} interacted with every item")
    pos_set = set(pos)
    while True:
        j = int(rng.integers(cf.num_items))
        if j not in pos_set:
            return j


class NegativeSampler:
    """Vectorised rejection sampler over all users."""

    def __init__(self, cf: InteractionSet):
        self.num_items = cf.num_items
        pairs = cf.pairs()
        self.codes = np.sort(pairs[:, 0] * cf.num_items + pairs[:, 1])
        full = [u for u, p in enumerate(cf.positives) if len(p) >= cf.num_items]
        self.full_users = frozenset(full)

    def is_positive(self, users, items) -> np.ndarray:
        codes = users * self.num_items + items
        idx = np.searchsorted(self.codes, codes)
        idx = np.minimum(idx, len(self.codes) - 1)
        return self.codes[idx] == codes if len(self.codes) else np.zeros(len(codes), dtype=bool)

    def sample(self, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        if self.full_users and self.full_users.intersection(users.tolist()):
            bad = sorted(self.full_users.intersection(users.tolist()))
            raise SamplingError(f"users {bad[:5]} interacted with every item")
        neg = rng.integers(self.num_items, size=len(users))
        todo = np.flatnonzero(self.is_positive(users, neg))
        while len(todo):
            neg[todo] = rng.integers(self.num_items, size=len(todo))
            todo = todo[self.is_positive(users[todo], neg[todo])]
        return neg


# ---- training loop ----

@dataclass
class FitResult:
    params: ModelParams
    adam: Adam
    log: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_recall: float | None = None
    stopped_early: bool = False


def init_params(cfg: TrainConfig, graph: GraphIndex, rng: np.random.Generator | None = None) -> ModelParams:
    rng = rng if rng is not None else _streams(cfg.seed)[0]
    return ModelParams.init(graph.num_users, graph.num_entities, graph.num_relations, cfg.dim,
                            cfg.num_intents, rng, cfg.intent_init)


def _streams(seed: int):
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(sample_seq)


def fit(cf: InteractionSet, graph: GraphIndex, cfg: TrainConfig, test: InteractionSet | None = None,
        on_epoch: Callable[[dict], None] | None = None) -> FitResult:
    """Minibatch BPR training with Adam.

    One epoch is one shuffled pass over all training interactions with a
    fresh negative per positive. With ``test`` given, metrics are computed
    at epoch 0 and every ``eval_every`` epochs, and training stops after
    ``patience`` evaluations without a recall improvement (0 disables).
    """
    from .evaluate import evaluate

    init_rng, rng = _streams(cfg.seed)
    params = init_params(cfg, graph, init_rng)
    adam = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    result = FitResult(params, adam)
    pairs = cf.pairs()
    sampler = NegativeSampler(cf)

    def emit(record):
        result.log.append(record)
        logger.info(json.dumps(record))
        if on_epoch is not None:
            on_epoch(record)

    def maybe_eval(record, epoch):
        if test is None or cfg.eval_every == 0 or epoch % cfg.eval_every:
            return False
        report = evaluate(params, graph, cf, test, cfg.k, cfg)
        record.update(recall=report.recall, ndcg=report.ndcg)
        if result.best_recall is None or report.recall > result.best_recall:
            result.best_recall, result.best_epoch = report.recall, epoch
        return True

    record = {"epoch": 0, "mean_dcor": _mean_dcor(params, cfg)}
    maybe_eval(record, 0)
    emit(record)

    last_good = params.copy()
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(pairs))
        users, pos = pairs[order, 0], pairs[order, 1]
        neg = sampler.sample(users, rng)
        sums = {"loss": 0.0, "bpr": 0.0, "independence": 0.0, "l2": 0.0}
        for start in range(0, len(users), cfg.batch_size):
            sl = slice(start, start + cfg.batch_size)
            parts = loss_and_grads(Batch(users[sl], pos[sl], neg[sl]), params, graph, cfg)
            if not np.isfinite(parts["loss"]):
                emit({"epoch": epoch, "error": "non-finite loss", **parts})
                raise TrainingDiverged(epoch, last_good, result.log)
            adam.step(params.tables())
            for key in sums:
                sums[key] += parts[key]
        record = {"epoch": epoch, **sums, "mean_dcor": _mean_dcor(params, cfg),
                  "seconds": round(time.perf_counter() - t0, 4)}
        if cfg.deterministic:
            record.pop("seconds")
        last_good = params.copy()
        evaluated = maybe_eval(record, epoch)
        emit(record)
        if evaluated and cfg.patience:
            stale = 0 if result.best_epoch == epoch else stale + 1
            if stale >= cfg.patience:
                result.stopped_early = True
                break
    return result


def _mean_dcor(params: ModelParams, cfg: TrainConfig) -> float | None:
    if not cfg.uses_intents or params.num_intents < 2:
        return None
    intents = compute_intents(params.intent_config(), params.relation.values)
    return mean_pairwise_dcor(intents.embeddings)


def model_reps(params: ModelParams, graph: GraphIndex, cfg: TrainConfig) -> FinalReps:
    return final_reps(params, graph, cfg.effective_layers, cfg.variant, cfg.normalize_by_pairs)
