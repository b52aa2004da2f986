"""All-ranking top-K evaluation.

Every item is scored for every test user; the user's training positives are
removed and the rest sorted by score, ties broken by ascending item id.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .aggregate import FinalReps
from .config import TrainConfig, make_ablation  # noqa: F401  (re-exported)
from .graph import GraphIndex, InteractionSet


@dataclass(frozen=True)
class EvalReport:
    k: int
    recall: float
    ndcg: float
    num_users_evaluated: int
    num_users_skipped: int = 0
    fingerprint: str = ""
    variant: str = "full"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def __str__(self):
        return (f"variant={self.variant} recall@{self.k}={self.recall:.4f} ndcg@{self.k}={self.ndcg:.4f} "
                f"users={self.num_users_evaluated} skipped={self.num_users_skipped}")


def rank_scores(scores: np.ndarray, exclude=()) -> np.ndarray:
    """Item ids sorted by descending score (ascending id on ties), excluded ids removed."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    if len(exclude):
        order = order[~np.isin(order, np.asarray(list(exclude), dtype=np.int64))]
    return order


def rank_all(u: int, reps: FinalReps, cf_train: InteractionSet) -> list[int]:
    scores = reps.items @ reps.users[u]
    return rank_scores(scores, cf_train.positives[u]).tolist()


def recall_at_k(ranking, test_positives, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    positives = set(test_positives)
    if not positives:
        raise ValueError("recall is undefined for an empty positive set")
    hits = sum(1 for i in list(ranking)[:k] if i in positives)
    return hits / len(positives)


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at_k(ranking, test_positives, k: int) -> float:
    """Binary-relevance NDCG; IDCG places min(k, |positives|) hits at the top."""
    if k < 1:
        raise ValueError("k must be >= 1")
    positives = set(test_positives)
    if not positives:
        return 0.0
    top = list(ranking)[:k]
    disc = _discounts(k)
    dcg = sum(disc[r] for r, i in enumerate(top) if i in positives)
    idcg = disc[: min(k, len(positives))].sum()
    return float(dcg / idcg)


def evaluate_reps(reps: FinalReps, cf_train: InteractionSet, cf_test: InteractionSet, k: int = 20,
                  batch_users: int = 1024) -> tuple[float, float, int, int]:
    """Returns (mean recall, mean ndcg, evaluated users, skipped users)."""
    num_items = reps.items.shape[0]
    users, targets = [], []
    skipped = 0
    for u, pos in enumerate(cf_test.positives):
        if not pos:
            continue
        seen = [i for i in pos if i < num_items]
        if not seen:
            skipped += 1
            continue
        users.append(u)
        targets.append(set(seen))
    if not users:
        raise ValueError("no users with test positives to evaluate")

    disc = _discounts(k)
    recalls = np.empty(len(users))
    ndcgs = np.empty(len(users))
    for start in range(0, len(users), batch_users):
        chunk = users[start:start + batch_users]
        scores = reps.users[chunk] @ reps.items.T
        for row, u in enumerate(chunk):
            s = scores[row]
            train_pos = cf_train.positives[u] if u < cf_train.num_users else ()
            if train_pos:
                s[list(train_pos)] = -np.inf
            top = np.argsort(-s, kind="stable")[:k]
            top = top[np.isfinite(s[top])]
            n = start + row
            hit = np.fromiter((i in targets[n] for i in top.tolist()), dtype=bool, count=len(top))
            recalls[n] = hit.sum() / len(targets[n])
            ndcgs[n] = disc[: len(top)][hit].sum() / disc[: min(k, len(targets[n]))].sum()
    return float(recalls.mean()), float(ndcgs.mean()), len(users), skipped


def evaluate(params, graph: GraphIndex, cf_train: InteractionSet, cf_test: InteractionSet,
             k: int = 20, cfg: TrainConfig | None = None) -> EvalReport:
    from .train import model_reps

    cfg = cfg or TrainConfig(num_intents=params.num_intents, dim=params.dim)
    reps = model_reps(params, graph, cfg)
    recall, ndcg, n, skipped = evaluate_reps(reps, cf_train, cf_test, k)
    if not (math.isfinite(recall) and math.isfinite(ndcg)):
        raise FloatingPointError("non-finite metrics")
    return EvalReport(k, recall, ndcg, n, skipped, cfg.fingerprint(), cfg.variant)
