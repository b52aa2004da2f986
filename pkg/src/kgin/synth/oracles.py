"""Brute-force reference computations.

Nothing here reuses the engine's kernels: loops over plain Python lists and
per-coordinate arithmetic only, so agreement with the engine is evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class PathExplosion(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"path enumeration would visit {count} paths (cap {cap})")
        self.count = count
        self.cap = cap


# ---- distance correlation ----

def dcor_oracle(x, y) -> tuple[float, bool]:
    """Definition-based sample distance correlation. Returns (value, degenerate)."""
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    n = len(x)

    def centered(z):
        a = [[abs(z[j] - z[k]) for k in range(n)] for j in range(n)]
        row = [sum(a[j]) / n for j in range(n)]
        col = [sum(a[j][k] for j in range(n)) / n for k in range(n)]
        grand = sum(row) / n
        return [[a[j][k] - row[j] - col[k] + grand for k in range(n)] for j in range(n)]

    A, B = centered(x), centered(y)

    def v2(P, Q):
        return sum(P[j][k] * Q[j][k] for j in range(n) for k in range(n)) / (n * n)

    dvar_x = math.sqrt(max(v2(A, A), 0.0))
    dvar_y = math.sqrt(max(v2(B, B), 0.0))
    if dvar_x * dvar_y == 0.0:
        return 0.0, True
    dcov = math.sqrt(max(v2(A, B), 0.0))
    return dcov / math.sqrt(dvar_x * dvar_y), False


# ---- relational path enumeration ----

def count_paths(entity_adj: Sequence[Sequence[tuple[int, int]]], entity: int, hops: int) -> int:
    frontier = {entity: 1}
    total = 0
    for _ in range(hops):
        nxt: dict[int, int] = {}
        total = 0
        for v, c in frontier.items():
            for _, w in entity_adj[v]:
                nxt[w] = nxt.get(w, 0) + c
                total += c
        frontier = nxt
    return total if hops else 1


def enumerate_paths_oracle(graph, relation_embs, entity_embs0, entity: int, hops: int,
                           cap: int = 100_000) -> np.ndarray:
    """Sum over every ``hops``-hop path i -r1-> s1 -> ... -rl-> s_l of

        prod_k (e_{r_k} / |N(expanding node of hop k)|) * e_{s_l}^(0)

    where the degree at hop k is that of the node the hop leaves from
    (i, s1, ..., s_{l-1}), which is what unrolling the layer recursion gives.
    """
    adj = graph.entity_adj
    n = count_paths(adj, entity, hops)
    if n > cap:
        raise PathExplosion(n, cap)
    d = len(entity_embs0[0])
    rel = [list(map(float, r)) for r in relation_embs]
    ent0 = [list(map(float, e)) for e in entity_embs0]
    total = [0.0] * d
    # stack items: (node, hops left, accumulated product)
    stack = [(entity, hops, [1.0] * d)]
    while stack:
        node, left, prod = stack.pop()
        if left == 0:
            for c in range(d):
                total[c] += prod[c] * ent0[node][c]
            continue
        nbrs = adj[node]
        deg = len(nbrs)
        for r, w in nbrs:
            stack.append((w, left - 1, [prod[c] * rel[r][c] / deg for c in range(d)]))
    return np.array(total)


# ---- naive aggregation, scoring, metrics ----

def naive_entity_layer(triples, num_entities: int, relation_embs, prev) -> np.ndarray:
    d = len(prev[0])
    out = np.zeros((num_entities, d))
    for v in range(num_entities):
        msgs = [(r, t) for h, r, t in triples if h == v]
        for r, t in msgs:
            for c in range(d):
                out[v, c] += relation_embs[r][c] * prev[t][c] / len(msgs)
    return out


def naive_user_layer(positives, intents, beta, prev_items) -> np.ndarray:
    d = len(prev_items[0])
    out = np.zeros((len(positives), d))
    for u, items in enumerate(positives):
        for i in items:
            for p in range(len(intents)):
                for c in range(d):
                    out[u, c] += beta[u][p] * intents[p][c] * prev_items[i][c] / len(items)
    return out


def naive_dot(a, b) -> float:
    s = 0.0
    for x, y in zip(a, b):
        s += float(x) * float(y)
    return s


def naive_ranking(scores, exclude) -> list[int]:
    items = [i for i in range(len(scores)) if i not in set(exclude)]
    # selection sort: highest score first, lowest id on ties
    out = []
    while items:
        best = items[0]
        for i in items[1:]:
            if scores[i] > scores[best]:
                best = i
        out.append(best)
        items.remove(best)
    return out


def naive_recall(ranking, positives, k: int) -> float:
    top = ranking[:k]
    return len([i for i in top if i in positives]) / len(positives)


def naive_ndcg(ranking, positives, k: int) -> float:
    dcg = 0.0
    for pos, i in enumerate(ranking[:k]):
        if i in positives:
            dcg += 1.0 / math.log2(pos + 2)
    idcg = 0.0
    for pos in range(min(k, len(positives))):
        idcg += 1.0 / math.log2(pos + 2)
    return dcg / idcg


def degree_recount(triples, num_entities: int) -> list[int]:
    deg = [0] * num_entities
    for h, _, _ in triples:
        deg[int(h)] += 1
    return deg


# ---- finite differences ----

@dataclass(frozen=True)
class FDResult:
    max_rel_error: float
    location: tuple[str, int, int] | None
    num_checked: int

    def __str__(self):
        return f"max relative error {self.max_rel_error:.3e} at {self.location} over {self.num_checked} entries"


def fd_gradient_check(loss_fn: Callable[[], float], tables, step: float = 1e-5,
                      analytic: dict[str, np.ndarray] | None = None,
                      entries: dict[str, list[tuple[int, int]]] | None = None,
                      floor: float = 1e-6) -> FDResult:
    """Central-difference check of every entry (or the listed ``entries``).

    ``tables`` are objects with ``name``, ``values`` (mutated in place and
    restored) and ``grads``; ``analytic`` overrides ``grads``. The relative
    error of an entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    worst, where, checked = 0.0, None, 0
    for t in tables:
        grad = analytic[t.name] if analytic is not None else t.grads.copy()
        coords = entries[t.name] if entries is not None and t.name in entries else \
            [(r, c) for r in range(t.values.shape[0]) for c in range(t.values.shape[1])]
        for r, c in coords:
            orig = t.values[r, c]
            t.values[r, c] = orig + step
            up = loss_fn()
            t.values[r, c] = orig - step
            down = loss_fn()
            t.values[r, c] = orig
            num = (up - down) / (2.0 * step)
            a = grad[r, c]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            checked += 1
            if where is None or err > worst:
                worst, where = err, (t.name, r, c)
    return FDResult(worst, where, checked)
