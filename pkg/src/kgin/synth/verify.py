"""Oracle suite: engine results checked against the brute-force references."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..aggregate import FinalReps, propagate
from ..config import TrainConfig
from ..evaluate import ndcg_at_k, rank_all, recall_at_k
from ..graph import GraphIndex, InteractionSet, TripleSet, add_inverse_relations, build_index
from ..independence import dcor
from ..intents import compute_intents, user_intent_attention
from ..params import ModelParams
from ..train import Batch, loss_and_grads, total_loss
from .oracles import (
    PathExplosion,
    dcor_oracle,
    degree_recount,
    enumerate_paths_oracle,
    fd_gradient_check,
    naive_ndcg,
    naive_ranking,
    naive_recall,
    naive_user_layer,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __str__(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-300)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def random_kg(rng: np.random.Generator, num_entities: int = 50, num_relations: int = 4,
              num_triples: int = 80) -> TripleSet:
    triples = rng.integers(0, [num_entities, num_relations, num_entities], size=(num_triples, 3))
    return add_inverse_relations(TripleSet.from_triples(triples, num_entities=num_entities,
                                                        num_relations=num_relations))


def path_deviation(graph: GraphIndex, params: ModelParams, entities, hops=(1, 2, 3),
                   cap: int = 100_000) -> tuple[float, int]:
    """Max relative deviation between propagated entity reps and path enumeration.

    Entities whose path count exceeds ``cap`` are skipped; returns the
    deviation and the number of (entity, hops) pairs compared.
    """
    states = propagate(params, graph, max(hops))
    worst, compared = 0.0, 0
    for h in hops:
        for v in entities:
            try:
                ref = enumerate_paths_oracle(graph, params.relation.values, params.entity.values, v, h, cap)
            except PathExplosion:
                continue
            got = states.entity_reps[h][v]
            scale = max(np.abs(ref).max(), np.abs(got).max())
            if scale > 0:
                worst = max(worst, float(np.abs(got - ref).max() / scale))
            compared += 1
    return worst, compared


def check_paths(seed: int = 0, num_graphs: int = 20, num_entities: int = 50, dim: int = 8,
                tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, compared = 0.0, 0
    for _ in range(num_graphs):
        n_ent = int(rng.integers(10, num_entities + 1))
        kg = random_kg(rng, n_ent, int(rng.integers(1, 5)), int(rng.integers(n_ent, 2 * n_ent)))
        n_items = int(rng.integers(1, n_ent + 1))
        cf = InteractionSet.from_lists([[0]], num_items=n_items)
        graph = build_index(cf, kg)
        params = ModelParams.init(1, n_ent, kg.num_relations, dim, 1, rng)
        w, c = path_deviation(graph, params, range(n_ent))
        worst, compared = max(worst, w), compared + c
    return CheckResult("path expansion", worst < tol, f"max relative deviation {worst:.3e} over {compared} cases")


def check_degrees(kg: TripleSet, cf: InteractionSet, graph: GraphIndex) -> CheckResult:
    ok = graph.entity_degrees.tolist() == degree_recount(kg.triples.tolist(), kg.num_entities)
    ok &= graph.user_degrees.tolist() == [len(p) for p in cf.positives]
    return CheckResult("degree recount", ok, "index degrees match a brute-force recount")


def check_dataset_paths(graph: GraphIndex, num_relations: int, rng, samples: int = 20,
                        dim: int = 4, tol: float = 1e-10) -> CheckResult:
    params = ModelParams.init(graph.num_users, graph.num_entities, num_relations, dim, 1, rng)
    ents = rng.choice(graph.num_entities, size=min(samples, graph.num_entities), replace=False)
    worst, compared = path_deviation(graph, params, ents.tolist(), cap=20_000)
    return CheckResult("dataset path expansion", worst < tol,
                       f"max relative deviation {worst:.3e} over {compared} cases")


def check_user_layer(cf: InteractionSet, graph: GraphIndex, num_relations: int, rng,
                     dim: int = 4, tol: float = 1e-10) -> CheckResult:
    params = ModelParams.init(graph.num_users, graph.num_entities, num_relations, dim, 3, rng)
    states = propagate(params, graph, 1)
    intents = compute_intents(params.intent_config(), params.relation.values)
    beta = user_intent_attention(params.user.values, intents)
    users = rng.choice(cf.num_users, size=min(30, cf.num_users), replace=False)
    sub = [cf.positives[u] for u in users]
    ref = naive_user_layer(sub, intents.embeddings, beta[users], params.entity.values)
    err = _rel_err(states.user_reps[1][users], ref)
    return CheckResult("user aggregation", err < tol, f"max relative deviation {err:.3e}")


def check_dcor(rng, pairs: int = 200, tol: float = 1e-10) -> CheckResult:
    worst, bounded = 0.0, True
    for _ in range(pairs):
        n = int(rng.integers(3, 20))
        x, y = rng.normal(size=n), rng.normal(size=n)
        got = dcor(x, y)
        worst = max(worst, abs(got - dcor_oracle(x, y)[0]))
        bounded &= 0.0 <= got <= 1.0
    self_err = max(abs(dcor(x, x) - 1.0) for x in rng.normal(size=(20, 10)))
    ok = worst < tol and self_err < 1e-12 and bounded
    return CheckResult("distance correlation", ok,
                       f"max deviation {worst:.3e}, self-dcor error {self_err:.1e}, in [0,1]: {bounded}")


def check_metrics(cf_train: InteractionSet, cf_test: InteractionSet, rng,
                  k: int = 20, max_users: int = 50, max_items: int = 1000) -> CheckResult:
    if cf_train.num_items > max_items:
        # the naive ranking is quadratic; check a prefix of the item catalogue
        cut = lambda cf: InteractionSet.from_lists(
            [[i for i in p if i < max_items] for p in cf.positives], num_items=max_items)
        cf_train, cf_test = cut(cf_train), cut(cf_test)
    reps = FinalReps(rng.normal(size=(cf_train.num_users, 4)), rng.normal(size=(cf_train.num_items, 4)))
    mismatches = 0
    users = [u for u in range(min(cf_test.num_users, cf_train.num_users)) if cf_test.positives[u]][:max_users]
    for u in users:
        scores = reps.items @ reps.users[u]
        ref = naive_ranking(scores.tolist(), cf_train.positives[u])
        ranking = rank_all(u, reps, cf_train)
        test = cf_test.positives[u]
        mismatches += ranking != ref
        mismatches += recall_at_k(ranking, test, k) != naive_recall(ref, test, k)
        mismatches += abs(ndcg_at_k(ranking, test, k) - naive_ndcg(ref, test, k)) > 1e-12
    return CheckResult("ranking metrics", mismatches == 0, f"{mismatches} mismatches over {len(users)} users")


def tiny_instance(rng, num_users: int = 4, num_items: int = 5, num_entities: int = 10,
                  num_relations: int = 2):
    triples = [(i, int(rng.integers(num_relations)), int(rng.integers(num_items, num_entities)))
               for i in range(num_items)]
    triples += [tuple(int(x) for x in rng.integers(0, [num_entities, num_relations, num_entities]))
                for _ in range(4)]
    kg = add_inverse_relations(TripleSet.from_triples(triples, num_entities=num_entities,
                                                      num_relations=num_relations))
    lists = [sorted(rng.choice(num_items, size=2, replace=False).tolist()) for _ in range(num_users)]
    cf = InteractionSet.from_lists(lists, num_items=num_items)
    return cf, kg, build_index(cf, kg)


def gradient_error(variant: str, seed: int = 0, dim: int = 3, num_intents: int = 3,
                   layers: int = 2) -> float:
    """Worst finite-difference relative error of the total loss on a tiny instance."""
    rng = np.random.default_rng(seed)
    cf, kg, graph = tiny_instance(rng)
    cfg = TrainConfig(dim=dim, layers=layers, num_intents=num_intents, independence=variant,
                      lambda1=0.5, lambda2=0.1)
    params = ModelParams.init(graph.num_users, graph.num_entities, kg.num_relations, dim, num_intents, rng)
    pairs = cf.pairs()
    neg = np.array([next(i for i in range(cf.num_items) if i not in cf.positives[u]) for u in pairs[:, 0]])
    batch = Batch(pairs[:, 0], pairs[:, 1], neg)
    params.zero_grad()
    loss_and_grads(batch, params, graph, cfg)
    return fd_gradient_check(lambda: total_loss(batch, params, graph, cfg), params.tables()).max_rel_error


def check_gradients(tol: float = 1e-4) -> CheckResult:
    errs = {v: gradient_error(v) for v in ("mutual_information", "distance_correlation")}
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in errs.items())
    return CheckResult("loss gradients", worst < tol, f"max relative error: {detail}")


def run_suite(cf_train: InteractionSet, cf_test: InteractionSet | None, kg: TripleSet,
              graph: GraphIndex, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [
        check_degrees(kg, cf_train, graph),
        check_dataset_paths(graph, kg.num_relations, rng),
        check_user_layer(cf_train, graph, kg.num_relations, rng),
        check_dcor(rng),
        check_gradients(),
        check_paths(seed),
    ]
    if cf_test is not None:
        results.append(check_metrics(cf_train, cf_test, rng))
    return results
