import itertools
import json

import numpy as np
import pytest

from kgin.aggregate import propagate_vars
from kgin.autograd import Tape
from kgin.config import TrainConfig
from kgin.explain import (
    explain_interaction,
    explanation_record,
    format_explanation,
    intent_profiles,
    load_names,
)
from kgin.graph import add_inverse_relations, build_index
from kgin.params import ModelParams
from kgin.synth import SynthSpec, generate
from kgin.train import fit


def _params(num_intents=3, num_relations=4, seed=0):
    return ModelParams.init(5, 8, num_relations, 4, num_intents, np.random.default_rng(seed))


def test_uniform_logits_give_uniform_profiles_in_id_order():
    p = _params()
    p.intent_logits.values[:] = 0.0
    for prof in intent_profiles(p):
        assert [r for r, _ in prof.relations] == [0, 1, 2, 3]
        assert np.allclose([w for _, w in prof.relations], 0.25)


def test_dominant_logit_ranks_first():
    p = _params()
    p.intent_logits.values[2, 1] = 40.0
    prof = intent_profiles(p)[1]
    assert prof.relations[0][0] == 2 and prof.relations[0][1] > 0.999


def test_profiles_sum_to_one_and_match_softmax_oracle():
    p = _params(seed=3)
    w = p.intent_logits.values
    for prof in intent_profiles(p):
        col = w[:, prof.intent]
        ref = [np.exp(x) / sum(np.exp(y) for y in col) for x in col]
        assert sum(v for _, v in prof.relations) == pytest.approx(1.0, abs=1e-12)
        for r, v in prof.relations:
            assert v == pytest.approx(ref[r], abs=1e-14)
        weights = [v for _, v in prof.relations]
        assert weights == sorted(weights, reverse=True)


def test_profiles_ignore_relation_embeddings():
    p = _params(seed=4)
    a = intent_profiles(p)
    p.relation.values[:] = np.random.default_rng(9).normal(size=p.relation.shape)
    assert intent_profiles(p) == a


def test_top_truncation():
    assert all(len(prof.relations) == 2 for prof in intent_profiles(_params(), top=2))


def test_single_intent_beta_is_one():
    exp = explain_interaction(0, 1, _params(num_intents=1))
    assert exp.intents == [(0, 1.0)]


def test_symmetric_intents_tie_by_id():
    p = _params()
    p.intent_logits.values[:] = 0.0
    exp = explain_interaction(2, 3, p)
    assert [i for i, _ in exp.intents] == [0, 1, 2]
    assert np.allclose([b for _, b in exp.intents], 1 / 3)
    assert exp.top_profile.intent == 0


def test_beta_is_the_training_beta():
    data = generate(SynthSpec(num_users=20, num_items=15, num_entities=30, interactions_per_user=4))
    graph = build_index(data.train, add_inverse_relations(data.kg))
    p = ModelParams.init(20, 30, graph.num_relations, 6, 3, np.random.default_rng(1))
    fw = propagate_vars(Tape(grad=False), p, graph, 2)
    for u in range(20):
        exp = explain_interaction(u, 0, p)
        assert sum(b for _, b in exp.intents) == pytest.approx(1.0, abs=1e-12)
        for i, b in exp.intents:
            assert b == fw.beta.value[u, i]


def test_unknown_ids_raise_lookup_error():
    with pytest.raises(LookupError):
        explain_interaction(99, 0, _params())
    with pytest.raises(LookupError):
        explain_interaction(0, -1, _params())


def test_output_formats(tmp_path):
    names = tmp_path / "relation_list.txt"
    names.write_text("org_id remap_id\nfilm.director 0\nfilm.genre 1\n")
    mapping = load_names(names)
    assert mapping == {0: "film.director", 1: "film.genre"}
    p = _params()
    exp = explain_interaction(1, 2, p, top=2)
    text = format_explanation(exp, mapping)
    assert "user 1 / item 2" in text and "depends on the user only" in text
    rec = json.loads(explanation_record(exp, mapping))
    assert rec["user"] == 1 and rec["item"] == 2 and len(rec["top_profile"]["relations"]) == 2


def test_load_names_plain_id_first(tmp_path):
    f = tmp_path / "names.txt"
    f.write_text("0 directed by\n3 genre\n")
    assert load_names(f) == {0: "directed by", 3: "genre"}


@pytest.mark.slow
@pytest.mark.xfail(reason="relation attention does not single out the planted relation; see decisions ledger",
                   strict=False)
def test_planted_relation_recovered_by_top_intent():
    hits = 0
    for seed in range(10):
        r = seed % 6
        mix = (tuple(1.0 if j == r else 0.0 for j in range(6)),)
        data = generate(SynthSpec(num_planted_intents=1, mixtures=mix, seed=seed))
        graph = build_index(data.train, add_inverse_relations(data.kg))
        cfg = TrainConfig(dim=32, lr=1e-2, epochs=50, eval_every=0, patience=0, lambda1=1.0,
                          num_intents=3, seed=seed)
        params = fit(data.train, graph, cfg).params
        top = explain_interaction(0, data.train.positives[0][0], params).top_profile.relations[0][0]
        # the inverse of r describes the same KG relation
        hits += top in (r, r + 6)
    assert hits >= 8


@pytest.mark.slow
@pytest.mark.xfail(reason="learned intent attention does not align with planted user groups; "
                          "see decisions ledger", strict=False)
def test_planted_user_intents_recovered_above_chance():
    accs = []
    for seed in range(10):
        data = generate(SynthSpec(seed=seed, focus=1.0))
        graph = build_index(data.train, add_inverse_relations(data.kg))
        cfg = TrainConfig(dim=32, lr=1e-2, epochs=50, eval_every=0, patience=0, lambda1=1.0,
                          num_intents=3, seed=seed)
        params = fit(data.train, graph, cfg).params
        fw = propagate_vars(Tape(grad=False), params, graph, 1)
        assign = fw.beta.value.argmax(axis=1)
        accs.append(max(np.mean(np.array(perm)[assign] == data.user_intent)
                        for perm in itertools.permutations(range(3))))
    assert np.mean(accs) > 1 / 3 + 0.2
