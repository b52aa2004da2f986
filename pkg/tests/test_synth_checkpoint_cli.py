import json

import numpy as np
import pytest

from kgin.autograd import Adam
from kgin.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from kgin.cli import main
from kgin.config import TrainConfig
from kgin.graph import InteractionSet, TripleSet, load_dataset, write_cf, write_kg
from kgin.params import ModelParams
from kgin.synth import SynthSpec, SynthSpecError, dcor_oracle, generate
from kgin.synth.verify import check_paths, run_suite


# ---- synthetic generator ----

def test_generate_is_pure_function_of_synth_spec():
    a, b = generate(SynthSpec(seed=4)), generate(SynthSpec(seed=4))
    assert a.train.positives == b.train.positives and a.test.positives == b.test.positives
    assert np.array_equal(a.kg.triples, b.kg.triples)
    assert generate(SynthSpec(seed=5)).train.positives != a.train.positives


def test_positives_per_user_match_synth_spec():
    spec = SynthSpec(interactions_per_user=7, test_fraction=0.3)
    data = generate(spec)
    assert all(len(p) == 7 for p in data.positives)
    assert all(len(p) == 2 for p in data.test.positives)
    assert not any(set(a) & set(b) for a, b in zip(data.train.positives, data.test.positives))


def test_kg_shape_and_ground_truth():
    spec = SynthSpec()
    data = generate(spec)
    assert len(data.kg) == spec.num_items * spec.num_relations_canonical
    assert data.kg.triples[:, 0].max() < spec.num_items <= data.kg.triples[:, 2].min()
    assert np.allclose(data.mixtures.sum(axis=1), 1.0)
    assert np.bincount(data.user_intent).tolist() == [67, 67, 66]
    truth = data.truth()
    assert set(truth) >= {"user_intent", "mixtures"}


def test_single_intent_spec_shares_pattern():
    data = generate(SynthSpec(num_planted_intents=1))
    assert set(data.user_intent.tolist()) == {0}
    assert data.mixtures.shape == (1, 6)


def test_planted_relation_drives_interactions():
    mix = ((1.0, 0, 0, 0, 0, 0),)
    data = generate(SynthSpec(num_planted_intents=1, mixtures=mix, sharpness=20.0))
    match = [np.mean(data.item_values[p, 0] == data.user_preferences[u, 0])
             for u, p in enumerate(data.positives)]
    other = [np.mean(data.item_values[p, 1] == data.user_preferences[u, 1])
             for u, p in enumerate(data.positives)]
    assert np.mean(match) > 0.9 > 0.3 > np.mean(other)


@pytest.mark.parametrize("kwargs", [
    dict(interactions_per_user=500),
    dict(num_entities=100),
    dict(mixtures=((0.5, 0.5, 0, 0, 0, 0),)),
    dict(attribute_pool=3, values_per_relation=4),
    dict(test_fraction=1.0),
])
def test_infeasible_specs_rejected(kwargs):
    with pytest.raises(SynthSpecError):
        SynthSpec(**kwargs)


def test_spec_file_and_write(tmp_path):
    f = tmp_path / "spec.json"
    f.write_text(json.dumps({"num_users": 10, "num_items": 12, "num_entities": 20,
                             "interactions_per_user": 3, "num_planted_intents": 2,
                             "mixtures": [[1, 0, 0, 0, 0, 0], [0, 0.5, 0.5, 0, 0, 0]]}))
    spec = SynthSpec.from_file(f)
    data = generate(spec)
    data.write(tmp_path / "d")
    ds = load_dataset(tmp_path / "d")
    assert ds.train.positives == data.train.positives
    assert json.loads((tmp_path / "d" / "truth.json").read_text())["spec"]["num_users"] == 10


def test_dcor_oracle_basics():
    x = np.array([1.0, 4.0, 2.0, 8.0])
    assert dcor_oracle(x, x)[0] == pytest.approx(1.0, abs=1e-12)
    assert dcor_oracle(np.zeros(4), x) == (0.0, True)


def test_oracle_suite_passes_on_default_dataset():
    from kgin.graph import add_inverse_relations, build_index

    data = generate(SynthSpec())
    kg = add_inverse_relations(data.kg)
    results = run_suite(data.train, data.test, kg, build_index(data.train, kg))
    assert all(r.passed for r in results), "\n".join(map(str, results))


def test_check_paths_detects_wrong_denominator(monkeypatch):
    import kgin.synth.verify as verify

    assert check_paths(num_graphs=2).passed
    real = verify.propagate

    def skewed(params, graph, layers):
        states = real(params, graph, layers)
        states.entity_reps[2] = states.entity_reps[2] * 1.001
        return states

    monkeypatch.setattr(verify, "propagate", skewed)
    assert not check_paths(num_graphs=2).passed


# ---- checkpoints ----

def _params(seed=0):
    return ModelParams.init(4, 6, 2, 3, 2, np.random.default_rng(seed))


def test_checkpoint_roundtrip_with_adam(tmp_path):
    params = _params()
    cfg = TrainConfig(dim=3, num_intents=2)
    adam = Adam(lr=0.01)
    for t in params.tables():
        t.grads[:] = 1.0
    adam.step(params.tables())
    save_checkpoint(tmp_path / "a.ckpt", params, cfg, adam)
    p2, cfg2, adam2 = load_checkpoint(tmp_path / "a.ckpt")
    assert cfg2 == cfg and adam2.t == 1 and adam2.lr == 0.01
    for a, b in zip(params.tables(), p2.tables()):
        assert a.name == b.name and np.array_equal(a.values, b.values)
        assert np.array_equal(adam.m[a.name], adam2.m[b.name])
        assert np.array_equal(adam.v[a.name], adam2.v[b.name])
    save_checkpoint(tmp_path / "b.ckpt", p2, cfg2, adam2)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_without_adam(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", _params(), TrainConfig())
    assert load_checkpoint(tmp_path / "a.ckpt")[2] is None


def test_checkpoint_rejects_corruption(tmp_path):
    f = tmp_path / "a.ckpt"
    save_checkpoint(f, _params(), TrainConfig())
    data = f.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "trail").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trail")
    (tmp_path / "ver").write_bytes(data[:8] + (99).to_bytes(4, "little") + data[12:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ver")


# ---- command line ----

@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"num_users": 30, "num_items": 20, "num_entities": 35,
                                "interactions_per_user": 5}))
    assert main(["gen-synth", "--spec", str(spec), "--out", str(root / "data")]) == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"dim": 8, "epochs": 2, "lr": 0.01, "eval_every": 1}))
    return root


def test_cli_train_eval_explain_measure(dataset, capsys):
    d, out = dataset / "data", dataset / "run"
    assert main(["train", "--config", str(dataset / "cfg.json"), "--data", str(d), "--out", str(out),
                 "--deterministic"]) == 0
    log = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [0, 1, 2] and "recall" in log[-1]
    ckpt = str(out / "model.ckpt")
    capsys.readouterr()
    assert main(["eval", "--ckpt", ckpt, "--data", str(d), "--k", "20"]) == 0
    rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert rec["k"] == 20 and 0 <= rec["recall"] <= 1
    assert main(["eval", "--ckpt", ckpt, "--data", str(d), "--variant", "mf"]) == 0
    assert main(["eval", "--ckpt", ckpt, "--data", str(d), "--variant", "no_intents"]) == 2
    assert main(["explain", "--ckpt", ckpt, "--user", "1", "--item", "2", "--top", "3"]) == 0
    assert "top intent" in capsys.readouterr().out
    assert main(["explain", "--ckpt", ckpt, "--user", "999", "--item", "2"]) == 2
    assert main(["measure-dcor", "--ckpt", ckpt]) == 0
    value = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["mean_dcor"]
    assert 0 <= value <= 1


def test_cli_deterministic_runs_are_bit_identical(dataset):
    d = dataset / "data"
    for name in ("a", "b"):
        assert main(["train", "--config", str(dataset / "cfg.json"), "--data", str(d),
                     "--out", str(dataset / name), "--deterministic", "--seed", "7"]) == 0
    for f in ("model.ckpt", "report.json", "train_log.jsonl"):
        assert (dataset / "a" / f).read_bytes() == (dataset / "b" / f).read_bytes()


def test_cli_verify_commands(dataset, capsys):
    assert main(["verify", "--data", str(dataset / "data")]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") >= 6 and "[FAIL]" not in out
    assert main(["verify-paths", "--graphs", "3"]) == 0
    assert main(["stats", "--data", str(dataset / "data")]) == 0
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["users"] == 30


def test_cli_preprocess(tmp_path, capsys):
    rng = np.random.default_rng(0)
    lists = [sorted(rng.choice(30, size=12, replace=False).tolist()) for _ in range(20)] + [[0]]
    write_cf(tmp_path / "raw.txt", lists)
    triples = [(i, i % 3, 30 + i % 4) for i in range(30)] + [(0, 0, 40)]
    write_kg(tmp_path / "rawkg.txt", TripleSet.from_triples(triples))
    assert main(["preprocess", "--cf", str(tmp_path / "raw.txt"), "--kg", str(tmp_path / "rawkg.txt"),
                 "--out", str(tmp_path / "out"), "--k", "5"]) == 0
    ds = load_dataset(tmp_path / "out")
    assert ds.train.num_users == 20
    merged = [sorted(a + b) for a, b in zip(ds.train.positives, ds.test.positives)]
    assert all(len(p) >= 5 for p in merged)


def test_cli_errors_are_reported(tmp_path, capsys):
    assert main(["eval", "--ckpt", str(tmp_path / "missing"), "--data", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_interaction_set_helpers():
    cf = InteractionSet.from_lists([[2, 0], [1]], num_items=3)
    assert cf.pairs().tolist() == [[0, 0], [0, 2], [1, 1]]
