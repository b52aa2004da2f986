"""Command-line entry point: ``kgin <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, make_ablation
from .evaluate import evaluate
from .explain import explain_interaction, explanation_record, format_explanation, load_names
from .graph import (
    InteractionSet,
    k_core_filter,
    load_cf,
    load_dataset,
    load_kg,
    write_cf,
    write_kg,
)
from .independence import mean_pairwise_dcor
from .intents import compute_intents
from .train import TrainingDiverged, fit


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    if args.variant:
        cfg = make_ablation(cfg, args.variant)
    return cfg.replace(deterministic=True) if args.deterministic else cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    with open(out / "train_log.jsonl", "w") as fh:
        def on_epoch(record):
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
        try:
            result = fit(data.train, data.index, cfg, test=data.test, on_epoch=on_epoch)
        except TrainingDiverged as exc:
            save_checkpoint(out / "last_good.ckpt", exc.last_good, cfg)
            print(f"training diverged at epoch {exc.epoch}; last good parameters in "
                  f"{out / 'last_good.ckpt'}", file=sys.stderr)
            return 3
    save_checkpoint(out / "model.ckpt", result.params, cfg, result.adam)
    report = evaluate(result.params, data.index, data.train, data.test, cfg.k, cfg)
    (out / "report.json").write_text(report.to_json() + "\n")
    print(report)
    print(f"checkpoint written to {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    params, cfg, _ = load_checkpoint(args.ckpt)
    if args.variant:
        cfg = make_ablation(cfg, args.variant)
        if args.variant in ("mf", "no_relations_no_intents"):
            # these variants never read the intent tables
            cfg = cfg.replace(num_intents=params.num_intents)
        elif cfg.num_intents != params.num_intents:
            print(f"variant {args.variant} needs {cfg.num_intents} intent(s) but the checkpoint has "
                  f"{params.num_intents}", file=sys.stderr)
            return 2
    data = load_dataset(args.data)
    report = evaluate(params, data.index, data.train, data.test, args.k, cfg)
    print(report)
    print(report.to_json())
    return 0


def cmd_explain(args) -> int:
    params, _, _ = load_checkpoint(args.ckpt)
    names = load_names(args.names) if args.names else None
    try:
        exp = explain_interaction(args.user, args.item, params, top=args.top)
    except LookupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(format_explanation(exp, names))
    print(explanation_record(exp, names))
    return 0


def cmd_gen_synth(args) -> int:
    from .synth import SynthSpec, generate

    spec = SynthSpec.from_file(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = SynthSpec(**{**spec.to_dict(), "seed": args.seed, "mixtures": spec.mixtures})
    data = generate(spec)
    data.write(args.out)
    print(f"wrote {data.train.num_users} users, {data.train.num_interactions + data.test.num_interactions} "
          f"interactions, {len(data.kg)} triples to {args.out}")
    return 0


def cmd_verify(args) -> int:
    from .synth.verify import run_suite

    data = load_dataset(args.data)
    results = run_suite(data.train, data.test, data.kg, data.index, seed=args.seed)
    for r in results:
        print(r)
    return 0 if all(r.passed for r in results) else 1


def cmd_verify_paths(args) -> int:
    from .synth.verify import check_paths

    result = check_paths(seed=args.seed, num_graphs=args.graphs, num_entities=args.entities)
    print(result)
    return 0 if result.passed else 1


def cmd_measure_dcor(args) -> int:
    params, cfg, _ = load_checkpoint(args.ckpt)
    intents = compute_intents(params.intent_config(), params.relation.values).embeddings
    value = mean_pairwise_dcor(intents)
    print(f"mean pairwise dcor over {len(intents)} intents: {value:.6f}")
    print(json.dumps({"mean_dcor": value, "num_intents": len(intents), "fingerprint": cfg.fingerprint()}))
    return 0


def cmd_preprocess(args) -> int:
    cf = load_cf(args.cf)
    kg = load_kg(args.kg)
    lists, kg = k_core_filter(cf, kg, k=args.k)
    rng = np.random.default_rng(args.seed)
    train, test = [], []
    for items in lists:
        items = rng.permutation(items)
        n_test = int(round(len(items) * args.test_fraction))
        test.append(sorted(items[:n_test].tolist()))
        train.append(sorted(items[n_test:].tolist()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cf(out / "train.txt", train)
    write_cf(out / "test.txt", test)
    write_kg(out / "kg_final.txt", kg)
    n_items = InteractionSet.from_lists(lists).num_items
    print(f"{len(lists)} users, {n_items} items, {sum(map(len, lists))} interactions, "
          f"{kg.num_relations} relations, {len(kg)} triples")
    return 0


def cmd_stats(args) -> int:
    data = load_dataset(args.data)
    n_inter = data.train.num_interactions + data.test.num_interactions
    print(json.dumps({
        "users": data.index.num_users,
        "items": data.train.num_items,
        "interactions": n_inter,
        "entities": data.kg.num_entities,
        "relations": data.kg.num_canonical_relations,
        "triples": len(data.kg) // 2,
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kgin", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch record to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--config", help="JSON config file (defaults used if omitted)")
    t.add_argument("--data", required=True, help="directory with train.txt, test.txt, kg_final.txt")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--variant", choices=["full", "no_intents", "no_relations_no_intents", "mf"])
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--deterministic", action="store_true",
                   help="single-threaded, ordered accumulation (always the case in this build)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="all-ranking recall@k / ndcg@k of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--k", type=int, default=20)
    e.add_argument("--variant", choices=["full", "no_intents", "no_relations_no_intents", "mf"])
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("explain", help="intent attention for a user and the top intent's relations")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--user", type=int, required=True)
    x.add_argument("--item", type=int, required=True)
    x.add_argument("--names", help="relation id to name map")
    x.add_argument("--top", type=int, default=5)
    x.set_defaults(func=cmd_explain)

    g = sub.add_parser("gen-synth", help="write a planted-intent synthetic dataset")
    g.add_argument("--spec", help="JSON synthetic spec (defaults used if omitted)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_synth)

    v = sub.add_parser("verify", help="run the oracle suite against a dataset")
    v.add_argument("--data", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    vp = sub.add_parser("verify-paths", help="aggregation vs path enumeration on random graphs")
    vp.add_argument("--seed", type=int, default=0)
    vp.add_argument("--graphs", type=int, default=20)
    vp.add_argument("--entities", type=int, default=50)
    vp.set_defaults(func=cmd_verify_paths)

    m = sub.add_parser("measure-dcor", help="mean pairwise distance correlation of intents")
    m.add_argument("--ckpt", required=True)
    m.set_defaults(func=cmd_measure_dcor)

    pp = sub.add_parser("preprocess", help="k-core filter and split raw interaction and KG files")
    pp.add_argument("--cf", required=True, help="raw interactions, one 'user item item ...' line per user")
    pp.add_argument("--kg", required=True, help="raw 'head relation tail' triples")
    pp.add_argument("--out", required=True)
    pp.add_argument("--k", type=int, default=10)
    pp.add_argument("--test-fraction", type=float, default=0.2)
    pp.add_argument("--seed", type=int, default=2020)
    pp.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("stats", help="dataset counts")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
