"""Command-line entry point: ``zvl <command> ...``.

Every command writes ``<output>.manifest.json`` next to its main output.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import Predictor, mf_train, zipf_calibration
from .core import TrainConfig, split_holdout, strip_values
from .io import (
    DatasetDescriptor,
    RunManifest,
    load_ballots,
    load_predictor,
    load_ratings,
    read_id_map,
    save_predictor,
    sha256,
    write_id_map,
    write_ratings,
    write_tally,
)
from .metrics import EvalReport, fairness_popularity, kendall_tau, mae, pairwise_accuracy, ranking_from_scores
from .pareto_rank import ppr_train
from .skellam_rank import skellam_train
from .voting import Election, SynthSpec, borda_tally, claim_experiment, generate_synthetic, range_tally
from .zeromat import zeromat_train

ALGOS = ("zeromat", "ppr", "skellam", "mf", "itemmean", "random")

# Per-algorithm defaults; explicit flags override them.
ALGO_DEFAULTS = {
    "zeromat": dict(lr=0.01, epochs=30),
    # a 1e-8 margin floor lets one negative margin blow the factors up
    "ppr": dict(lr=0.01, epochs=20, eps=0.1, item_sample=10),
    "skellam": dict(lr=0.1, epochs=10, item_sample=10),
    "mf": dict(lr=0.01, epochs=30),
}


def algo_config(algo: str, **overrides) -> TrainConfig:
    params = dict(ALGO_DEFAULTS.get(algo, {}))
    params.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**params)


def _manifest(args, argv, config: dict, inputs: list, outputs: list) -> None:
    out = Path(outputs[0])
    RunManifest(
        command=["zvl", *argv],
        config=config,
        seed=getattr(args, "seed", None),
        inputs={str(p): sha256(p) for p in inputs},
        outputs=[str(p) for p in outputs],
    ).write(out.with_name(out.name + ".manifest.json"))


def _ratings(path, fmt, scale=None, ids=None):
    desc = DatasetDescriptor(path, fmt, scale)
    if ids is not None:
        desc.user_ids, desc.item_ids = read_id_map(ids)
    return load_ratings(desc), desc


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".ids.json")


def cmd_generate(args, argv):
    spec = SynthSpec(args.users, args.items, args.scale, args.density, args.noise, args.seed)
    matrix = generate_synthetic(spec)
    write_ratings(matrix, args.output, args.format)
    _manifest(args, argv, asdict(spec), [], [args.output])
    print(f"wrote {len(matrix)} ratings to {args.output}")


def cmd_split(args, argv):
    matrix, desc = _ratings(args.ratings, args.format, args.scale)
    train, test = split_holdout(matrix, args.fraction, args.seed)
    write_ratings(train, args.train_out, args.format, desc)
    write_ratings(test, args.test_out, args.format, desc)
    idmap = _sidecar(args.train_out)
    write_id_map(desc, idmap)
    _manifest(args, argv, {"fraction": args.fraction}, [args.ratings], [args.train_out, args.test_out, idmap])
    print(f"train {len(train)} / test {len(test)}")


def train_predictor(algo: str, matrix, config: TrainConfig):
    """Returns (predictor, trace or None)."""
    if algo == "itemmean":
        return Predictor.item_mean(matrix), None
    if algo == "random":
        return Predictor.uniform_random(config.seed, matrix.scale), None
    if algo == "mf":
        model, trace = mf_train(matrix, config)
        return Predictor.factor(model, matrix.scale), trace
    pattern = strip_values(matrix)
    if algo == "zeromat":
        state = zeromat_train(pattern, config)
        model, trace = state.model, state.trace
    elif algo == "ppr":
        model, trace = ppr_train(matrix, config)
    elif algo == "skellam":
        model, trace = skellam_train(matrix, config)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    # ranking/value-free scores are not on the star scale; map them by the Zipf prior
    return Predictor.factor(model, matrix.scale, zipf_calibration(model, pattern, matrix.scale)), trace


def cmd_train(args, argv):
    ids = args.ids
    if ids is None and _sidecar(args.ratings).exists():
        ids = _sidecar(args.ratings)
    matrix, desc = _ratings(args.ratings, args.format, args.scale, ids)
    config = algo_config(args.algo, lr=args.lr, alpha=args.alpha, sigma_u=args.sigma_u,
                         sigma_v=args.sigma_v, epochs=args.epochs, dim=args.dim, eps=args.eps,
                         user_sample=args.user_sample, item_sample=args.item_sample, seed=args.seed)
    pred, trace = train_predictor(args.algo, matrix, config)
    save_predictor(pred, args.output)
    outputs = [args.output]
    if args.audit:
        if args.algo != "zeromat":
            raise ValueError("--audit applies to value-agnostic algorithms (zeromat) only")
        perm = np.random.Generator(np.random.PCG64([args.seed, 99])).permutation(matrix.stars)
        shadow, _ = train_predictor(args.algo, matrix.with_stars(perm), config)
        shadow_path = Path(args.output).with_suffix(".audit.tmp")
        save_predictor(shadow, shadow_path)
        same = sha256(shadow_path) == sha256(args.output)
        shadow_path.unlink()
        if not same:
            raise RuntimeError("value-agnosticism audit failed: model changed when stars were permuted")
        print("audit: model checksum unchanged under star permutation")
    if trace is not None and args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss,seconds\n")
            for e, (loss, sec) in enumerate(zip(trace.losses, trace.wall_clock), start=1):
                fh.write(f"{e},{loss!r},{sec:.6f}\n")
        outputs.append(args.trace)
    idmap = _sidecar(args.output)
    write_id_map(desc, idmap)
    outputs.append(idmap)
    inputs = [args.ratings] + ([ids] if ids is not None else [])
    _manifest(args, argv, {"algo": args.algo, **asdict(config)}, inputs, outputs)
    print(f"trained {args.algo} on {len(matrix)} ratings -> {args.output}")


def cmd_evaluate(args, argv):
    pred = load_predictor(args.model)
    ids = args.ids or _sidecar(args.model)
    test, _ = _ratings(args.test, args.format, pred.scale, ids)
    started = time.perf_counter()
    inputs = [args.model, args.test, ids]
    pop_source = test
    if args.train:
        pop_source, _ = _ratings(args.train, args.format, pred.scale, ids)
        inputs.append(args.train)
    if pred.kind == "factor-model":
        pred.payload.check_shape(test.n_users, test.n_items)
    try:
        acc = pairwise_accuracy(pred, test)
    except ValueError:
        acc = None
    item_pred = pred.score_grid(test.n_users, test.n_items).mean(axis=0)
    seen = np.flatnonzero(test.item_counts() > 0)
    tau = None
    if seen.size >= 2:
        truth = np.bincount(test.items, weights=test.stars, minlength=test.n_items) / np.maximum(test.item_counts(), 1)
        tau = kendall_tau(seen[ranking_from_scores(item_pred[seen])].tolist(),
                          seen[ranking_from_scores(truth[seen])].tolist())
    report = EvalReport(
        mae=mae(pred, test),
        fairness=fairness_popularity(pred, pop_source),
        pairwise_accuracy=acc,
        kendall_tau=tau,
        n_test=len(test),
        seed=args.seed,
        runtime_ms=(time.perf_counter() - started) * 1000.0,
    )
    d = report.as_dict()
    Path(args.output).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
    outputs = [args.output]
    if args.csv:
        new = not Path(args.csv).exists()
        with open(args.csv, "a", encoding="utf-8") as fh:
            if new:
                fh.write("model," + ",".join(d) + "\n")
            fh.write(f"{args.model}," + ",".join("" if v is None else str(v) for v in d.values()) + "\n")
        outputs.append(args.csv)
    _manifest(args, argv, {"fairness": "abs Pearson(item rating count, mean predicted score)"}, inputs, outputs)
    print(json.dumps(d))


def cmd_borda(args, argv):
    ballots, n = load_ballots(args.ballots)
    if args.candidates is not None:
        n = args.candidates
    scores = borda_tally(Election(n, ballots))
    write_tally(scores, args.output)
    _manifest(args, argv, {"rule": "borda"}, [args.ballots], [args.output])
    print(f"winner {ranking_from_scores(scores)[0]}")


def cmd_range(args, argv):
    matrix, desc = _ratings(args.ratings, args.format, args.scale)
    scores = range_tally(matrix)
    write_tally(scores, args.output, desc.item_ids)
    _manifest(args, argv, {"rule": "range"}, [args.ratings], [args.output])
    best = ranking_from_scores(scores)[0]
    print(f"winner {desc.item_ids[best]} (dense id {best})")


def cmd_claim(args, argv):
    spec = SynthSpec(args.users, args.items, args.scale, args.density, args.noise, args.seed)
    zm_cfg = algo_config("zeromat", epochs=args.zeromat_epochs, seed=args.seed)
    report = claim_experiment(spec, n_perm=args.permutations, zeromat_config=zm_cfg,
                              with_zeromat=args.zeromat_epochs > 0)
    d = report.as_dict()
    Path(args.output).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    csv_path = Path(args.output).with_suffix(".csv")
    keys = ["tau_count", "tau_zeromat", "null_q99", "passed", "count_tied", "winner_truth",
            "winner_count", "winner_zeromat", "n_ratings"]
    csv_path.write_text(",".join(keys) + "\n" + ",".join(str(d[k]) for k in keys) + "\n", encoding="utf-8")
    _manifest(args, argv, {"spec": asdict(spec), "permutations": args.permutations,
                           "zeromat": asdict(zm_cfg)}, [], [args.output, csv_path])
    verdict = "PASS" if report.passed else "FAIL"
    print(f"tau_count={report.tau_count:.4f} null_q99={report.null_q99:.4f} {verdict}")


def _synth_flags(p, users=100, items=50):
    p.add_argument("--users", type=int, default=users)
    p.add_argument("--items", type=int, default=items)
    p.add_argument("--scale", type=int, default=5)
    p.add_argument("--density", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)


def _data_flags(p):
    p.add_argument("--format", choices=["movielens-tab", "csv"], default="movielens-tab")
    p.add_argument("--scale", type=int, default=None, help="star scale; inferred from data when omitted")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zvl", description="Value-free recommenders and voting tallies")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic Zipf ratings file")
    _synth_flags(p)
    p.add_argument("--format", choices=["movielens-tab", "csv"], default="movielens-tab")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", help="random train/test split of a ratings file")
    p.add_argument("ratings")
    _data_flags(p)
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a predictor")
    p.add_argument("--algo", choices=ALGOS, required=True)
    p.add_argument("--ratings", required=True)
    _data_flags(p)
    for flag, typ in [("--lr", float), ("--alpha", float), ("--sigma-u", float), ("--sigma-v", float),
                      ("--epochs", int), ("--dim", int), ("--eps", float), ("--user-sample", int),
                      ("--item-sample", int)]:
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ids", default=None, help="id map JSON (default: <ratings>.ids.json when present)")
    p.add_argument("--trace", default=None, help="per-epoch loss CSV")
    p.add_argument("--audit", action="store_true", help="re-train on permuted stars and require an identical model")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained predictor on a test split")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train", default=None, help="training ratings; item popularity for fairness comes from here")
    p.add_argument("--ids", default=None, help="id map JSON (default: <model>.ids.json)")
    p.add_argument("--format", choices=["movielens-tab", "csv"], default="movielens-tab")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None, help="append the report as a CSV row")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("borda", help="Borda count")
    bsub = p.add_subparsers(dest="action", required=True)
    t = bsub.add_parser("tally")
    t.add_argument("ballots")
    t.add_argument("--candidates", type=int, default=None)
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=cmd_borda)

    p = sub.add_parser("range", help="range voting")
    rsub = p.add_subparsers(dest="action", required=True)
    t = rsub.add_parser("tally")
    t.add_argument("ratings")
    _data_flags(t)
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=cmd_range)

    p = sub.add_parser("claim-experiment", help="predict a range-voting tally without reading stars")
    _synth_flags(p, users=1000, items=100)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--zeromat-epochs", type=int, default=10, help="0 skips the ZeroMat predictor")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_claim)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args, argv)
    except (ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"zvl: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
