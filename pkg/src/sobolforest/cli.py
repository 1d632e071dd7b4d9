"""Command-line front end.

Subcommands: `fit` trains and serializes a forest; `importance` runs the
requested estimators over all covariates; `simulate` writes simulated
datasets (with an oracle sidecar for the five-covariate example); `analytic`
prints the closed-form decomposition; `rfe` emits the elimination trace.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command honors --seed; reruns with identical argv produce identical
output bytes unless --timestamp is requested. --threads caps the worker pool
for forest fitting (default: SOBOLFOREST_THREADS or all cores); results never
depend on it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone

from . import analytic, gaussian, importance, selection
from .data import ConfigError, DataError, ForestConfig, Rng, load_csv, write_csv
from .forest import fit_forest, oob_error

_METHODS = ("tt", "bc", "bc_normalized", "ik", "sobol", "lundberg", "retrain")


class UsageError(Exception):
    pass


def _threads(args) -> int | None:
    if getattr(args, "threads", None) is not None:
        return args.threads
    env = os.environ.get("SOBOLFOREST_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"SOBOLFOREST_THREADS is not an integer: {env!r}")
    return os.cpu_count()


def _forest_config(args, seed: int) -> ForestConfig:
    if getattr(args, "config", None):
        cfg = ForestConfig.load(args.config)
        if seed != 0:
            from dataclasses import replace

            cfg = replace(cfg, seed=seed)
        return cfg
    return ForestConfig(
        n_trees=args.trees,
        subsample_size=args.subsample,
        max_leaves=args.max_leaves,
        min_node_size=args.min_node,
        mtry=args.mtry,
        gamma=args.gamma,
        delta=args.delta,
        seed=seed,
    )


def _add_forest_flags(sp):
    sp.add_argument("--trees", type=int, default=300, help="number of trees")
    sp.add_argument("--subsample", type=int, default=None, help="rows per tree (default ceil(0.632 n))")
    sp.add_argument("--max-leaves", type=int, default=None, help="leaf budget per tree")
    sp.add_argument("--min-node", type=int, default=5, help="minimum rows per child")
    sp.add_argument("--mtry", type=int, default=None, help="split candidates per node (default ceil(p/3))")
    sp.add_argument("--gamma", type=float, default=0.0, help="minimum child fraction of parent rows")
    sp.add_argument("--delta", type=float, default=0.0, help="probability of a single split candidate")
    sp.add_argument("--config", default=None, help="JSON file with forest config fields")


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--timestamp", action="store_true", help="include a UTC timestamp in JSON output")


def _maybe_stamp(payload: dict, args) -> dict:
    if getattr(args, "timestamp", False):
        payload["timestamp"] = datetime.now(timezone.utc).isoformat()
    return payload


def cmd_fit(args) -> int:
    data = load_csv(args.data, args.target)
    cfg = _forest_config(args, args.seed)
    forest = fit_forest(data, cfg, threads=_threads(args))
    err, n_def = oob_error(forest, data)
    if args.out:
        forest.save(args.out)
    print(f"oob_error {err!r}")
    print(f"oob_points {n_def}")
    return 0


def cmd_importance(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    # validate the whole request before any compute starts
    problems = [
        f"unknown method {m!r} (valid: {', '.join(_METHODS)})"
        for m in methods
        if m not in _METHODS
    ]
    if not methods:
        problems.append("--methods is empty")
    if args.reps < 1:
        problems.append("--reps must be >= 1")
    if "tt" in methods and not args.test_data:
        problems.append("method tt needs --test-data")
    if args.format == "csv" and not args.out:
        problems.append("--format csv needs --out")
    if problems:
        raise UsageError("; ".join(problems))
    data = load_csv(args.data, args.target)
    test = None
    if "tt" in methods:
        test = load_csv(args.test_data, args.target)
    cfg = _forest_config(args, args.seed)
    forest = fit_forest(data, cfg, threads=_threads(args))
    rng = Rng(args.seed).child(1)
    reports = []
    for mi, m in enumerate(methods):
        normalizer = (
            importance.comparison_normalizer(m, data) if args.normalized else 1.0
        )
        reports.append(
            importance.importance_report(
                forest,
                data,
                m,
                rng.child(mi),
                repetitions=args.reps,
                test=test,
                block_size=args.block_size,
                normalizer=normalizer,
                feature_names=data.names(),
            )
        )
    if args.format == "json":
        payload = _maybe_stamp(
            {"methods": [r.to_json() for r in reports]}, args
        )
        text = json.dumps(payload, indent=2)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            print(text)
    else:
        importance.reports_to_csv(reports, args.out)
    return 0


def cmd_simulate(args) -> int:
    if args.spec:
        spec = gaussian.GaussianSpec.load(args.spec)
    elif args.example == 1:
        spec = gaussian.example1_spec(noise_ratio=args.noise)
    elif args.example == 2:
        spec = gaussian.example2_spec(noise_ratio=args.noise)
    else:
        raise UsageError("simulate needs --example 1|2 or --spec FILE")
    data = gaussian.sample_gaussian(spec, args.n, Rng(args.seed))
    write_csv(data, args.out)
    if args.sidecar:
        payload = {"spec": spec.to_json(), "n": args.n, "seed": args.seed}
        if args.example == 1 and not args.spec:
            payload["oracle"] = analytic.analytic_example1(
                noise_ratio=args.noise
            ).to_json()
        with open(args.sidecar, "w", encoding="utf-8") as fh:
            json.dump(_maybe_stamp(payload, args), fh, indent=2)
            fh.write("\n")
    return 0


def cmd_analytic(args) -> int:
    sigma = args.sigma
    if len(sigma) == 1:
        sigma = sigma * 5
    if len(sigma) != 5:
        raise UsageError("--sigma takes one or five values")
    dec = analytic.analytic_example1(
        alpha=args.alpha,
        beta=args.beta,
        sigma=sigma,
        rho12=args.rho12,
        rho45=args.rho45,
        noise_ratio=args.noise,
    )
    if args.format == "json":
        print(json.dumps(_maybe_stamp(dec.to_json(), args), indent=2))
    else:
        print(dec.table())
    return 0


def cmd_rfe(args) -> int:
    data = load_csv(args.data, args.target)
    cfg = _forest_config(args, args.seed)
    if args.method not in ("bc", "ik", "sobol", "retrain"):
        raise UsageError(f"unknown rfe method {args.method!r}")
    trace = selection.rfe(
        data,
        cfg,
        method=args.method,
        folds=args.folds,
        repeats=args.repeats,
        rng=Rng(args.seed).child(2),
        batch_fraction=args.batch_fraction,
    )
    if args.format == "json":
        text = json.dumps(_maybe_stamp(trace.to_json(), args), indent=2)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            print(text)
    else:
        if not args.out:
            raise UsageError("--format csv needs --out")
        trace.write_csv(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sobolforest",
        description="Regression random forests with total-Sobol variable importance",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", help="train a forest, print OOB error, optionally serialize")
    sp.add_argument("--data", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--out", default=None, help="write the forest as JSON")
    _add_forest_flags(sp)
    _add_common(sp)
    sp.set_defaults(fn=cmd_fit)

    sp = sub.add_parser("importance", help="compute importance estimates for all covariates")
    sp.add_argument("--data", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--methods", required=True, help="comma list: " + ",".join(_METHODS))
    sp.add_argument("--reps", type=int, default=1, help="repetitions of the permutation layer")
    sp.add_argument("--block-size", type=int, default=None, help="trees per block for method ik")
    sp.add_argument("--normalized", action="store_true", help="emit on the Sobol scale (bc,tt: /2*Var[Y]; ik: /Var[Y])")
    sp.add_argument("--test-data", default=None, help="independent sample for method tt")
    sp.add_argument("--out", default=None)
    _add_forest_flags(sp)
    _add_common(sp)
    sp.set_defaults(fn=cmd_importance)

    sp = sub.add_parser("simulate", help="write a simulated dataset as CSV")
    sp.add_argument("--example", type=int, choices=(1, 2), default=None)
    sp.add_argument("--spec", default=None, help="JSON simulation spec file")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sidecar", default=None, help="write spec (and oracle) JSON here")
    _add_common(sp)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("analytic", help="print the closed-form decomposition table")
    sp.add_argument("--alpha", type=float, default=1.5)
    sp.add_argument("--beta", type=float, default=1.0)
    sp.add_argument("--sigma", type=float, nargs="+", default=[1.0])
    sp.add_argument("--rho12", type=float, default=0.9)
    sp.add_argument("--rho45", type=float, default=0.6)
    sp.add_argument("--noise", type=float, default=0.1)
    _add_common(sp)
    sp.set_defaults(fn=cmd_analytic)

    sp = sub.add_parser("rfe", help="recursive feature elimination trace")
    sp.add_argument("--data", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--method", default="sobol")
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--repeats", type=int, default=1)
    sp.add_argument("--batch-fraction", type=float, default=0.0,
                    help="remove this fraction of covariates per step (0 = one at a time)")
    sp.add_argument("--out", default=None)
    _add_forest_flags(sp)
    _add_common(sp)
    sp.set_defaults(fn=cmd_rfe)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/compute failure
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
