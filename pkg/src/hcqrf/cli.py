"""Command-line front end.

Subcommands: ``fit``, ``predict``, ``importance``, ``simulate`` and
``benchmark``.  Every run writes a JSON manifest (arguments, seed, version)
beside its main output.  Failures print one JSON line to stderr and exit
with 2 (bad arguments), 3 (bad data or files) or 4 (numerical failure).

Set ``HCQRF_LOG_LEVEL`` (e.g. ``INFO``) for progress messages.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .censoring import CdfConfig
from .data import ScenarioSpec, load_covariates, load_dataset, simulate_scenario, write_dataset
from .errors import DataError, HcqrfError, NumericalError
from .forest import ForestConfig, estimate_many, grow_forest, load_forest, oob_tree_mask, save_forest

log = logging.getLogger("hcqrf")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _unit_interval(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _forest_flags(p):
    g = p.add_argument_group("forest")
    g.add_argument("--b", "--trees", dest="trees", type=_positive_int, default=500,
                   help="number of trees (default 500)")
    g.add_argument("--min-split", type=_positive_int, default=20,
                   help="smallest node that may be split (default 20)")
    g.add_argument("--sample-fraction", type=float, default=0.8,
                   help="subsampling rate without replacement (default 0.8)")
    g.add_argument("--mtry", type=_positive_int, help="modifiers tried per split (default ceil(p/3))")
    g.add_argument("--min-leaf", type=_positive_int, help="smallest child (default max(5, q+2))")
    g.add_argument("--max-cuts", type=_positive_int, default=50,
                   help="grid of cut points per modifier, refined around the best (default 50)")
    g.add_argument("--split-rule", choices=("hybrid", "marginal"), default="hybrid")
    g.add_argument("--complete-data", action="store_true",
                   help="treat every time as an event (no censoring model)")
    g.add_argument("--rsf-trees", type=_positive_int, default=250,
                   help="trees in the censoring model (default 250)")
    g.add_argument("--rsf-node-size", type=_positive_int, default=15,
                   help="node size of the censoring model (default 15)")


def _common_flags(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, help="random seed (drawn and recorded when omitted)")
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker threads (default: all cores); results do not depend on it")


def _scenario_flags(p):
    p.add_argument("--config", help="JSON file with ScenarioSpec keys; flags override it")
    p.add_argument("--scenario", help="scenario id, e.g. S1 or S3b_heavy_tail")
    p.add_argument("--n1", type=_positive_int, help="training size")
    p.add_argument("--n2", type=_positive_int, help="test size")
    p.add_argument("--p", type=_positive_int, help="number of modifiers")
    p.add_argument("--tau", type=_unit_interval, help="quantile level")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hcqrf", description="Hybrid censored quantile regression forest.")
    parser.add_argument("--version", action="version", version=f"hcqrf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="grow a forest from a survival CSV")
    p.add_argument("--input", required=True, help="CSV with time,status,x_*,z_* columns")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--tau", type=_unit_interval, default=0.5)
    _forest_flags(p)
    _common_flags(p)

    p = sub.add_parser("predict", help="coefficients and quantiles at new rows")
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="CSV with x_* and z_* columns (training rows with --oob)")
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--tau", type=_unit_interval, help="quantile level (default: the model's)")
    p.add_argument("--oob", action="store_true",
                   help="out-of-bag estimates for the training rows")
    _common_flags(p, seed=False)

    p = sub.add_parser("importance", help="permutation variable importance")
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="training CSV; checked against the rows stored in the model")
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--tau", type=_unit_interval)
    p.add_argument("--m", type=_positive_int, default=100, help="permutations (default 100)")
    p.add_argument("--no-decompose", action="store_true", help="skip the by-arm split")
    _common_flags(p)

    p = sub.add_parser("simulate", help="write train/test/truth CSVs for a scenario")
    _scenario_flags(p)
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("benchmark", help="Monte Carlo comparison of forest variants")
    _scenario_flags(p)
    p.add_argument("--reps", type=_positive_int, default=20)
    p.add_argument("--methods", default="hcqrf",
                   help="comma separated subset of hcqrf,hcqrf_c,marginal,marginal_c")
    p.add_argument("--outdir", required=True)
    _forest_flags(p)
    _common_flags(p)
    return parser


# --------------------------------------------------------------------------
# helpers

def _draw_seed() -> int:
    return int(np.random.SeedSequence().generate_state(1)[0])


def _forest_config(args) -> ForestConfig:
    return ForestConfig(
        n_trees=args.trees, min_split=args.min_split, sample_fraction=args.sample_fraction,
        mtry=args.mtry, min_leaf=args.min_leaf, max_candidate_cuts=args.max_cuts,
        split_rule=args.split_rule, complete_data=args.complete_data,
        cdf=CdfConfig(n_trees=args.rsf_trees, node_size=args.rsf_node_size),
    )


def _scenario_spec(args, seed) -> ScenarioSpec:
    fields = {}
    if args.config:
        try:
            fields = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config}: invalid JSON ({exc})") from None
        unknown = set(fields) - {"scenario_id", "n1", "n2", "p", "tau", "seed"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, flag in (("scenario_id", "scenario"), ("n1", "n1"), ("n2", "n2"), ("p", "p"),
                      ("tau", "tau")):
        if getattr(args, flag) is not None:
            fields[key] = getattr(args, flag)
    if "scenario_id" not in fields:
        raise UsageError("a scenario is required (--scenario or --config)")
    if seed is not None:
        fields["seed"] = seed
    elif "seed" not in fields:
        fields["seed"] = _draw_seed()
    return ScenarioSpec(**fields)


def _write_manifest(path, args, seed, outputs, extra=None):
    manifest = {
        "subcommand": args.command,
        "argv": args.argv,
        "config": _config(args),
        "seed": seed,
        "version": __version__,
        "outputs": [str(o) for o in outputs],
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                          encoding="utf-8")


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("command", "argv")}


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _fmt(v) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


# --------------------------------------------------------------------------
# subcommands

def cmd_fit(args):
    seed = _draw_seed() if args.seed is None else args.seed
    data = load_dataset(args.input)
    forest = grow_forest(data, args.tau, _forest_config(args), seed=seed, n_jobs=args.threads)
    save_forest(forest, args.out)
    _write_manifest(_manifest_path(args.out), args, seed, [args.out])
    print(f"fitted {forest.n_trees} trees on n={data.n} (p={data.p}, q={data.q}, "
          f"censored {data.censoring_rate:.1%}) at tau={args.tau:g}; wrote {args.out}")


def cmd_predict(args):
    forest = load_forest(args.model)
    data = forest.data
    if args.oob:
        if args.input is not None:
            x, _ = load_covariates(args.input, data.modifier_names, data.predictor_names)
            if x.shape != data.x.shape or not np.array_equal(x, data.x):
                raise DataError("--oob needs the training rows, in training order")
        x, z = data.x, data.z
        tree_use = oob_tree_mask(forest)
    else:
        if args.input is None:
            raise UsageError("predict: --input is required without --oob")
        x, z = load_covariates(args.input, data.modifier_names, data.predictor_names)
        tree_use = None
    betas, _, effn, status = estimate_many(forest, x, args.tau, tree_use, n_jobs=args.threads)
    if args.oob:
        ok = status == 0
    else:
        bad = np.flatnonzero(status != 0)
        if bad.size:
            raise NumericalError(
                f"estimation failed at {bad.size} rows (first: row {bad[0] + 1}, status {status[bad[0]]})"
            )
        ok = np.ones(len(status), dtype=bool)
    quant = np.einsum("ij,ij->i", z, betas)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + [f"beta_{n}" for n in data.predictor_names]
                   + ["quantile", "effective_n", "status"])
        for i in range(len(status)):
            vals = [_fmt(b) for b in betas[i]] + [_fmt(quant[i])] if ok[i] else [""] * (data.q + 1)
            w.writerow([i + 1] + vals + [_fmt(effn[i]), int(status[i])])
    _write_manifest(_manifest_path(args.out), args, forest.seed, [args.out])
    n_fail = int(np.sum(~ok))
    print(f"wrote {len(status)} rows to {args.out}" + (f" ({n_fail} without OOB estimate)" if n_fail else ""))


def cmd_importance(args):
    from .importance import permutation_importance

    seed = _draw_seed() if args.seed is None else args.seed
    forest = load_forest(args.model)
    if args.input is not None:
        data = load_dataset(args.input)
        ref = forest.data
        same = (data.n == ref.n and data.p == ref.p and np.array_equal(data.x, ref.x)
                and np.array_equal(data.y, ref.y) and np.array_equal(data.delta, ref.delta))
        if not same:
            raise DataError("input does not match the training rows stored in the model")
    report = permutation_importance(forest, args.tau, M=args.m, seed=seed,
                                    decompose=False if args.no_decompose else None)
    report.to_csv(args.out)
    _write_manifest(_manifest_path(args.out), args, seed, [args.out])
    print(report.format())


def cmd_simulate(args):
    spec = _scenario_spec(args, args.seed)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    train, truth = simulate_scenario(spec)
    paths = [outdir / "train.csv", outdir / "test.csv", outdir / "truth.csv"]
    write_dataset(train, paths[0])
    xcols = [f"x_{m}" for m in train.modifier_names]
    zcols = [f"z_{m}" for m in train.predictor_names[1:]]
    with open(paths[1], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(xcols + zcols)
        for i in range(truth.x_star.shape[0]):
            w.writerow([repr(float(v)) for v in truth.x_star[i]]
                       + [repr(float(v)) for v in truth.z_star[i, 1:]])
    with open(paths[2], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + [f"beta_{n}" for n in train.predictor_names] + ["quantile"])
        for i in range(truth.x_star.shape[0]):
            w.writerow([i + 1] + [repr(float(v)) for v in truth.beta_true[i]]
                       + [repr(float(truth.q_true[i]))])
    _write_manifest(outdir / "manifest.json", args, spec.seed, paths,
                    {"spec": asdict(spec), "censoring_rate": train.censoring_rate})
    print(f"{spec.scenario_id}: n1={spec.n1} n2={spec.n2} censored {train.censoring_rate:.1%}; "
          f"wrote {outdir}")


def cmd_benchmark(args):
    from .benchmark import METHODS, monte_carlo_benchmark, write_benchmark

    spec = _scenario_spec(args, args.seed)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if not methods or unknown:
        raise UsageError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")

    def progress(rec):
        log.info("rep %d %s %.1fs", rec.rep, rec.method, rec.seconds)

    result = monte_carlo_benchmark(spec, methods, args.reps, spec.seed, _forest_config(args),
                                   n_jobs=args.threads, progress=progress)
    csv_path, man_path = write_benchmark(
        result, args.outdir,
        {"subcommand": "benchmark", "argv": args.argv, "seed": spec.seed, "cli": _config(args)},
    )
    print(result.table.format())
    print(f"wrote {csv_path} and {man_path}")


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "importance": cmd_importance,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
}


def _fail(code, kind, message) -> int:
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": str(message)}) + "\n")
    return code


def run(argv=None) -> int:
    """Execute one command line; returns the process exit code."""
    logging.basicConfig(
        level=os.environ.get("HCQRF_LOG_LEVEL", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        argv = list(sys.argv[1:] if argv is None else argv)
        args = build_parser().parse_args(argv)
        args.argv = argv
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)
    except (HcqrfError, OSError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except ValueError as exc:
        # configuration values rejected by the library
        return _fail(EXIT_USAGE, "usage", exc)
    except ArithmeticError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)
    return 0


def main():
    sys.exit(run())
