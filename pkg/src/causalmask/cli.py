"""Command-line entry point: ``causalmask <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import admissions
from .errors import CausalMaskError
from .ingest import (
    Schema,
    decision_counts,
    estimate_world,
    load_table,
    parse_protected_binding,
    quantile_stratify,
)
from .policies import FAMILIES, solve_family
from .sim import CSV_COLUMNS, DEFAULT_BATCH, DEFAULT_CAP, longevity_sweep
from .stats import ALPHA_LEVEL, audit_counts
from .theory import (
    GENERICITY_MODES,
    SWEEP_FAMILIES,
    VOLUME_FAMILIES,
    genericity_experiment,
    performance_sweep,
    sample_world_mode,
    volume_slope,
)
from .world import Policy, WorldModel, load_world

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_OPTIMAL = 2


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _name_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def _emit_json(data, out) -> None:
    json.dump(_jsonable(data), out, indent=2)
    out.write("\n")


def _emit_csv(header, rows, out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)


def _open_output(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _load_world_arg(spec: str) -> WorldModel:
    if spec == "admissions":
        return admissions.world()
    return load_world(spec)


# --- solve -----------------------------------------------------------------


def cmd_solve(args, out) -> int:
    model = _load_world_arg(args.world)
    if args.rho is not None:
        model = model.replace(rho=args.rho)
    policy, report = solve_family(model, args.family, args.eps)
    alpha = policy.alpha.tolist() if policy is not None else None
    if args.format == "json":
        _emit_json({"policy": alpha, "report": report.to_dict()}, out)
    else:
        fields = ["family", "eps", "status", "objective", "ate", "participation", "max_abs_cate", "fair", "masked"]
        data = report.to_dict()
        header = fields + [f"alpha_{x}_{p}" for x in range(model.k) for p in (0, 1)]
        cells = [v for row in alpha for v in row] if alpha is not None else [""] * (2 * model.k)
        _emit_csv(header, [[data[f] for f in fields] + cells], out)
    return EXIT_OK if report.status == "optimal" else EXIT_NOT_OPTIMAL


# --- sweep -----------------------------------------------------------------


def cmd_sweep(args, out) -> int:
    result = performance_sweep(
        args.k, args.rho, args.n_worlds, args.eps, args.families, seed=args.seed, jobs=args.jobs
    )
    print(f"skipped {result.skipped} of {result.n_worlds} worlds with no exploit-fair gap", file=sys.stderr)
    if args.format == "json":
        _emit_json(
            {
                "skipped": result.skipped,
                "n_worlds": result.n_worlds,
                "rows": [dict(zip(("world_id", "eps", "family", "norm_perf"), r)) for r in result.rows],
            },
            out,
        )
    else:
        _emit_csv(("world_id", "eps", "family", "norm_perf"), result.rows, out)
    return EXIT_OK


# --- genericity ------------------------------------------------------------


def cmd_genericity(args, out) -> int:
    modes = GENERICITY_MODES if args.mode == "all" else (args.mode,)
    rows = []
    for mode in modes:
        summary = genericity_experiment(args.k, args.rho, args.n_worlds, mode, seed=args.seed, jobs=args.jobs)
        rows.append({"mode": mode, "k": args.k, "rho": args.rho, **summary.to_dict()})
    if args.format == "json":
        _emit_json(rows, out)
    else:
        header = list(rows[0])
        _emit_csv(header, [[r[h] for h in header] for r in rows], out)
    return EXIT_OK


# --- volume ----------------------------------------------------------------


def cmd_volume(args, out) -> int:
    if args.world is not None:
        model = _load_world_arg(args.world)
    else:
        model = sample_world_mode(args.k, 0.5 / args.k, "free", args.seed)
    slope, acc = volume_slope(model, args.family, args.eps, args.samples, seed=args.seed, jobs=args.jobs)
    if args.format == "json":
        _emit_json(
            {
                "family": args.family,
                "k": model.k,
                "samples": args.samples,
                "points": [{"eps": e, "acceptance": a} for e, a in zip(args.eps, acc)],
                "slope": slope,
            },
            out,
        )
    else:
        _emit_csv(("family", "k", "eps", "acceptance"), [(args.family, model.k, e, a) for e, a in zip(args.eps, acc)], out)
        print(f"log-log slope {slope:.4f}", file=sys.stderr)
    return EXIT_OK


# --- longevity -------------------------------------------------------------


def _policy_spec(text: str):
    name, sep, target = text.partition("=")
    if not sep:
        if text not in FAMILIES:
            raise ValueError(f"unknown policy family {text!r}; expected one of {FAMILIES} or NAME=policy.json")
        return text, text
    if target in FAMILIES:
        return name, target
    with open(target, encoding="utf-8") as fh:
        data = json.load(fh)
    return name, Policy(data["alpha"] if isinstance(data, dict) else data)


def cmd_longevity(args, out) -> int:
    worlds = [_load_world_arg(w) for w in args.worlds]
    specs = args.policy or ["fair", "mask", "exploit"]
    policies = dict(_policy_spec(s) for s in specs)
    result = longevity_sweep(
        worlds,
        policies,
        args.replications,
        seed=args.seed,
        batch_size=args.batch,
        cap=args.cap,
        alpha_level=args.alpha,
        jobs=args.jobs,
    )
    if args.format == "json":
        _emit_json({"rows": result.rows, "summary": result.summary}, out)
    else:
        _emit_csv(CSV_COLUMNS, result.csv_rows(), out)
        for name, stats in result.summary.items():
            print(
                f"{name}: n_caught {stats['n_caught_mean']:.1f} ± {stats['n_caught_se']:.1f}, "
                f"unfairness {stats['total_unfairness_mean']:.2f}",
                file=sys.stderr,
            )
    return EXIT_OK


# --- audit -----------------------------------------------------------------


def cmd_audit(args, out) -> int:
    if "=" in args.protected:
        protected, mapping = parse_protected_binding(args.protected)
    else:
        protected, mapping = args.protected, {}
    covariates = args.covariates
    bins = args.bins if len(args.bins) != 1 else args.bins * len(covariates)
    schema = Schema(tuple(covariates), protected, args.outcome, args.decision, mapping)
    table = load_table(args.data, schema)
    strata = quantile_stratify(table, covariates, bins)
    result = audit_counts(decision_counts(table, strata, protected, args.decision), args.alpha)

    world = None
    if args.outcome is not None:
        estimate = estimate_world(
            table, strata, protected, args.outcome, args.rho,
            minimize=args.minimize, drop_empty_cells=args.drop_empty_cells,
        )
        world = estimate.world
        if args.world_out:
            Path(args.world_out).write_text(json.dumps(world.to_dict(), indent=2) + "\n", encoding="utf-8")
    if args.strata_out:
        Path(args.strata_out).write_text(json.dumps(strata.to_dict(), indent=2) + "\n", encoding="utf-8")

    if args.format == "json":
        _emit_json(
            {
                **result.to_dict(),
                "rows": len(table),
                "dropped_missing": table.dropped_missing,
                "dropped_unmapped": table.dropped_unmapped,
                "k": strata.k,
                "objective_sense": "minimize" if args.minimize else "maximize",
            },
            out,
        )
    else:
        header = ("test", "statistic", "p_value", "df", "reject", "strata_used")
        rows = [[getattr(r, h) if h != "test" else r.name for h in header] for r in (result.ate, result.cate)]
        _emit_csv(header, rows, out)
        out.write(f"verdict,{result.verdict}\n")
    print(
        f"rows {len(table)} (dropped {table.dropped_missing} missing, {table.dropped_unmapped} unmapped), "
        f"k = {strata.k}, verdict {result.verdict}",
        file=sys.stderr,
    )
    return EXIT_OK


# --- sample-world ----------------------------------------------------------


def cmd_sample_world(args, out) -> int:
    model = sample_world_mode(args.k, args.rho, args.mode, args.seed)
    _emit_json(model.to_dict(), out)
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="random seed (default 0)")
    parser.add_argument("--jobs", type=int, default=default(1), help="worker processes (default 1)")
    parser.add_argument("--alpha", type=float, default=default(ALPHA_LEVEL), help="test level (default 0.05)")
    parser.add_argument("--format", choices=("json", "csv"), default=default(None), help="output format")
    parser.add_argument("--output", "-o", default=default(None), help="write to this file instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalmask", description="Fair, masked and exploitative decision policies.")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve one policy family on a world")
    p.add_argument("world", help="world JSON file, or 'admissions'")
    p.add_argument("--family", choices=FAMILIES, default="mask")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--rho", type=float, default=None, help="override the world's participation rate")
    p.set_defaults(func=cmd_solve, default_format="json")

    p = sub.add_parser("sweep", parents=[common], help="normalized performance over an eps grid")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--n-worlds", type=int, default=1000)
    p.add_argument("--eps", type=_float_list, default=[0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0])
    p.add_argument("--families", type=_name_list, default=list(SWEEP_FAMILIES))
    p.set_defaults(func=cmd_sweep, default_format="csv")

    p = sub.add_parser("genericity", parents=[common], help="how often masking beats fairness")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--n-worlds", type=int, default=1000)
    p.add_argument("--mode", choices=(*GENERICITY_MODES, "all"), default="all")
    p.set_defaults(func=cmd_genericity, default_format="csv")

    p = sub.add_parser("volume", parents=[common], help="Monte Carlo volume of relaxed constraint sets")
    p.add_argument("--world", default=None, help="world JSON file or 'admissions'; otherwise sample one with --k")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--family", choices=VOLUME_FAMILIES, default="fair")
    p.add_argument("--eps", type=_float_list, default=[0.02, 0.04, 0.08, 0.16])
    p.add_argument("--samples", type=int, default=1_000_000)
    p.set_defaults(func=cmd_volume, default_format="csv")

    p = sub.add_parser("longevity", parents=[common], help="sample size until unfairness is detected")
    p.add_argument("worlds", nargs="+", help="world JSON files, or 'admissions'")
    p.add_argument(
        "--policy", action="append",
        help="family name or NAME=policy.json / NAME=family; repeatable (default fair, mask, exploit)",
    )
    p.add_argument("--replications", type=int, default=50)
    p.add_argument("--batch", type=int, default=DEFAULT_BATCH)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.set_defaults(func=cmd_longevity, default_format="csv")

    p = sub.add_parser("audit", parents=[common], help="test logged decisions for average and stratified parity")
    p.add_argument("data", help="CSV decision log")
    p.add_argument("--covariates", type=_name_list, required=True)
    p.add_argument("--bins", type=_int_list, default=[4], help="bins per covariate, or one count for all")
    p.add_argument("--protected", required=True, help="column, or column=value:0,value:1")
    p.add_argument("--decision", required=True)
    p.add_argument("--outcome", default=None, help="outcome column; enables world estimation")
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--minimize", action="store_true", help="the outcome is to be minimized (store 1 - E[Y])")
    p.add_argument("--drop-empty-cells", action="store_true")
    p.add_argument("--world-out", default=None)
    p.add_argument("--strata-out", default=None)
    p.set_defaults(func=cmd_audit, default_format="json")

    p = sub.add_parser("sample-world", parents=[common], help="draw a random world as JSON")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--mode", choices=GENERICITY_MODES, default="free")
    p.set_defaults(func=cmd_sample_world, default_format="json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = args.default_format
    try:
        out, close = _open_output(args.output)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("always")
                warnings.showwarning = _warn_to_stderr
                return args.func(args, out)
        finally:
            if close:
                out.close()
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError, CausalMaskError) as exc:
        print(f"causalmask {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _warn_to_stderr(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
