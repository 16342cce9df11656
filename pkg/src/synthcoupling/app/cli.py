"""Command-line entry point: ``synthcoupling {solve,impute,infer,simulate,bench,prepare-dw}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import InvalidInputError, KSCError
from .bench import bench_table, knn_impute, regression_impute
from .config import RunConfig, load_config
from .data import (
    DW_COLUMNS,
    coupling_frame,
    combine_dw,
    load_csv,
    write_csv,
    write_json,
)
from .pipeline import report_dict, run_impute, run_infer, run_solve
from .simulation import run_simulation

logger = logging.getLogger("synthcoupling")

EXIT_USAGE = 2
EXIT_FAILURE = 1


def _load(args) -> tuple[RunConfig, object]:
    cfg = load_config(args.config, seed=args.seed)
    if args.data is None:
        raise InvalidInputError(f"'{args.command}' needs --data")
    return cfg, load_csv(args.data, cfg.columns)


def _solve_outputs(out: Path, command: str, cfg, data, outcome) -> dict:
    control_ids, treated_ids = outcome.problem.ids(data)
    write_csv(out / "coupling.csv", coupling_frame(outcome.report.matrix, control_ids, treated_ids))
    report = report_dict(command, cfg, data, outcome)
    return report


def cmd_solve(args) -> dict:
    cfg, data = _load(args)
    outcome = run_solve(data, cfg)
    report = _solve_outputs(args.out, "solve", cfg, data, outcome)
    write_json(args.out / "report.json", report)
    return report


def _imputation_frame(treated_ids, Y_treated, result):
    return pd.DataFrame({
        "treated_id": [str(t) for t in treated_ids],
        "observed": Y_treated,
        "imputed": result.imputed,
        "effect": result.effects,
        "weight": result.weights,
    })


def cmd_impute(args) -> dict:
    cfg, data = _load(args)
    outcome = run_solve(data, cfg)
    result = run_impute(outcome, data)
    _, treated_ids = outcome.problem.ids(data)
    _, Yt = outcome.problem.outcomes(data)
    write_csv(
        args.out / "imputations.csv",
        _imputation_frame(treated_ids, Yt, result),
        footer_lines=[f"aggregate={result.aggregate!r}", f"kind={result.aggregate_kind}"],
    )
    report = _solve_outputs(args.out, "impute", cfg, data, outcome)
    report["aggregate"] = {"kind": result.aggregate_kind, "value": result.aggregate,
                           "identity_error": result.identity_error}
    write_json(args.out / "report.json", report)
    return report


def cmd_infer(args) -> dict:
    cfg, data = _load(args)
    outcome = run_solve(data, cfg)
    inf = run_infer(outcome, data, cfg)
    iv = inf.intervals
    _, treated_ids = outcome.problem.ids(data)
    frame = pd.DataFrame({
        "treated_id": [str(t) for t in treated_ids],
        "center": iv.center,
        "bias_radius": iv.bias_radius,
        "variance_radius": iv.variance_radius,
        "lower": iv.lower,
        "upper": iv.upper,
        "sum_sq_weights": inf.sum_sq,
    })
    header = [
        f"theta_hat={inf.ridge.theta_hat!r}",
        f"sigma0_hat={inf.ridge.sigma0_hat!r}",
        f"rho={inf.ridge.rho!r}",
        f"alpha={iv.alpha!r}",
        f"z={iv.z!r}",
        f"lambda={outcome.lam!r}",
    ]
    write_csv(args.out / "intervals.csv", frame, header_lines=header)
    report = _solve_outputs(args.out, "infer", cfg, data, outcome)
    report["inference"] = {"theta_hat": inf.ridge.theta_hat, "sigma0_hat": inf.ridge.sigma0_hat,
                           "rho": inf.ridge.rho, "alpha": iv.alpha, "z": iv.z}
    write_json(args.out / "report.json", report)
    return report


def cmd_simulate(args) -> dict:
    cfg = load_config(args.config, seed=args.seed)
    result = run_simulation(cfg.simulation, cfg.seed, progress=logger.info)
    write_csv(args.out / "coverage.csv", result.coverage_frame())
    write_csv(args.out / "widths.csv", result.width_frame())
    report = result.report()
    report["config"] = cfg.to_dict()
    write_json(args.out / "report.json", report)
    return report


def cmd_bench(args) -> dict:
    cfg, data = _load(args)
    outcome = run_solve(data, cfg)
    problem = outcome.problem
    ksc = run_impute(outcome, data)
    Yc, Yt = problem.outcomes(data)
    n_c = problem.control.size
    bad = [k for k in cfg.bench.k if k > n_c]
    if bad:
        raise InvalidInputError(f"k={bad} exceeds the number of controls ({n_c})")
    imputations = {f"ksc_lambda={outcome.lam:g}": ksc.imputed}
    for k in cfg.bench.k:
        imputations[f"knn_k={k}"] = knn_impute(problem.X_control, problem.X_treated, Yc, k)
    if cfg.bench.regression:
        imputations["regression"] = regression_impute(problem.X_control, problem.X_treated, Yc, Yt)
    _, treated_ids = problem.ids(data)
    frame, aggregates = bench_table(treated_ids, Yt, problem.marginals.b, imputations)
    write_csv(args.out / "bench.csv", frame,
              footer_lines=[f"aggregate[{m}]={v!r}" for m, v in aggregates.items()])
    report = _solve_outputs(args.out, "bench", cfg, data, outcome)
    report["aggregates"] = aggregates
    write_json(args.out / "report.json", report)
    return report


def cmd_prepare_dw(args) -> dict:
    """Combine public NSW/PSID text files into one CSV with the standard covariates."""
    if not args.treated or not args.control:
        raise InvalidInputError("prepare-dw needs --treated and --control files")
    df = combine_dw(args.treated, args.control)
    path = write_csv(args.out / args.name, df)
    return {"written": str(path), "rows": int(len(df)), "columns": DW_COLUMNS.covariates}


COMMANDS = {
    "solve": cmd_solve,
    "impute": cmd_impute,
    "infer": cmd_infer,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "prepare-dw": cmd_prepare_dw,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthcoupling",
        description="Entropic synthetic coupling: solve, impute counterfactuals, build intervals.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", type=Path, help="CSV with id, treatment, outcome and covariate columns")
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="overrides the seed in the config")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve for the coupling; writes coupling.csv and report.json")
    sub.add_parser("impute", parents=[common], help="impute counterfactuals; writes imputations.csv")
    sub.add_parser("infer", parents=[common], help="confidence intervals; writes intervals.csv")
    sub.add_parser("simulate", parents=[common], help="coverage simulation; writes coverage.csv and widths.csv")
    sub.add_parser("bench", parents=[common], help="compare with k-NN and regression imputers; writes bench.csv")
    prep = sub.add_parser("prepare-dw", parents=[common], help="build a CSV from NSW/PSID text files")
    prep.add_argument("--treated", type=Path, help="treated-unit text file")
    prep.add_argument("--control", type=Path, help="control-unit text file")
    prep.add_argument("--name", default="data.csv", help="output file name inside --out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        parser.error("--seed must be nonnegative")
    try:
        result = COMMANDS[args.command](args)
    except (KSCError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        error = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        if args.log_level == "DEBUG":
            error["traceback"] = traceback.format_exc()
        print(json.dumps(error), file=sys.stderr)
        try:
            write_json(args.out / "error.json", error)
        except OSError:
            pass
        return EXIT_USAGE if isinstance(exc, (InvalidInputError, OSError)) else EXIT_FAILURE
    (args.out / "error.json").unlink(missing_ok=True)
    logger.info("%s finished", args.command)
    if args.command == "prepare-dw":
        print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
