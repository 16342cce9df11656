"""Solve, impute and infer pipelines shared by the CLI commands."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from ..coupling import Marginals
from ..errors import InvalidInputError
from ..imputation import ImputationResult, effects_and_aggregate, impute, transition_from_coupling
from ..inference import (
    IntervalSet,
    RidgeFit,
    bias_radius,
    confidence_intervals,
    krr_fit,
    select_rho_cv,
    suggest_lambda,
    variance_radius,
)
from ..kernels import GramTriple, gram_triple, standardize
from ..propensity import LogisticModel, ate_weights, att_control_weights, fit_logistic, trim_by_overlap
from ..solver import SolveReport, solve_ksc
from .config import RunConfig
from .data import Dataset

logger = logging.getLogger(__name__)

KIND_BY_MODE = {"uniform": "dim", "ipw_att": "ipw_att", "ipw_ate": "ipw_ate"}


@dataclass
class Problem:
    """Everything needed to solve: groups, marginals, Gram triple."""

    control: np.ndarray
    treated: np.ndarray
    marginals: Marginals
    gram: GramTriple
    kind: str
    X_control: np.ndarray
    X_treated: np.ndarray
    propensity: LogisticModel | None = None
    scores: np.ndarray | None = None
    trimmed_out: int = 0

    def ids(self, data: Dataset):
        return data.ids[self.control], data.ids[self.treated]

    def outcomes(self, data: Dataset):
        return data.outcome[self.control], data.outcome[self.treated]


def build_problem(data: Dataset, cfg: RunConfig) -> Problem:
    """Fit propensities if needed, trim controls, and assemble marginals and Gram matrices.

    Trimming drops controls whose score lies outside the configured band;
    the propensity model is not refit afterwards.
    """
    control = data.control
    treated = data.treated
    ws = cfg.weights
    model = scores = None
    dropped = 0
    if ws.needs_propensity:
        Xp = data.columns_of(ws.propensity_covariates)
        model = fit_logistic(Xp, data.treatment, ridge=ws.ridge)
        scores = model.predict(Xp)
        if ws.trim is not None:
            keep = trim_by_overlap(scores[control], *ws.trim)
            dropped = control.size - keep.size
            control = control[keep]
            logger.info("trimming kept %d of %d controls", keep.size, keep.size + dropped)
    n_c, n_t = control.size, treated.size
    if ws.mode == "uniform":
        marginals = Marginals.uniform(n_c, n_t)
    elif ws.mode == "ipw_att":
        Xp = data.columns_of(ws.propensity_covariates)
        marginals = Marginals(att_control_weights(model, Xp[control]), np.full(n_t, 1.0 / n_t))
    else:
        Xp = data.columns_of(ws.propensity_covariates)
        marginals = ate_weights(model, Xp[treated], Xp[control])
    X = data.columns_of(cfg.columns.covariates) if cfg.columns.covariates else data.covariates
    Xc, Xt = X[control], X[treated]
    if X.shape[1] == 0:
        raise InvalidInputError("no covariates selected")
    if cfg.standardize:
        Xc, Xt = standardize(Xc, Xt)
    gram = gram_triple(cfg.kernel, Xc, Xt)
    return Problem(control, treated, marginals, gram, KIND_BY_MODE[ws.mode], Xc, Xt, model, scores, dropped)


def ridge_fit(gram: GramTriple, Y_control, cfg: RunConfig) -> RidgeFit:
    inf = cfg.inference
    rho = inf.rho
    if rho == "cv":
        rho = select_rho_cv(gram.K_cc, Y_control, grid=inf.grid, folds=inf.folds, seed=cfg.seed)
    return krr_fit(gram.K_cc, Y_control, rho)


def resolve_lambda(problem: Problem, data: Dataset, cfg: RunConfig) -> tuple[float, RidgeFit | None]:
    """The configured lambda, or the noise-to-signal suggestion from a ridge fit when ``auto``."""
    if cfg.lam != "auto":
        return float(cfg.lam), None
    Yc, _ = problem.outcomes(data)
    fit = ridge_fit(problem.gram, Yc, cfg)
    lam = suggest_lambda(fit.sigma0_hat, fit.theta_hat, Yc.size, cfg.inference.alpha)
    logger.info("lambda=auto resolved to %.6g (theta_hat=%.4g, sigma0_hat=%.4g)", lam, fit.theta_hat, fit.sigma0_hat)
    return lam, fit


@dataclass
class SolveOutcome:
    problem: Problem
    report: SolveReport
    lam: float
    ridge: RidgeFit | None
    seconds: float


def run_solve(data: Dataset, cfg: RunConfig) -> SolveOutcome:
    start = time.perf_counter()
    problem = build_problem(data, cfg)
    lam, fit = resolve_lambda(problem, data, cfg)
    report = solve_ksc(problem.gram, problem.marginals, cfg.solve_config(lam))
    return SolveOutcome(problem, report, lam, fit, time.perf_counter() - start)


def run_impute(outcome: SolveOutcome, data: Dataset) -> ImputationResult:
    problem = outcome.problem
    Yc, Yt = problem.outcomes(data)
    P = transition_from_coupling(outcome.report.coupling)
    return effects_and_aggregate(impute(P, Yc), Yt, problem.marginals.b, problem.marginals.a, Yc, problem.kind)


@dataclass
class InferenceOutcome:
    intervals: IntervalSet
    ridge: RidgeFit
    sum_sq: np.ndarray


def run_infer(outcome: SolveOutcome, data: Dataset, cfg: RunConfig) -> InferenceOutcome:
    problem = outcome.problem
    Yc, _ = problem.outcomes(data)
    P = transition_from_coupling(outcome.report.coupling)
    fit = outcome.ridge if outcome.ridge is not None else ridge_fit(problem.gram, Yc, cfg)
    center = impute(P, Yc)
    intervals = confidence_intervals(
        center,
        bias_radius(problem.gram, P),
        variance_radius(P, fit.sigma0_hat),
        fit.theta_hat,
        cfg.inference.alpha,
    )
    return InferenceOutcome(intervals, fit, P.sum_of_squares())


def report_dict(command: str, cfg: RunConfig, data: Dataset, outcome: SolveOutcome) -> dict:
    """Reproducible report body; run time lives under ``timing`` only."""
    problem = outcome.problem
    summary = outcome.report.summary()
    summary.pop("objective_trace")
    summary.pop("step_trace")
    out = {
        "schema_version": 1,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "data": {
            "n_units": int(data.ids.size),
            "n_treated": int(problem.treated.size),
            "n_control": int(problem.control.size),
            "controls_trimmed": int(problem.trimmed_out),
            "covariates": list(data.covariate_names),
        },
        "lambda": outcome.lam,
        "solver": summary,
        "objective_trace": [float(x) for x in outcome.report.objective_trace],
        "step_trace": [float(x) for x in outcome.report.step_trace],
    }
    if problem.propensity is not None:
        m = problem.propensity
        out["propensity"] = {
            "intercept": m.intercept,
            "coefficients": m.coefficients.tolist(),
            "converged": m.converged,
            "iterations": m.iterations,
        }
    out["timing"] = {"total_seconds": outcome.seconds, "solver_seconds": outcome.report.wall_time}
    return out
