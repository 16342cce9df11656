"""Outer solvers for ``min_{pi in Pi(a, b)} g(pi) + lam h(pi)`` with quadratic ``g``.

Both algorithms call the entropic OT map once per outer iteration:

* ``fixed_point``: ``pi <- OT_lam(grad g(pi))``. A contraction in L1 with
  factor ``max|H| / lam`` whenever ``lam > max|H|``.
* ``steepest_descent_kl``: mirror descent with the entropy as mirror map,
  ``pi <- OT_{1/tau}(grad g(pi) + (lam - 1/tau) log pi)``. Objective values
  decrease monotonically for ``1/tau >= max|H| + lam``; any ``lam >= 0``.

``solve_ksc`` builds the quadratic from a Gram triple and picks between them.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .coupling import Coupling, Marginals, QuadraticSpec, entropy, independence_coupling
from .errors import InvalidInputError
from .kernels import GramTriple
from .sinkhorn import MAX_ITER_SINK, OVERFLOW_GUARD, SinkhornWarning, column_softmax_ot, entropic_ot, sinkhorn_log

logger = logging.getLogger(__name__)

ALGORITHMS = ("auto", "fixed_point", "steepest_descent_kl")

# Consecutive step-size increases after which a non-contractive fixed-point run is abandoned.
DIVERGENCE_PATIENCE = 50


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SolveConfig:
    """Outer-loop settings.

    ``tol_inner`` defaults to ``tol_outer / 100``. ``step_size`` is ``tau``
    for ``steepest_descent_kl`` and defaults to ``1 / (max|H| + lam)``.
    ``drop_row_constraint`` removes the control-marginal constraint, which
    decouples the problem into one entropic synthetic control per column.
    ``warm_inner`` starts each inner scaling from the previous one.
    ``enforce_step_bound=False`` turns the rejection of steps larger than
    ``1 / (max|H| + lam)`` into a warning; monotone descent is then not
    guaranteed.
    """

    algorithm: str = "auto"
    lam: float = 0.01
    tol_outer: float = 1e-7
    max_outer: int = 10_000
    step_size: float | None = None
    tol_inner: float | None = None
    max_inner: int = MAX_ITER_SINK
    overflow_guard: float = OVERFLOW_GUARD
    polish: bool = True
    keep_iterates: bool = False
    drop_row_constraint: bool = False
    enforce_step_bound: bool = True
    warm_inner: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidInputError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidInputError(f"lambda must be a nonnegative number, got {self.lam}")
        if not self.tol_outer > 0:
            raise InvalidInputError("tol_outer must be positive")
        if self.algorithm == "fixed_point" and self.lam <= 0:
            raise InvalidInputError("fixed_point needs lambda > 0")
        if self.step_size is not None and not self.step_size > 0:
            raise InvalidInputError("step_size must be positive")

    @property
    def inner_tol(self) -> float:
        return self.tol_inner if self.tol_inner is not None else self.tol_outer / 100.0

    @classmethod
    def from_dict(cls, d: dict) -> "SolveConfig":
        names = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - names
        if unknown:
            raise InvalidInputError(f"unknown solver settings {sorted(unknown)}")
        return cls(**d)


@dataclass
class SolveReport:
    coupling: Coupling
    objective: float
    objective_trace: np.ndarray
    step_trace: np.ndarray
    outer_iterations: int
    fixed_point_residual: float
    converged: bool
    h_inf_norm: float
    algorithm: str
    lam: float
    step_size: float | None = None
    contraction_guaranteed: bool = False
    monotone: bool = True
    inner_iterations: int = 0
    polish_residual: float | None = None
    wall_time: float = 0.0
    iterates: list = field(default_factory=list, repr=False)

    @property
    def matrix(self) -> np.ndarray:
        return self.coupling.matrix

    def summary(self) -> dict:
        row, col = self.coupling.marginal_errors()
        return {
            "algorithm": self.algorithm,
            "lambda": self.lam,
            "step_size": self.step_size,
            "h_inf_norm": self.h_inf_norm,
            "contraction_guaranteed": self.contraction_guaranteed,
            "converged": self.converged,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "objective": self.objective,
            "fixed_point_residual": self.fixed_point_residual,
            "row_residual": row,
            "col_residual": col,
            "monotone": self.monotone,
            "objective_trace": [float(x) for x in self.objective_trace],
            "step_trace": [float(x) for x in self.step_trace],
        }


def h_inf_norm(spec: QuadraticSpec) -> float:
    """Entrywise max ``|H_ij|`` times the largest column scale."""
    if spec.H.size == 0:
        return 0.0
    scale = 1.0 if spec.col_scale is None else float(spec.col_scale.max())
    return float(np.abs(spec.H).max()) * scale


def _objective(spec, lam, pi, grad=None, log_pi=None):
    if grad is None:
        value = spec.value(pi)
    else:
        # g(pi) = 1/2 <pi, grad + C> + constant, reusing the gradient already computed.
        value = float(0.5 * np.sum(pi * (grad + spec.C)) + spec.constant)
    if lam > 0:
        if log_pi is None:
            value += lam * entropy(pi)
        else:
            value += lam * float(np.sum(pi * (log_pi - 1.0)))
    return value


def _ot(C, reg, marginals, cfg, drop_rows, init_log_col=None):
    if drop_rows:
        return column_softmax_ot(C, reg, marginals.b)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SinkhornWarning)
        return entropic_ot(C, reg, marginals, tol=cfg.inner_tol, max_iter=cfg.max_inner,
                           overflow_guard=cfg.overflow_guard, init_log_col=init_log_col)


def fixed_point_map(spec: QuadraticSpec, marginals: Marginals, lam: float, pi, cfg: SolveConfig | None = None):
    """One application of ``pi -> OT_lam(grad g(pi))``."""
    cfg = cfg or SolveConfig(lam=lam)
    return _ot(spec.gradient(pi), lam, marginals, cfg, cfg.drop_row_constraint).matrix


def _initial(marginals, init, drop_rows):
    if init is not None:
        pi = np.array(init, dtype=float)
        if pi.shape != marginals.shape or np.any(pi <= 0):
            raise InvalidInputError("initial coupling must be strictly positive with the marginals' shape")
        return pi
    if drop_rows:
        return np.full(marginals.shape, 1.0 / marginals.shape[0]) * marginals.b[None, :]
    return independence_coupling(marginals)


def _fixed_point_residual(spec, marginals, lam, pi, cfg):
    if lam <= 0:
        return float("nan")
    return float(np.abs(pi - fixed_point_map(spec, marginals, lam, pi, cfg)).sum())


def fixed_point(spec: QuadraticSpec, marginals: Marginals, cfg: SolveConfig, init=None) -> SolveReport:
    """Iterate ``pi <- OT_lam(grad g(pi))`` from the independence coupling.

    Stops when successive iterates are within ``tol_outer`` in L1. Convergence
    is guaranteed only for ``lam > max|H|``; otherwise a warning is issued and
    the run is abandoned after ``DIVERGENCE_PATIENCE`` consecutive step-size
    increases.
    """
    lam = cfg.lam
    if not lam > 0:
        raise InvalidInputError("fixed_point needs lambda > 0")
    if spec.shape != marginals.shape:
        raise InvalidInputError(f"quadratic shape {spec.shape} does not match marginals {marginals.shape}")
    start = time.perf_counter()
    norm = h_inf_norm(spec)
    guaranteed = lam > norm
    if not guaranteed:
        warnings.warn(
            f"lambda={lam:g} <= max|H|={norm:g}: fixed-point iteration is not guaranteed to converge",
            ConvergenceWarning,
            stacklevel=2,
        )
    drop_rows = cfg.drop_row_constraint
    pi = _initial(marginals, init, drop_rows)
    objectives = []
    steps = []
    iterates = [pi] if cfg.keep_iterates else []
    inner = 0
    rising = 0
    converged = False
    k = 0
    log_pi = None
    col = None
    while k < cfg.max_outer:
        grad = spec.gradient(pi)
        objectives.append(_objective(spec, lam, pi, grad, log_pi))
        # Successive inner problems differ little, so the last column scaling is a good start.
        res = _ot(grad, lam, marginals, cfg, drop_rows, col)
        col = res.log_col_scaling if cfg.warm_inner else None
        inner += res.iterations
        step = float(np.abs(res.matrix - pi).sum())
        pi = res.matrix
        log_pi = res.log()
        k += 1
        if cfg.keep_iterates:
            iterates.append(pi)
        rising = rising + 1 if steps and step > steps[-1] else 0
        steps.append(step)
        if step <= cfg.tol_outer:
            converged = True
            break
        if not guaranteed and rising >= DIVERGENCE_PATIENCE:
            logger.warning("fixed-point steps grew for %d consecutive iterations; stopping", rising)
            break
    objectives.append(_objective(spec, lam, pi))
    return SolveReport(
        coupling=Coupling(pi, marginals) if not drop_rows else _free_row_coupling(pi, marginals),
        objective=objectives[-1],
        objective_trace=np.asarray(objectives),
        step_trace=np.asarray(steps),
        outer_iterations=k,
        fixed_point_residual=_fixed_point_residual(spec, marginals, lam, pi, cfg),
        converged=converged,
        h_inf_norm=norm,
        algorithm="fixed_point",
        lam=lam,
        step_size=1.0 / lam,
        contraction_guaranteed=guaranteed,
        monotone=bool(np.all(np.diff(objectives) <= 1e-12)),
        inner_iterations=inner,
        wall_time=time.perf_counter() - start,
        iterates=iterates,
    )


def _free_row_coupling(pi, marginals):
    # Row sums are whatever the solution makes them once the row constraint is dropped.
    return Coupling(pi, Marginals(pi.sum(axis=1) / pi.sum(), marginals.b))


def steepest_descent_kl(spec: QuadraticSpec, marginals: Marginals, cfg: SolveConfig, init=None) -> SolveReport:
    """KL steepest descent over the transportation polytope with constant step ``tau``.

    Each step solves ``OT_{1/tau}(grad g(pi) + (lam - 1/tau) log pi)``,
    carrying ``log pi`` from the log-domain scalings so that tiny entries stay
    representable. The run stops when the L1 step is at most
    ``tol_outer * min(1, lam * tau)``: the step is a ``lam * tau`` fraction of
    the way to the fixed-point map's output, so this keeps the fixed-point
    residual at the ``tol_outer`` scale. ``tau = 1/lam`` reproduces
    ``fixed_point`` iterate for iterate.
    """
    lam = cfg.lam
    if lam < 0:
        raise InvalidInputError("lambda must be nonnegative")
    if spec.shape != marginals.shape:
        raise InvalidInputError(f"quadratic shape {spec.shape} does not match marginals {marginals.shape}")
    start = time.perf_counter()
    norm = h_inf_norm(spec)
    bound = norm + lam
    if cfg.step_size is None:
        if bound <= 0:
            raise InvalidInputError("max|H| + lambda is 0; pass an explicit step_size")
        tau = 1.0 / bound
    else:
        tau = cfg.step_size
        if 1.0 / tau < bound * (1.0 - 1e-12):
            message = f"1/step_size = {1.0 / tau:g} is below max|H| + lambda = {bound:g}; monotone descent is not guaranteed"
            if cfg.enforce_step_bound:
                raise InvalidInputError(message)
            warnings.warn(message, ConvergenceWarning, stacklevel=2)
    eta = 1.0 / tau
    stop = cfg.tol_outer * (min(1.0, lam * tau) if lam > 0 else 1.0)
    drop_rows = cfg.drop_row_constraint
    pi = _initial(marginals, init, drop_rows)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    col = None
    objectives = []
    steps = []
    iterates = [pi] if cfg.keep_iterates else []
    inner = 0
    converged = False
    k = 0
    while k < cfg.max_outer:
        grad = spec.gradient(pi)
        objectives.append(_objective(spec, lam, pi, grad, log_pi))
        C = grad if lam == eta else grad + (lam - eta) * log_pi
        res = _ot(C, eta, marginals, cfg, drop_rows, col)
        col = res.log_col_scaling if cfg.warm_inner else None
        inner += res.iterations
        step = float(np.abs(res.matrix - pi).sum())
        pi = res.matrix
        log_pi = res.log()
        k += 1
        if cfg.keep_iterates:
            iterates.append(pi)
        steps.append(step)
        if step <= stop:
            converged = True
            break
    objectives.append(_objective(spec, lam, pi))
    objectives = np.asarray(objectives)
    return SolveReport(
        coupling=Coupling(pi, marginals) if not drop_rows else _free_row_coupling(pi, marginals),
        objective=float(objectives[-1]),
        objective_trace=objectives,
        step_trace=np.asarray(steps),
        outer_iterations=k,
        fixed_point_residual=_fixed_point_residual(spec, marginals, lam, pi, cfg),
        converged=converged,
        h_inf_norm=norm,
        algorithm="steepest_descent_kl",
        lam=lam,
        step_size=tau,
        contraction_guaranteed=lam > norm,
        monotone=bool(np.all(np.diff(objectives) <= 1e-12)),
        inner_iterations=inner,
        wall_time=time.perf_counter() - start,
        iterates=iterates,
    )


def polish_marginals(pi, marginals: Marginals, tol: float = 1e-15, max_iter: int = 1000):
    """Rescale a nearly feasible coupling so both marginals hold to rounding level.

    Returns the rescaled matrix and its L1 row residual. The change is of the
    order of the incoming infeasibility.
    """
    pi = np.asarray(pi, dtype=float)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    if not np.all(np.isfinite(log_pi)):
        return pi, float(np.abs(pi.sum(axis=1) - marginals.a).sum())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SinkhornWarning)
        res = sinkhorn_log(log_pi, marginals.a, marginals.b, tol=tol, max_iter=max_iter)
    return res.matrix, res.residual


def solve(spec: QuadraticSpec, marginals: Marginals, cfg: SolveConfig, init=None) -> SolveReport:
    """Dispatch on ``cfg.algorithm``; ``auto`` uses the fixed point iff ``lam > max|H|``."""
    algorithm = cfg.algorithm
    if algorithm == "auto":
        algorithm = "fixed_point" if cfg.lam > h_inf_norm(spec) else "steepest_descent_kl"
    if algorithm == "fixed_point":
        report = fixed_point(spec, marginals, cfg, init=init)
    else:
        report = steepest_descent_kl(spec, marginals, cfg, init=init)
    if cfg.polish and not cfg.drop_row_constraint:
        pi, resid = polish_marginals(report.matrix, marginals)
        report.coupling = Coupling(pi, marginals)
        report.polish_residual = resid
        report.objective = _objective(spec, cfg.lam, pi)
    if not report.converged:
        warnings.warn(
            f"{report.algorithm} did not converge in {report.outer_iterations} iterations "
            f"(last step {report.step_trace[-1] if report.step_trace.size else float('nan'):.3e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return report


def solve_ksc(gram: GramTriple, marginals: Marginals, cfg: SolveConfig, init=None) -> SolveReport:
    """Solve the KSC program for a Gram triple and marginals ``(w, v)``."""
    spec = QuadraticSpec.from_gram(gram, marginals)
    return solve(spec, marginals, cfg, init=init)


def with_lambda(cfg: SolveConfig, lam: float) -> SolveConfig:
    return replace(cfg, lam=lam)
