"""Logistic propensity scores, inverse-probability marginal weights, and overlap trimming."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit, log_expit, logit

from .coupling import Marginals
from .errors import EmptySelectionError, InvalidInputError, PropensityOverflowError
from .kernels import as_covariates

# Scores closer than this to 0 or 1 are clamped before forming weights.
CLAMP = 1e-12


class SeparationWarning(RuntimeWarning):
    pass


class ClampWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LogisticModel:
    """Fitted ``P(Z = 1 | x) = expit(intercept + x @ coefficients)``."""

    coefficients: np.ndarray
    intercept: float
    converged: bool
    iterations: int
    gradient_norm: float = 0.0
    log_likelihood: float = float("nan")

    def linear_predictor(self, X) -> np.ndarray:
        X = _design(X, self.coefficients.size)
        return self.intercept + X @ self.coefficients

    def predict(self, X) -> np.ndarray:
        """Propensity scores for the rows of ``X``."""
        return expit(self.linear_predictor(X))


def _design(X, d=None):
    """Covariates as a 2-D array; zero-column input stays zero-column."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 0:
        pass
    elif d == 0 and X.ndim == 1:
        X = X.reshape(-1, 0)
    else:
        X = as_covariates(X)
    if d is not None and X.shape[1] != d:
        raise InvalidInputError(f"expected {d} covariates, got {X.shape[1]}")
    return X


def _log_likelihood(eta, Z):
    return float(np.sum(Z * log_expit(eta) + (1.0 - Z) * log_expit(-eta)))


def fit_logistic(X, Z, ridge: float = 0.0, max_iter: int = 100, tol: float = 1e-8) -> LogisticModel:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    Covariates are standardized internally and coefficients are mapped back
    to the original scale. Newton steps are halved until the (penalized)
    log-likelihood does not decrease. Convergence means the max-abs gradient
    of the mean log-likelihood on the standardized scale is at most ``tol``.

    Parameters
    ----------
    X : array, shape (n, d)
        Covariates; ``d = 0`` fits an intercept only.
    Z : array of {0, 1}, shape (n,)
    ridge : float
        Optional L2 penalty ``ridge/2 * ||coefficients||^2`` (intercept unpenalized).

    Raises
    ------
    InvalidInputError
        If ``Z`` is not binary, has a single class, or its length differs from ``X``.
    """
    Z = np.asarray(Z, dtype=float).ravel()
    if not np.all((Z == 0) | (Z == 1)):
        raise InvalidInputError("treatment indicator must be 0/1")
    X = np.asarray(X, dtype=float)
    X = X.reshape(Z.size, 0) if X.size == 0 else _design(X)
    if X.shape[0] != Z.size:
        raise InvalidInputError(f"{X.shape[0]} covariate rows but {Z.size} treatment labels")
    n, d = X.shape
    mean_z = Z.mean()
    if mean_z in (0.0, 1.0):
        raise InvalidInputError("both treated and control units are needed to fit a propensity model")
    if ridge < 0:
        raise InvalidInputError("ridge must be nonnegative")

    if d == 0:
        b0 = float(logit(mean_z))
        return LogisticModel(np.zeros(0), b0, True, 0, 0.0, _log_likelihood(np.full(n, b0), Z))

    center = X.mean(axis=0)
    scale = X.std(axis=0)
    constant = scale == 0
    scale[constant] = 1.0
    A = np.column_stack([np.ones(n), (X - center) / scale])
    # Constant columns carry no information beyond the intercept; pin them at 0.
    free = np.concatenate([[True], ~constant])
    penalty = np.concatenate([[0.0], ridge / scale**2])

    def objective(theta):
        return _log_likelihood(A @ theta, Z) - 0.5 * float(np.sum(penalty * theta**2))

    theta = np.zeros(d + 1)
    theta[0] = logit(mean_z)
    current = objective(theta)
    converged = False
    grad_norm = np.inf
    it = 0
    while it < max_iter:
        p = expit(A @ theta)
        grad = A.T @ (Z - p) - penalty * theta
        grad[~free] = 0.0
        grad_norm = float(np.abs(grad).max() / n)
        if grad_norm <= tol:
            converged = True
            break
        W = p * (1.0 - p)
        hess = (A[:, free] * W[:, None]).T @ A[:, free] + np.diag(penalty[free])
        try:
            direction = np.zeros_like(theta)
            direction[free] = np.linalg.solve(hess, grad[free])
        except np.linalg.LinAlgError:
            break
        step = 1.0
        while step > 1e-10:
            candidate = theta + step * direction
            value = objective(candidate)
            if value >= current - 1e-12 * abs(current):
                break
            step *= 0.5
        else:
            break
        theta, current = candidate, value
        it += 1

    coef = theta[1:] / scale
    coef[constant] = 0.0
    intercept = float(theta[0] - np.dot(coef, center))
    separated = ridge == 0 and separates(A[:, free], Z)
    if separated:
        # The gradient vanishes along the diverging direction, so IRLS can look converged.
        converged = False
    if not converged:
        p = expit(A @ theta)
        warnings.warn(
            f"logistic fit did not converge after {it} iterations (gradient {grad_norm:.2e}, "
            f"complete separation: {separated}); "
            f"fitted scores span [{p.min():.3g}, {p.max():.3g}], max |coef| {np.abs(coef).max():.3g}, "
            "which suggests (quasi-)separation",
            SeparationWarning,
            stacklevel=2,
        )
    return LogisticModel(coef, intercept, converged, it, grad_norm, _log_likelihood(A @ theta, Z))


def separates(A, Z) -> bool:
    """Whether some linear score ``A @ theta`` puts every treated unit strictly above every control.

    Solved as the LP feasibility problem ``(2Z - 1) * (A @ theta) >= 1``.
    """
    sign = 2.0 * np.asarray(Z, dtype=float) - 1.0
    res = linprog(
        np.zeros(A.shape[1]),
        A_ub=-(sign[:, None] * A),
        b_ub=-np.ones(A.shape[0]),
        bounds=[(None, None)] * A.shape[1],
        method="highs",
    )
    return res.status == 0


def _scores(p, kind):
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 0:
        raise InvalidInputError("no scores given")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise InvalidInputError("propensity scores must lie in [0, 1]")
    # Treated weights divide by p, control weights by 1 - p.
    bad = np.flatnonzero(p == 0.0) if kind == "treated" else np.flatnonzero(p == 1.0)
    if bad.size:
        raise PropensityOverflowError(
            f"propensity score is numerically {p[bad[0]]:g} at unit {bad[0]}; its weight is infinite",
            index=int(bad[0]),
        )
    outside = (p < CLAMP) | (p > 1.0 - CLAMP)
    if np.any(outside):
        warnings.warn(
            f"{int(outside.sum())} propensity scores clamped to [{CLAMP:g}, 1 - {CLAMP:g}] (overlap nearly violated)",
            ClampWarning,
            stacklevel=3,
        )
        p = np.clip(p, CLAMP, 1.0 - CLAMP)
    return p


def _normalize(x):
    return x / x.sum()


def odds_weights(scores) -> np.ndarray:
    """Control weights proportional to the odds ``p / (1 - p)``."""
    p = _scores(scores, "control")
    return _normalize(p / (1.0 - p))


def att_control_weights(model: LogisticModel, controls) -> np.ndarray:
    """Odds weights evaluated at the model's scores for ``controls``."""
    _require_converged(model)
    return odds_weights(model.predict(controls))


def ate_weights_from_scores(treated_scores, control_scores) -> Marginals:
    """``v`` proportional to ``1/p`` over treated, ``w`` proportional to ``1/(1-p)`` over controls."""
    pt = _scores(treated_scores, "treated")
    pc = _scores(control_scores, "control")
    return Marginals(a=_normalize(1.0 / (1.0 - pc)), b=_normalize(1.0 / pt))


def ate_weights(model: LogisticModel, treated, controls) -> Marginals:
    _require_converged(model)
    return ate_weights_from_scores(model.predict(treated), model.predict(controls))


def _require_converged(model):
    if not model.converged:
        warnings.warn("building weights from a non-converged propensity model", SeparationWarning, stacklevel=3)


def trim_by_overlap(scores, lo: float = 0.05, hi: float = 0.95) -> np.ndarray:
    """Indices (in order) of units with ``lo <= score <= hi``."""
    if not (0.0 < lo < hi < 1.0):
        raise InvalidInputError(f"need 0 < lo < hi < 1, got lo={lo}, hi={hi}")
    scores = np.asarray(scores, dtype=float).ravel()
    keep = np.flatnonzero((scores >= lo) & (scores <= hi))
    if keep.size == 0:
        raise EmptySelectionError(f"no unit has a propensity score in [{lo}, {hi}]")
    return keep
