"""Bias-aware confidence intervals for imputed counterfactuals.

A treated unit's imputation ``sum_i P_ij Y_i`` misses ``f0(x_j)`` by a bias
``sum_i P_ij f0(x_i) - f0(x_j)`` plus Gaussian noise with standard deviation
``sigma0 * ||P_j||_2``. The bias is bounded by ``||f0|| * r_j``, where ``r_j``
is the RKHS distance between the treated feature and its synthetic
counterpart. Kernel ridge regression on the controls supplies plug-ins for
``||f0||`` and ``sigma0``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.special import ndtri, xlogy

from .coupling import Coupling
from .errors import DegenerateError, InvalidInputError, SolverError
from .imputation import TransitionMatrix, transition_from_coupling
from .kernels import GramTriple

logger = logging.getLogger(__name__)

# Negative squared bias radii below this magnitude are treated as round-off.
ROUNDOFF_WARN = 1e-8


class RoundoffWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class RidgeFit:
    """Kernel ridge fit ``f_hat = sum_i beta_i k(x_i, .)`` on the controls."""

    beta: np.ndarray
    theta_hat: float
    sigma0_hat: float
    rho: float
    fitted: np.ndarray


def _check_symmetric(K):
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidInputError(f"kernel matrix must be square, got {K.shape}")
    scale = max(1.0, float(np.abs(K).max(initial=0.0)))
    if not np.allclose(K, K.T, rtol=0, atol=1e-12 * scale):
        raise InvalidInputError("kernel matrix must be symmetric")
    return K


def _ridge_summary(K, Y, beta, rho):
    fitted = K @ beta
    norm_sq = float(beta @ fitted)
    resid = Y - fitted
    return RidgeFit(
        beta=beta,
        theta_hat=float(np.sqrt(max(norm_sq, 0.0))),
        sigma0_hat=float(np.sqrt(resid @ resid / Y.size)),
        rho=float(rho),
        fitted=fitted,
    )


def krr_fit(K_cc, Y_control, rho: float) -> RidgeFit:
    """Solve ``(K + rho I) beta = Y`` by Cholesky and form the norm and noise plug-ins.

    ``theta_hat = sqrt(beta' K beta)`` and ``sigma0_hat^2 = ||Y - K beta||^2 / N_c``.

    Raises
    ------
    InvalidInputError
        For a non-symmetric ``K`` or ``rho <= 0``.
    SolverError
        If ``K + rho I`` is numerically not positive definite.
    """
    K = _check_symmetric(K_cc)
    Y = np.asarray(Y_control, dtype=float).ravel()
    if Y.size != K.shape[0]:
        raise InvalidInputError(f"{Y.size} outcomes for a {K.shape[0]}x{K.shape[0]} kernel matrix")
    if not (np.isfinite(rho) and rho > 0):
        raise InvalidInputError(f"ridge parameter must be positive, got {rho}")
    A = K + rho * np.eye(K.shape[0])
    try:
        factor = cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"K + rho I is not positive definite at rho={rho:g}: {exc}") from exc
    beta = cho_solve(factor, Y)
    return _ridge_summary(K, Y, beta, rho)


def default_rho_grid(n_control: int) -> np.ndarray:
    return np.logspace(-4, 2, 10) * n_control


class RidgeCrossValidator:
    """K-fold cross-validation of the ridge parameter with cached eigendecompositions.

    Each training block is diagonalized once, after which held-out errors for
    a whole grid, and for many outcome vectors at once, cost only matrix
    products. Fold membership comes from a seeded permutation.
    """

    def __init__(self, K_cc, grid=None, folds: int = 5, seed: int = 0):
        K = _check_symmetric(K_cc)
        n = K.shape[0]
        if folds < 2:
            raise InvalidInputError("need at least 2 folds")
        if n < folds:
            raise InvalidInputError(f"{n} controls cannot be split into {folds} folds")
        grid = default_rho_grid(n) if grid is None else np.atleast_1d(np.asarray(grid, dtype=float))
        if grid.size == 0 or np.any(~(grid > 0)):
            raise InvalidInputError("rho grid must be a nonempty set of positive values")
        self.K = K
        self.grid = grid
        self.folds = folds
        self.seed = seed
        order = np.random.default_rng(seed).permutation(n)
        self._splits = []
        for test in np.array_split(order, folds):
            train = np.setdiff1d(order, test)
            evals, evecs = eigh(K[np.ix_(train, train)])
            cross = K[np.ix_(test, train)] @ evecs
            self._splits.append((train, test, evals, evecs, cross))
        self._full = None

    def errors(self, Y) -> np.ndarray:
        """Mean held-out squared error per grid value; shape ``(len(grid),)`` or ``(len(grid), R)``."""
        Y = np.asarray(Y, dtype=float)
        single = Y.ndim == 1
        Y2 = Y[:, None] if single else Y
        if Y2.shape[0] != self.K.shape[0]:
            raise InvalidInputError(f"{Y2.shape[0]} outcomes for {self.K.shape[0]} controls")
        total = np.zeros((self.grid.size, Y2.shape[1]))
        for train, test, evals, evecs, cross in self._splits:
            coords = evecs.T @ Y2[train]
            for g, rho in enumerate(self.grid):
                pred = cross @ (coords / (evals + rho)[:, None])
                total[g] += np.sum((Y2[test] - pred) ** 2, axis=0)
        total /= self.K.shape[0]
        return total[:, 0] if single else total

    def select(self, Y):
        """Grid value(s) with the smallest held-out error, ties to the largest ``rho``."""
        err = self.errors(Y)
        single = err.ndim == 1
        err2 = err[:, None] if single else err
        best = err2.min(axis=0)
        tied = err2 <= best + 1e-12 * np.abs(best)
        # Largest rho among the tied entries of each column.
        masked = np.where(tied, self.grid[:, None], -np.inf)
        chosen = masked.max(axis=0)
        return float(chosen[0]) if single else chosen

    def plugins(self, Y, rho) -> tuple[np.ndarray, np.ndarray]:
        """``(theta_hat, sigma0_hat)`` arrays for the columns of ``Y`` with per-column ``rho``."""
        if self._full is None:
            self._full = eigh(self.K)
        evals, evecs = self._full
        Y = np.asarray(Y, dtype=float)
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (Y.shape[1],))
        beta = evecs @ ((evecs.T @ Y) / (evals[:, None] + rho[None, :]))
        fitted = self.K @ beta
        theta = np.sqrt(np.maximum(np.sum(beta * fitted, axis=0), 0.0))
        sigma = np.sqrt(np.mean((Y - fitted) ** 2, axis=0))
        return theta, sigma

    def fit(self, Y, rho) -> RidgeFit | list:
        """Ridge fits on all controls via one eigendecomposition of ``K``.

        ``Y`` may be ``(N_c, R)`` with ``rho`` of length ``R``; a list of fits is returned then.
        """
        if self._full is None:
            self._full = eigh(self.K)
        evals, evecs = self._full
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            beta = evecs @ ((evecs.T @ Y) / (evals + rho))
            return _ridge_summary(self.K, Y, beta, rho)
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (Y.shape[1],))
        beta = evecs @ ((evecs.T @ Y) / (evals[:, None] + rho[None, :]))
        return [_ridge_summary(self.K, Y[:, r], beta[:, r], rho[r]) for r in range(Y.shape[1])]


def select_rho_cv(K_cc, Y_control, grid=None, folds: int = 5, seed: int = 0) -> float:
    """Ridge parameter minimizing ``folds``-fold held-out squared error.

    The default grid is 10 log-spaced values from ``1e-4 N_c`` to ``1e2 N_c``.
    Ties go to the largest ``rho``.
    """
    return RidgeCrossValidator(K_cc, grid=grid, folds=folds, seed=seed).select(Y_control)


def _transition(P):
    return P if isinstance(P, TransitionMatrix) else TransitionMatrix(P)


def bias_radius(gram: GramTriple, P) -> np.ndarray:
    """RKHS distance ``||phi(x_j) - sum_i P_ij phi(x_i)||`` for each treated unit.

    The squared distance is the diagonal of ``K_tt + P' K_cc P - 2 K_ct' P``;
    negative round-off is clamped at 0 (with a warning beyond ``1e-8``).
    """
    P = _transition(P).matrix
    if P.shape != gram.K_ct.shape:
        raise InvalidInputError(f"transition shape {P.shape} does not match Gram {gram.K_ct.shape}")
    sq = (
        np.diag(gram.K_tt)
        + np.einsum("ij,ij->j", P, gram.K_cc @ P)
        - 2.0 * np.einsum("ij,ij->j", gram.K_ct, P)
    )
    if np.any(sq < -ROUNDOFF_WARN):
        warnings.warn(
            f"squared bias radius as low as {sq.min():.3g}; the kernel matrix may not be positive semidefinite",
            RoundoffWarning,
            stacklevel=2,
        )
    return np.sqrt(np.maximum(sq, 0.0))


def variance_radius(P, sigma0: float) -> np.ndarray:
    """``sigma0 * sqrt(sum_i P_ij^2)`` for each treated unit."""
    if sigma0 < 0:
        raise InvalidInputError("noise level must be nonnegative")
    return sigma0 * np.sqrt(_transition(P).sum_of_squares())


def normal_quantile(q: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < q < 1.0:
        raise InvalidInputError(f"quantile level must lie in (0, 1), got {q}")
    return float(ndtri(q))


def two_sided_z(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    return normal_quantile(1.0 - alpha / 2.0)


def containment_slack(center, shift=None) -> np.ndarray:
    """Rounding allowance for ``|value - (center - shift)|`` comparisons."""
    scale = np.abs(center) if shift is None else np.abs(center) + np.abs(shift)
    return 8.0 * np.finfo(float).eps * (1.0 + scale)


@dataclass(frozen=True)
class IntervalSet:
    """Per-treated-unit intervals ``center - shift -/+ (theta * bias_radius + z * variance_radius)``.

    ``shift`` is zero for feasible intervals and the true bias for oracle ones.
    """

    center: np.ndarray
    bias_radius: np.ndarray
    variance_radius: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    z: float
    theta: float = 0.0
    shift: np.ndarray | None = None

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, values) -> np.ndarray:
        """Membership with a few ulps of slack, so zero-width intervals contain their exact point."""
        values = np.asarray(values, dtype=float)
        return np.abs(values - self.midpoint) <= self.half_width + containment_slack(self.center, self.shift)

    @property
    def midpoint(self) -> np.ndarray:
        return self.center if self.shift is None else self.center - self.shift

    @property
    def half_width(self) -> np.ndarray:
        return self.theta * self.bias_radius + self.z * self.variance_radius

    def __len__(self):
        return self.center.size


def confidence_intervals(center, bias, variance, theta_hat: float, alpha: float = 0.05) -> IntervalSet:
    """Feasible intervals ``center -/+ (theta_hat * bias + z * variance)``.

    ``bias`` is the bias radius and ``variance`` the noise radius
    ``sigma * sqrt(sum_i P_ij^2)`` of each unit.
    """
    center = np.asarray(center, dtype=float)
    bias = np.asarray(bias, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if not center.shape == bias.shape == variance.shape:
        raise InvalidInputError("center, bias and variance must have the same length")
    if theta_hat < 0:
        raise InvalidInputError("theta_hat must be nonnegative")
    z = two_sided_z(alpha)
    half = theta_hat * bias + z * variance
    return IntervalSet(center, bias, variance, center - half, center + half, alpha, z, float(theta_hat))


@dataclass(frozen=True)
class OracleContext:
    """Ground truth available in simulations: ``f0`` on both groups, its norm, and the noise level."""

    f0_control: np.ndarray
    f0_treated: np.ndarray
    f0_norm: float
    sigma0: float

    def __post_init__(self):
        object.__setattr__(self, "f0_control", np.asarray(self.f0_control, dtype=float))
        object.__setattr__(self, "f0_treated", np.asarray(self.f0_treated, dtype=float))
        if self.sigma0 < 0 or self.f0_norm < 0:
            raise InvalidInputError("norm and noise level must be nonnegative")


def true_bias(P, ctx: OracleContext) -> np.ndarray:
    """``sum_i P_ij f0(x_i) - f0(x_j)``."""
    P = _transition(P).matrix
    return ctx.f0_control @ P - ctx.f0_treated


def oracle_intervals(center, P, ctx: OracleContext | None, alpha: float = 0.05) -> IntervalSet:
    """Intervals with the true bias removed and the true noise level: exact ``1 - alpha`` coverage."""
    if ctx is None:
        raise InvalidInputError("oracle intervals need the simulation ground truth")
    P = _transition(P)
    center = np.asarray(center, dtype=float)
    shift = true_bias(P, ctx)
    if shift.shape != center.shape:
        raise InvalidInputError("center length does not match the transition matrix")
    z = two_sided_z(alpha)
    var = variance_radius(P, ctx.sigma0)
    mid = center - shift
    return IntervalSet(center, np.zeros_like(center), var, mid - z * var, mid + z * var, alpha, z, 0.0, shift)


def suggest_lambda(sigma0_hat: float, theta_hat: float, n_control: int, alpha: float = 0.05) -> float:
    """Regularization balancing bias and noise: ``z^2 sigma0^2 / (N_c theta^2)``."""
    if theta_hat <= 0:
        raise DegenerateError("theta_hat is 0: the noise-to-signal ratio is undefined")
    if sigma0_hat < 0 or n_control < 1:
        raise InvalidInputError("need sigma0_hat >= 0 and at least one control")
    z = two_sided_z(alpha)
    return z**2 * sigma0_hat**2 / (n_control * theta_hat**2)


@dataclass(frozen=True)
class LengthBounds:
    len_sq: np.ndarray
    lower_bound: np.ndarray
    upper_bound: np.ndarray
    delocalized: np.ndarray

    def holds(self, tol: float = 1e-9) -> np.ndarray:
        """Per-unit sandwich check; the upper side is only promised on delocalized columns."""
        low_ok = self.lower_bound <= self.len_sq + tol
        up_ok = self.len_sq <= self.upper_bound + tol
        return low_ok & (up_ok | ~self.delocalized)


def interval_length_bounds(pi: Coupling, gram: GramTriple, f0_norm: float, sigma0: float,
                           alpha: float = 0.05, M: float = 6.0) -> LengthBounds:
    """Squared oracle-plus-bias interval length and its entropy-based sandwich.

    With ``p = pi_j / v_j``, ``Len_j = 2 ||f0|| r_j + 2 z sigma0 ||p||_2``.
    Writing ``E_j = sum_i pi_ij log(pi_ij / e)`` and ``n = N_c``,

    ``Len_j^2 <= 8 (||f0||^2 r_j^2 + M z^2 sigma0^2 / (v_j n) [E_j + v_j (1/M + 1 + log(n / v_j))])``

    on columns with ``max p <= (M/2 - 1)/n`` (flagged ``delocalized``), and

    ``Len_j^2 >= 4 (||f0||^2 r_j^2 + z^2 sigma0^2 / (v_j n) [E_j + v_j (2 + log(n / v_j))])``

    on every column. Uniform ``v`` gives ``1/v_j = N_t``.
    """
    if not M > 4:
        raise InvalidInputError(f"M must exceed 4, got {M}")
    v = pi.marginals.b
    P = transition_from_coupling(pi)
    r = bias_radius(gram, P)
    z = two_sided_z(alpha)
    n = pi.matrix.shape[0]
    sum_sq = P.sum_of_squares()
    length = 2.0 * f0_norm * r + 2.0 * z * sigma0 * np.sqrt(sum_sq)
    ent = np.sum(xlogy(pi.matrix, pi.matrix), axis=0) - pi.matrix.sum(axis=0)
    bias_sq = f0_norm**2 * r**2
    noise = z**2 * sigma0**2 / (v * n)
    upper = 8.0 * (bias_sq + M * noise * (ent + v * (1.0 / M + 1.0 + np.log(n / v))))
    lower = 4.0 * (bias_sq + noise * (ent + v * (2.0 + np.log(n / v))))
    delocalized = P.matrix.max(axis=0) <= (M / 2.0 - 1.0) / n
    return LengthBounds(length**2, lower, upper, delocalized)
