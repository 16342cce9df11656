"""Couplings, marginals, entropy, and the KSC objective.

Conventions: rows index control units (marginal ``a`` = control weights ``w``),
columns index treated units (marginal ``b`` = treated weights ``v``). The
entropy is ``h(pi) = sum pi * (log pi - 1)`` with ``0 log 0 = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from .errors import DegenerateError, DivergenceUndefinedError, InvalidInputError
from .kernels import GramTriple

TOL_FEAS = 1e-8
_SUM_TOL = 1e-12


def _probability_vector(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise InvalidInputError(f"{name} must be strictly positive")
    if abs(p.sum() - 1.0) > _SUM_TOL:
        raise InvalidInputError(f"{name} must sum to 1, sums to {p.sum()!r}")
    return p


@dataclass(frozen=True)
class Marginals:
    """Row marginal ``a`` (controls) and column marginal ``b`` (treated)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _probability_vector(self.a, "a"))
        object.__setattr__(self, "b", _probability_vector(self.b, "b"))

    @classmethod
    def uniform(cls, n: int, m: int) -> "Marginals":
        return cls(np.full(n, 1.0 / n), np.full(m, 1.0 / m))

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.size, self.b.size

    def swapped(self) -> "Marginals":
        return Marginals(self.b, self.a)


@dataclass(frozen=True)
class Coupling:
    """A nonnegative matrix together with the marginals it is meant to satisfy."""

    matrix: np.ndarray
    marginals: Marginals

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.shape != self.marginals.shape:
            raise InvalidInputError(f"coupling shape {matrix.shape} does not match marginals {self.marginals.shape}")
        object.__setattr__(self, "matrix", matrix)

    def marginal_errors(self) -> tuple[float, float]:
        """L1 distance of (row sums, column sums) to (a, b)."""
        return marginal_errors(self.matrix, self.marginals)

    def is_feasible(self, tol: float = TOL_FEAS) -> bool:
        row, col = self.marginal_errors()
        return bool(np.all(self.matrix >= 0) and row <= tol and col <= tol)


def marginal_errors(pi, marginals: Marginals) -> tuple[float, float]:
    pi = np.asarray(pi, dtype=float)
    return (
        float(np.abs(pi.sum(axis=1) - marginals.a).sum()),
        float(np.abs(pi.sum(axis=0) - marginals.b).sum()),
    )


def check_feasible(pi, marginals: Marginals, tol: float = TOL_FEAS) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != marginals.shape:
        raise InvalidInputError(f"coupling shape {pi.shape} does not match marginals {marginals.shape}")
    if np.any(pi < 0):
        raise InvalidInputError("coupling has negative entries")
    row, col = marginal_errors(pi, marginals)
    if row > tol or col > tol:
        raise InvalidInputError(f"coupling is infeasible: row error {row:.3g}, column error {col:.3g} (tol {tol:g})")
    return pi


def _matrix(pi) -> np.ndarray:
    return np.asarray(getattr(pi, "matrix", pi), dtype=float)


def entropy(pi) -> float:
    """``sum pi_ij (log pi_ij - 1)`` with zeros contributing nothing."""
    pi = _matrix(pi)
    if np.any(pi < 0):
        raise InvalidInputError("entropy is defined for nonnegative matrices only")
    return float(np.sum(xlogy(pi, pi)) - pi.sum())


def kl_divergence(p, q) -> float:
    """Generalized KL divergence ``sum p log(p/q) - sum p + sum q``."""
    p = _matrix(p)
    q = _matrix(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise InvalidInputError("KL divergence needs nonnegative arguments")
    support = p > 0
    if np.any(q[support] == 0):
        raise DivergenceUndefinedError("q vanishes where p is positive")
    value = np.sum(p[support] * np.log(p[support] / q[support])) - p.sum() + q.sum()
    return float(max(value, 0.0))


def independence_coupling(marginals: Marginals) -> np.ndarray:
    """The product coupling ``a b^T``."""
    return np.outer(marginals.a, marginals.b)


@dataclass(frozen=True)
class QuadraticSpec:
    """Quadratic function of a coupling acting column by column.

    ``g(pi) = 1/2 sum_j s_j pi_j^T H pi_j + <C, pi> + constant`` where ``pi_j``
    is column ``j`` and ``s`` is ``col_scale`` (all ones when omitted). The
    gradient is ``H pi diag(s) + C``.
    """

    H: np.ndarray
    C: np.ndarray
    constant: float = 0.0
    col_scale: np.ndarray | None = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        C = np.asarray(self.C, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or C.ndim != 2 or C.shape[0] != H.shape[0]:
            raise InvalidInputError(f"incompatible shapes H {H.shape}, C {C.shape}")
        if not np.array_equal(H, H.T) and not np.allclose(H, H.T, rtol=1e-12, atol=1e-12):
            raise InvalidInputError("H must be symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "C", C)
        if self.col_scale is not None:
            s = np.asarray(self.col_scale, dtype=float)
            if s.shape != (C.shape[1],) or np.any(s <= 0):
                raise InvalidInputError("col_scale must be a positive vector with one entry per column")
            object.__setattr__(self, "col_scale", s)

    @property
    def shape(self) -> tuple[int, int]:
        return self.C.shape

    @classmethod
    def from_gram(cls, gram: GramTriple, marginals: Marginals) -> "QuadraticSpec":
        """The approximation-error term of KSC as a quadratic.

        With column weights ``v`` the Hessian block of column ``j`` is
        ``K_cc / v_j``. It is stored as ``H = K_cc * max(1/v)`` with
        ``col_scale = (1/v) / max(1/v)``, so ``max |H|`` is the Lipschitz
        constant the solvers need; uniform ``v`` gives ``H = N_t K_cc``.
        """
        v = marginals.b
        if marginals.shape != (gram.n_control, gram.n_treated):
            raise InvalidInputError(
                f"marginals {marginals.shape} do not match Gram ({gram.n_control}, {gram.n_treated})"
            )
        inv_v = 1.0 / v
        top = inv_v.max()
        s = inv_v / top
        uniform = np.all(v == v[0])
        return cls(
            H=gram.K_cc * top,
            C=-gram.K_ct,
            constant=0.5 * float(np.dot(v, np.diag(gram.K_tt))),
            col_scale=None if uniform else s,
        )

    def gradient(self, pi) -> np.ndarray:
        pi = _matrix(pi)
        Hp = self.H @ pi
        if self.col_scale is not None:
            Hp *= self.col_scale
        return Hp + self.C

    def value(self, pi) -> float:
        pi = _matrix(pi)
        Hp = self.H @ pi
        if self.col_scale is not None:
            Hp *= self.col_scale
        return float(0.5 * np.sum(pi * Hp) + np.sum(self.C * pi) + self.constant)


def ksc_objective(gram: GramTriple, marginals: Marginals, lam: float, pi, check: bool = True) -> float:
    """KSC objective: RKHS approximation error plus ``lam`` times the entropy.

    ``1/2 sum_j (1/v_j) (pi^T K_cc pi)_jj - <pi, K_ct> + 1/2 sum_j v_j (K_tt)_jj + lam h(pi)``.
    Set ``check=False`` to evaluate off the polytope.
    """
    if lam < 0:
        raise InvalidInputError(f"lambda must be nonnegative, got {lam}")
    pi = _matrix(pi)
    if pi.shape != (gram.n_control, gram.n_treated):
        raise InvalidInputError(f"coupling shape {pi.shape} does not match Gram ({gram.n_control}, {gram.n_treated})")
    if check:
        check_feasible(pi, marginals)
    v = marginals.b
    quad = 0.5 * np.sum(np.sum(pi * (gram.K_cc @ pi), axis=0) / v)
    value = quad - np.sum(pi * gram.K_ct) + 0.5 * np.dot(v, np.diag(gram.K_tt))
    if lam > 0:
        value += lam * entropy(pi)
    return float(value)


def ksc_gradient(gram: GramTriple, marginals: Marginals, pi) -> np.ndarray:
    """Gradient of the approximation-error term; column ``j`` is ``K_cc pi_j / v_j - K_ct[:, j]``."""
    pi = _matrix(pi)
    if pi.shape != (gram.n_control, gram.n_treated):
        raise InvalidInputError(f"coupling shape {pi.shape} does not match Gram ({gram.n_control}, {gram.n_treated})")
    return (gram.K_cc @ pi) / marginals.b - gram.K_ct


def jensen_upper_bound(gram: GramTriple, pi) -> float:
    """Pairwise-distance upper bound on the approximation-error term.

    ``1/2 sum_ij pi_ij ||phi(x_j) - phi(x_i)||^2``; replacing the objective's
    first term with this gives entropic optimal transport.
    """
    pi = _matrix(pi)
    sq_dist = np.diag(gram.K_cc)[:, None] + np.diag(gram.K_tt)[None, :] - 2.0 * gram.K_ct
    return float(0.5 * np.sum(pi * sq_dist))


class RatioBounds(NamedTuple):
    ratio: float
    lower: float
    upper: float


def entropy_chi2_ratio(p) -> RatioBounds:
    """KL-to-uniform over chi-square-to-uniform for a probability vector, with its bounds.

    ``ratio = (sum p log p + log n) / (n sum p^2 - 1)`` always lies in
    ``[1 / (2 (n max p + 1)), 1]``.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidInputError("p must be a probability vector")
    n = p.size
    # Both numerator and denominator as sums of nonnegative terms, to avoid cancellation.
    numerator = float(np.sum(xlogy(p, n * p) - p + 1.0 / n))
    denominator = float(n * np.sum((p - 1.0 / n) ** 2))
    if denominator <= 0.0:
        raise DegenerateError("ratio is 0/0 for the uniform vector")
    return RatioBounds(numerator / denominator, 1.0 / (2.0 * (n * p.max() + 1.0)), 1.0)
