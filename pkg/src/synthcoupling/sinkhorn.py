"""Sinkhorn matrix scaling and the entropic optimal-transport map.

``sinkhorn`` rescales a positive matrix so that its column sums equal ``b``
exactly after every sweep and its row sums approach ``a``. ``entropic_ot``
returns ``argmin_{pi in Pi(a, b)} <C, pi> + lam h(pi)`` by scaling
``exp(-C / lam)``, switching to log-domain updates when ``max|C| / lam`` is
large enough for the exponentials to under- or overflow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .coupling import Marginals
from .errors import InvalidInputError

TOL_SINK = 1e-10
MAX_ITER_SINK = 100_000
OVERFLOW_GUARD = 400.0


class SinkhornWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Potentials:
    """Dual variables with ``pi = exp(-(mu 1^T + 1 nu^T + C) / lam)``."""

    mu: np.ndarray
    nu: np.ndarray


@dataclass(frozen=True)
class SinkhornResult:
    matrix: np.ndarray
    log_row_scaling: np.ndarray
    log_col_scaling: np.ndarray
    iterations: int
    residual: float
    converged: bool
    log_domain: bool = False
    log_matrix: np.ndarray | None = None
    potentials: Potentials | None = None

    @property
    def row_scaling(self) -> np.ndarray:
        return np.exp(self.log_row_scaling)

    @property
    def col_scaling(self) -> np.ndarray:
        return np.exp(self.log_col_scaling)

    def log(self) -> np.ndarray:
        """Entrywise log of the scaled matrix, finite wherever the log-domain path kept it so."""
        if self.log_matrix is not None:
            return self.log_matrix
        with np.errstate(divide="ignore"):
            return np.log(self.matrix)


def _check_marginal(p, name):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise InvalidInputError(f"{name} must be a strictly positive vector")
    return p


def _warn_unconverged(iterations, residual, tol):
    warnings.warn(
        f"Sinkhorn stopped after {iterations} iterations with residual {residual:.3e} > tol {tol:.1e}",
        SinkhornWarning,
        stacklevel=3,
    )


def sinkhorn(P, a, b, tol: float = TOL_SINK, max_iter: int = MAX_ITER_SINK, init_col=None) -> SinkhornResult:
    """Scale rows and columns of a positive matrix towards marginals ``(a, b)``.

    Starts from ``x = 1, y = b / (P^T x)`` and alternates
    ``x <- a / (P y)``, ``y <- b / (P^T x)`` until the L1 row-sum residual is
    at most ``tol``. Hitting ``max_iter`` returns ``converged=False`` and warns.
    ``init_col`` warm-starts the column scaling ``y``.
    """
    P = np.asarray(P, dtype=float)
    a = _check_marginal(a, "a")
    b = _check_marginal(b, "b")
    if P.shape != (a.size, b.size):
        raise InvalidInputError(f"matrix shape {P.shape} does not match marginals ({a.size}, {b.size})")
    if not np.all(np.isfinite(P)) or np.any(P <= 0):
        raise InvalidInputError("Sinkhorn needs a matrix with strictly positive finite entries")

    x = np.ones(a.size)
    if init_col is not None:
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            warm = a / (P @ np.asarray(init_col, dtype=float))
            if np.all(np.isfinite(warm) & (warm > 0)) and np.all(np.isfinite(b / (P.T @ warm))):
                x = warm
    y = b / (P.T @ x)
    Py = P @ y
    residual = float(np.abs(x * Py - a).sum())
    k = 0
    while residual > tol and k < max_iter:
        x = a / Py
        y = b / (P.T @ x)
        Py = P @ y
        residual = float(np.abs(x * Py - a).sum())
        k += 1
    converged = residual <= tol
    if not converged:
        _warn_unconverged(k, residual, tol)
    return SinkhornResult(
        matrix=x[:, None] * P * y[None, :],
        log_row_scaling=np.log(x),
        log_col_scaling=np.log(y),
        iterations=k,
        residual=residual,
        converged=converged,
    )


def _lse_rows(M):
    top = M.max(axis=1)
    return top + np.log(np.exp(M - top[:, None]).sum(axis=1))


def _lse_cols(M):
    top = M.max(axis=0)
    return top + np.log(np.exp(M - top[None, :]).sum(axis=0))


def sinkhorn_log(log_P, a, b, tol: float = TOL_SINK, max_iter: int = MAX_ITER_SINK,
                 init_log_col=None) -> SinkhornResult:
    """Log-domain version of :func:`sinkhorn` taking ``log P`` as input.

    Scalings are carried as logs and sums as log-sum-exp reductions, so
    entries of ``P`` far outside the float range are handled. ``init_log_col``
    warm-starts the column scaling; the first row update uses it directly.
    """
    log_P = np.asarray(log_P, dtype=float)
    a = _check_marginal(a, "a")
    b = _check_marginal(b, "b")
    if log_P.shape != (a.size, b.size):
        raise InvalidInputError(f"matrix shape {log_P.shape} does not match marginals ({a.size}, {b.size})")
    if not np.all(np.isfinite(log_P)):
        raise InvalidInputError("log-kernel must be finite")
    log_a = np.log(a)
    log_b = np.log(b)

    f = np.zeros(a.size)
    if init_log_col is None:
        g = log_b - _lse_cols(log_P)
    else:
        g = np.asarray(init_log_col, dtype=float).copy()
        f = log_a - _lse_rows(log_P + g[None, :])
        g = log_b - _lse_cols(log_P + f[:, None])
    row_lse = _lse_rows(log_P + g[None, :])
    residual = float(np.abs(np.exp(f + row_lse) - a).sum())
    k = 0
    while residual > tol and k < max_iter:
        f = log_a - row_lse
        g = log_b - _lse_cols(log_P + f[:, None])
        row_lse = _lse_rows(log_P + g[None, :])
        residual = float(np.abs(np.exp(f + row_lse) - a).sum())
        k += 1
    converged = residual <= tol
    if not converged:
        _warn_unconverged(k, residual, tol)
    log_matrix = log_P + f[:, None] + g[None, :]
    return SinkhornResult(
        matrix=np.exp(log_matrix),
        log_row_scaling=f,
        log_col_scaling=g,
        iterations=k,
        residual=residual,
        converged=converged,
        log_domain=True,
        log_matrix=log_matrix,
    )


def entropic_ot(C, lam: float, marginals: Marginals, tol: float = TOL_SINK, max_iter: int = MAX_ITER_SINK,
                overflow_guard: float = OVERFLOW_GUARD, method: str = "auto", init_log_col=None) -> SinkhornResult:
    """Entropic optimal transport plan for cost ``C`` at regularization ``lam``.

    ``method`` is ``"auto"`` (direct scaling unless ``max|C| / lam`` exceeds
    ``overflow_guard``), ``"direct"`` or ``"log"``. ``init_log_col`` is the
    log column scaling of a previous, similar problem and warm-starts either
    path. The returned potentials reproduce the plan as
    ``exp(-(mu 1^T + 1 nu^T + C) / lam)``.
    """
    if not lam > 0:
        raise InvalidInputError(f"entropic regularization must be positive, got {lam}")
    C = np.asarray(C, dtype=float)
    if C.shape != marginals.shape:
        raise InvalidInputError(f"cost shape {C.shape} does not match marginals {marginals.shape}")
    if not np.all(np.isfinite(C)):
        raise InvalidInputError("cost matrix must be finite")
    fallback = method == "auto"
    if method == "auto":
        method = "log" if np.abs(C).max() / lam > overflow_guard else "direct"
    if method == "direct":
        init_col = None
        if init_log_col is not None:
            with np.errstate(over="ignore", under="ignore"):
                init_col = np.exp(np.asarray(init_log_col, dtype=float))
            if not np.all(np.isfinite(init_col) & (init_col > 0)):
                init_col = None
        with warnings.catch_warnings(record=True) as caught, np.errstate(all="ignore" if fallback else "warn"):
            warnings.simplefilter("always")
            res = sinkhorn(np.exp(-C / lam), marginals.a, marginals.b, tol=tol, max_iter=max_iter,
                           init_col=init_col)
        if fallback and not (np.isfinite(res.residual) and np.all(np.isfinite(res.matrix))):
            # Scalings left the float range; redo in the log domain.
            method = "log"
        else:
            for w in caught:
                warnings.warn(w.message, w.category, stacklevel=2)
    if method == "log":
        res = sinkhorn_log(-C / lam, marginals.a, marginals.b, tol=tol, max_iter=max_iter,
                           init_log_col=init_log_col)
    elif method != "direct":
        raise InvalidInputError(f"unknown method {method!r}")
    pot = Potentials(mu=-lam * res.log_row_scaling, nu=-lam * res.log_col_scaling)
    return SinkhornResult(**{**res.__dict__, "potentials": pot})


def column_softmax_ot(C, lam: float, b) -> SinkhornResult:
    """Entropic plan with only the column marginal ``b`` imposed.

    Each column is ``b_j softmax(-C[:, j] / lam)``, the exact minimizer once
    the row constraint is dropped.
    """
    if not lam > 0:
        raise InvalidInputError(f"entropic regularization must be positive, got {lam}")
    C = np.asarray(C, dtype=float)
    b = _check_marginal(b, "b")
    logits = -C / lam
    g = np.log(b) - _lse_cols(logits)
    log_matrix = logits + g[None, :]
    return SinkhornResult(
        matrix=np.exp(log_matrix),
        log_row_scaling=np.zeros(C.shape[0]),
        log_col_scaling=g,
        iterations=0,
        residual=0.0,
        converged=True,
        log_domain=True,
        log_matrix=log_matrix,
    )
