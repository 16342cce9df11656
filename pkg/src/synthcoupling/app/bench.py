"""Comparison imputers: k-nearest-neighbour matching with replacement and linear regression."""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from ..errors import InvalidInputError
from ..kernels import as_covariates


def knn_impute(X_control, X_treated, Y_control, k: int) -> np.ndarray:
    """Mean outcome of the ``k`` nearest controls (Euclidean) for each treated unit.

    Controls may be reused across treated units. Distance ties are broken by
    control order.
    """
    Xc = as_covariates(X_control)
    Xt = as_covariates(X_treated)
    Yc = np.asarray(Y_control, dtype=float).ravel()
    if Yc.size != Xc.shape[0]:
        raise InvalidInputError(f"{Yc.size} control outcomes for {Xc.shape[0]} controls")
    if not 1 <= k <= Xc.shape[0]:
        raise InvalidInputError(f"k must lie in [1, {Xc.shape[0]}], got {k}")
    dist = cdist(Xt, Xc)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return Yc[nearest].mean(axis=1)


def regression_impute(X_control, X_treated, Y_control, Y_treated) -> np.ndarray:
    """Least-squares fit of outcome on intercept, covariates and treatment; predictions with treatment off."""
    Xc = as_covariates(X_control)
    Xt = as_covariates(X_treated)
    X = np.vstack([Xc, Xt])
    z = np.r_[np.zeros(Xc.shape[0]), np.ones(Xt.shape[0])]
    A = np.column_stack([np.ones(X.shape[0]), X, z])
    y = np.r_[np.asarray(Y_control, dtype=float), np.asarray(Y_treated, dtype=float)]
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return np.column_stack([np.ones(Xt.shape[0]), Xt]) @ coef[:-1]


def bench_table(treated_ids, Y_treated, v, imputations: dict) -> tuple[pd.DataFrame, dict]:
    """Long-format per-unit table and ``v``-weighted aggregate effect per method."""
    Y_treated = np.asarray(Y_treated, dtype=float)
    frames = []
    aggregates = {}
    for method, imputed in imputations.items():
        effects = Y_treated - imputed
        aggregates[method] = float(np.dot(v, effects))
        frames.append(pd.DataFrame({
            "method": method,
            "treated_id": [str(t) for t in treated_ids],
            "observed": Y_treated,
            "imputed": imputed,
            "effect": effects,
        }))
    return pd.concat(frames, ignore_index=True), aggregates
