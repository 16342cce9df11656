"""Kernel functions and Gram-matrix assembly for treated and control covariates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

KERNEL_KINDS = ("linear", "rbf", "polynomial")

# Rows per block when assembling pairwise matrices; bounds the n*m*d temporary.
_BLOCK_ROWS = 256


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and hyperparameters.

    ``gamma`` is used by ``rbf`` only, ``degree`` and ``offset`` by
    ``polynomial`` only.
    """

    kind: str = "linear"
    gamma: float = 1.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise InvalidInputError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if self.kind == "rbf" and not (np.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidInputError(f"rbf kernel needs gamma > 0, got {self.gamma}")
        if self.kind == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise InvalidInputError(f"polynomial kernel needs an integer degree >= 1, got {self.degree}")
            if not (np.isfinite(self.offset) and self.offset >= 0):
                raise InvalidInputError(f"polynomial kernel needs offset >= 0, got {self.offset}")

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        keys = ("kind", "gamma", "degree", "offset")
        return cls(**{k: d[k] for k in keys if k in d})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma, "degree": self.degree, "offset": self.offset}

    def pairwise(self, X, Y) -> np.ndarray:
        """Matrix ``[k(x, y) for x in X] for y in Y``.

        Every entry is an independent length-``d`` reduction, so the value of
        ``k(x, y)`` does not depend on which other rows are present. This keeps
        Gram matrices bitwise equal to entrywise evaluation and exactly
        symmetric when ``X is Y``.
        """
        X = as_covariates(X)
        Y = as_covariates(Y)
        if X.shape[1] != Y.shape[1]:
            raise InvalidInputError(f"covariate dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        out = np.empty((X.shape[0], Y.shape[0]))
        for start in range(0, X.shape[0], _BLOCK_ROWS):
            xb = X[start:start + _BLOCK_ROWS, None, :]
            if self.kind == "rbf":
                diff = xb - Y[None, :, :]
                out[start:start + _BLOCK_ROWS] = np.exp(-self.gamma * np.sum(diff * diff, axis=-1))
            else:
                inner = np.sum(xb * Y[None, :, :], axis=-1)
                if self.kind == "linear":
                    out[start:start + _BLOCK_ROWS] = inner
                else:
                    out[start:start + _BLOCK_ROWS] = (inner + self.offset) ** int(self.degree)
        return out


def as_covariates(X) -> np.ndarray:
    """Coerce to a finite 2-D float array; a 1-D input is one covariate per unit."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidInputError(f"covariates must be 1-D or 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        bad = np.unique(np.nonzero(~np.isfinite(X))[0])
        raise InvalidInputError(f"non-finite covariate values in rows {bad[:10].tolist()}")
    return X


def eval_kernel(spec: KernelSpec, x, x_prime) -> float:
    """Evaluate ``k(x, x')`` for two single covariate vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.ndim != 1 or x_prime.ndim != 1 or x.shape != x_prime.shape:
        raise InvalidInputError(f"kernel arguments must be vectors of equal length, got {x.shape} and {x_prime.shape}")
    return float(spec.pairwise(x[None, :], x_prime[None, :])[0, 0])


@dataclass(frozen=True)
class GramTriple:
    """Kernel matrices among controls, between controls and treated, and among treated."""

    K_cc: np.ndarray
    K_ct: np.ndarray
    K_tt: np.ndarray

    def __post_init__(self):
        n_c, n_t = self.K_ct.shape
        if self.K_cc.shape != (n_c, n_c) or self.K_tt.shape != (n_t, n_t):
            raise InvalidInputError(
                f"inconsistent Gram shapes: K_cc {self.K_cc.shape}, K_ct {self.K_ct.shape}, K_tt {self.K_tt.shape}"
            )

    @property
    def n_control(self) -> int:
        return self.K_ct.shape[0]

    @property
    def n_treated(self) -> int:
        return self.K_ct.shape[1]

    def swapped(self) -> "GramTriple":
        """Exchange the roles of the two groups."""
        return GramTriple(K_cc=self.K_tt, K_ct=self.K_ct.T.copy(), K_tt=self.K_cc)

    def min_eigenvalue_cc(self) -> float:
        return float(np.linalg.eigvalsh(self.K_cc)[0])


def gram_triple(spec: KernelSpec, controls, treated) -> GramTriple:
    """Assemble ``K_cc``, ``K_ct`` and ``K_tt`` for the two covariate sets."""
    controls = as_covariates(controls)
    treated = as_covariates(treated)
    if controls.shape[1] != treated.shape[1]:
        raise InvalidInputError(
            f"controls have {controls.shape[1]} covariates but treated have {treated.shape[1]}"
        )
    return GramTriple(
        K_cc=spec.pairwise(controls, controls),
        K_ct=spec.pairwise(controls, treated),
        K_tt=spec.pairwise(treated, treated),
    )


def standardize(controls, treated):
    """Center and scale each column using the pooled sample.

    Constant columns are centered only. Returns the transformed pair.
    """
    controls = as_covariates(controls)
    treated = as_covariates(treated)
    pooled = np.vstack([controls, treated])
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    std[std == 0] = 1.0
    return (controls - mean) / std, (treated - mean) / std
