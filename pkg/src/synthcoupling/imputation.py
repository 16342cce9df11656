"""Counterfactual imputation from a solved coupling and the aggregation identities it satisfies.

Dividing column ``j`` of a coupling by its treated weight ``v_j`` gives a
probability vector over controls; each treated unit's counterfactual is the
corresponding convex combination of control outcomes. Because the coupling's
row sums are the control weights ``w``, the ``v``-weighted mean of the
individual effects equals ``sum v Y_t - sum w Y_c`` for every coupling in the
polytope, whatever the regularization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import Coupling, Marginals, TOL_FEAS, check_feasible
from .errors import IdentityViolationError, InvalidInputError
from .propensity import ate_weights_from_scores, odds_weights

AGGREGATE_KINDS = ("dim", "ipw_att", "ipw_ate")
TOL_COLUMN = 1e-10
TOL_IDENTITY = 1e-10


@dataclass(frozen=True)
class TransitionMatrix:
    """Controls-by-treated matrix whose columns are probability vectors."""

    matrix: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=float)
        if P.ndim != 2:
            raise InvalidInputError(f"transition matrix must be 2-D, got shape {P.shape}")
        if np.any(P < 0):
            raise InvalidInputError("transition matrix has negative entries")
        err = np.abs(P.sum(axis=0) - 1.0).max(initial=0.0)
        if err > TOL_COLUMN:
            raise InvalidInputError(f"transition columns must sum to 1 (max error {err:.3g})")
        object.__setattr__(self, "matrix", P)

    @property
    def shape(self):
        return self.matrix.shape

    def sum_of_squares(self) -> np.ndarray:
        """``sum_i P_ij^2`` for each column."""
        return np.einsum("ij,ij->j", self.matrix, self.matrix)


@dataclass(frozen=True)
class ImputationResult:
    imputed: np.ndarray
    effects: np.ndarray
    aggregate: float
    aggregate_kind: str
    weights: np.ndarray
    identity_error: float = 0.0

    def weighted_effect(self) -> float:
        return float(np.dot(self.weights, self.effects))


def transition_from_coupling(pi, v=None, tol: float = TOL_FEAS) -> TransitionMatrix:
    """Divide each coupling column by its treated weight.

    ``pi`` is a :class:`Coupling` (its marginals supply ``v`` and are checked)
    or a raw matrix together with ``v``.
    """
    if isinstance(pi, Coupling):
        check_feasible(pi.matrix, pi.marginals, tol)
        matrix, v = pi.matrix, pi.marginals.b
    else:
        matrix = np.asarray(pi, dtype=float)
        if v is None:
            raise InvalidInputError("a raw coupling matrix needs the treated weights v")
        v = np.asarray(v, dtype=float)
        if v.shape != (matrix.shape[1],):
            raise InvalidInputError(f"v has shape {v.shape}, coupling has {matrix.shape[1]} columns")
    P = matrix / v[None, :]
    # Feasibility tolerance can leave column sums a hair off 1; renormalize exactly.
    return TransitionMatrix(P / P.sum(axis=0, keepdims=True))


def impute(P: TransitionMatrix, Y_control) -> np.ndarray:
    """``Y_hat_j(0) = sum_i P_ij Y_i``, one value per treated unit."""
    Y_control = np.asarray(Y_control, dtype=float).ravel()
    matrix = P.matrix if isinstance(P, TransitionMatrix) else TransitionMatrix(P).matrix
    if matrix.shape[0] != Y_control.size:
        raise InvalidInputError(f"{Y_control.size} control outcomes for {matrix.shape[0]} transition rows")
    return Y_control @ matrix


def _validate_kind(kind, v, w):
    if kind not in AGGREGATE_KINDS:
        raise InvalidInputError(f"unknown aggregate kind {kind!r}; expected one of {AGGREGATE_KINDS}")
    uniform_v = np.allclose(v, 1.0 / v.size, rtol=0, atol=1e-12)
    uniform_w = np.allclose(w, 1.0 / w.size, rtol=0, atol=1e-12)
    if kind == "dim" and not (uniform_v and uniform_w):
        raise InvalidInputError("difference in means needs uniform treated and control weights")
    if kind == "ipw_att" and not uniform_v:
        raise InvalidInputError("the IPW ATT aggregate needs uniform treated weights")


def effects_and_aggregate(imputed, Y_treated, v, w, Y_control, kind: str = "dim",
                          tol: float = TOL_IDENTITY) -> ImputationResult:
    """Individual effects ``Y_j - Y_hat_j(0)`` and their aggregate.

    The aggregate is the closed-form ``sum_j v_j Y_j - sum_i w_i Y_i``; the
    ``v``-weighted mean of the effects must reproduce it to
    ``tol * (1 + |aggregate|)``.

    Raises
    ------
    IdentityViolationError
        If it does not, which means the imputations came from a coupling
        whose row sums are not ``w``. Nothing is rescaled to force agreement.
    """
    imputed = np.asarray(imputed, dtype=float).ravel()
    Y_treated = np.asarray(Y_treated, dtype=float).ravel()
    Y_control = np.asarray(Y_control, dtype=float).ravel()
    marg = Marginals(np.asarray(w, dtype=float), np.asarray(v, dtype=float))
    v, w = marg.b, marg.a
    if imputed.size != Y_treated.size or v.size != Y_treated.size:
        raise InvalidInputError(
            f"lengths differ: {imputed.size} imputations, {Y_treated.size} treated outcomes, {v.size} weights"
        )
    if w.size != Y_control.size:
        raise InvalidInputError(f"{Y_control.size} control outcomes for {w.size} control weights")
    _validate_kind(kind, v, w)
    effects = Y_treated - imputed
    aggregate = float(np.dot(v, Y_treated) - np.dot(w, Y_control))
    error = abs(float(np.dot(v, effects)) - aggregate)
    if error > tol * (1.0 + abs(aggregate)):
        raise IdentityViolationError(
            f"weighted mean effect differs from the {kind} aggregate {aggregate:.12g} by {error:.3g}; "
            "the coupling was not solved with these marginals"
        )
    return ImputationResult(imputed, effects, aggregate, kind, v, error)


def impute_effects(pi: Coupling, Y_treated, Y_control, kind: str = "dim") -> ImputationResult:
    """Transition matrix, imputation and aggregate in one call."""
    P = transition_from_coupling(pi)
    return effects_and_aggregate(impute(P, Y_control), Y_treated, pi.marginals.b, pi.marginals.a, Y_control, kind)


def dim_estimate(Y_treated, Y_control) -> float:
    """Difference in mean outcomes."""
    return float(np.mean(Y_treated) - np.mean(Y_control))


def ipw_att_estimate(Y_treated, Y_control, control_scores) -> float:
    """Normalized IPW estimate of the effect on the treated from control propensity scores."""
    w = odds_weights(control_scores)
    return float(np.mean(Y_treated) - np.dot(w, np.asarray(Y_control, dtype=float)))


def ipw_ate_estimate(Y_treated, Y_control, treated_scores, control_scores) -> float:
    """Normalized IPW estimate of the average effect."""
    m = ate_weights_from_scores(treated_scores, control_scores)
    return float(np.dot(m.b, np.asarray(Y_treated, dtype=float)) - np.dot(m.a, np.asarray(Y_control, dtype=float)))


def swap_roles(gram, marginals: Marginals):
    """Gram triple and marginals with treated and control exchanged.

    Solving the swapped problem and imputing with treated outcomes gives the
    treated-arm counterfactuals of control units.
    """
    return gram.swapped(), marginals.swapped()
