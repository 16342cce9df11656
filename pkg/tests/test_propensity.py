import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize
from scipy.special import expit, log_expit, logit

from synthcoupling import (
    EmptySelectionError,
    InvalidInputError,
    LogisticModel,
    PropensityOverflowError,
    ate_weights,
    att_control_weights,
    fit_logistic,
    trim_by_overlap,
)
from synthcoupling.propensity import ClampWarning, SeparationWarning, ate_weights_from_scores, odds_weights


def oracle_fit(X, Z):
    """Maximum likelihood by quasi-Newton on the raw parameters."""
    A = np.column_stack([np.ones(len(Z)), X])

    def nll(theta):
        eta = A @ theta
        return -np.sum(Z * log_expit(eta) + (1 - Z) * log_expit(-eta))

    def grad(theta):
        return -A.T @ (Z - expit(A @ theta))

    res = minimize(nll, np.zeros(A.shape[1]), jac=grad, method="BFGS", options={"gtol": 1e-11, "maxiter": 10_000})
    return res.x


def model_with_scores(scores):
    """A model whose predictions on ``x = arange(n)`` reproduce given scores via the intercept per unit."""
    scores = np.asarray(scores, dtype=float)
    return LogisticModel(np.array([1.0]), 0.0, True, 0), logit(scores)[:, None]


def test_matches_independent_optimizer_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n, d = rng.integers(80, 300), rng.integers(1, 4)
        X = rng.normal(loc=rng.normal(size=d), scale=rng.uniform(0.5, 3, size=d), size=(n, d))
        beta = rng.normal(scale=0.5, size=d)
        Z = (rng.uniform(size=n) < expit(0.3 + X @ beta)).astype(float)
        if Z.min() == Z.max():
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("error", SeparationWarning)
            model = fit_logistic(X, Z)
        assert model.converged
        theta = oracle_fit(X, Z)
        np.testing.assert_allclose(model.intercept, theta[0], atol=1e-6)
        np.testing.assert_allclose(model.coefficients, theta[1:], atol=1e-6)


def test_independent_symmetric_covariate():
    rng = np.random.default_rng(1)
    x = rng.normal(size=200)
    X = np.r_[x, -x][:, None]
    Z = (rng.uniform(size=400) < 0.3).astype(float)
    model = fit_logistic(X, Z)
    theta = oracle_fit(X, Z)
    assert model.intercept == pytest.approx(theta[0], abs=1e-6)
    assert model.coefficients[0] == pytest.approx(theta[1], abs=1e-6)
    # Truth has no dependence: the fit is close to the intercept-only model.
    assert model.intercept == pytest.approx(logit(Z.mean()), abs=0.2)
    assert abs(model.coefficients[0]) < 0.3


def test_single_class_rejected():
    with pytest.raises(InvalidInputError):
        fit_logistic(np.ones((4, 1)), np.ones(4))
    with pytest.raises(InvalidInputError):
        fit_logistic(np.ones((4, 1)), [0, 1, 2, 1])
    with pytest.raises(InvalidInputError):
        fit_logistic(np.ones((3, 1)), [0, 1, 1, 0])


def test_intercept_only_closed_form():
    Z = np.array([1, 0, 0, 1, 1, 0, 0, 0], dtype=float)
    model = fit_logistic(np.empty((8, 0)), Z)
    assert model.intercept == logit(3 / 8)
    assert model.converged and model.coefficients.size == 0


def test_complete_separation_is_flagged():
    X = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
    Z = np.array([0, 0, 0, 1, 1, 1], dtype=float)
    with pytest.warns(SeparationWarning):
        model = fit_logistic(X, Z)
    assert not model.converged


def test_ridge_restores_convergence_under_separation():
    X = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
    Z = np.array([0, 0, 0, 1, 1, 1], dtype=float)
    model = fit_logistic(X, Z, ridge=1.0)
    assert model.converged and np.isfinite(model.coefficients).all()


def test_constant_covariate_pinned():
    rng = np.random.default_rng(2)
    X = np.column_stack([rng.normal(size=100), np.full(100, 3.0)])
    Z = (rng.uniform(size=100) < 0.4).astype(float)
    model = fit_logistic(X, Z)
    assert model.converged and model.coefficients[1] == 0.0
    theta = oracle_fit(X[:, :1], Z)
    assert model.coefficients[0] == pytest.approx(theta[1], abs=1e-6)


def test_predictions_strictly_inside_unit_interval():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    Z = (rng.uniform(size=200) < expit(X[:, 0])).astype(float)
    p = fit_logistic(X, Z).predict(X)
    assert np.all((p > 0) & (p < 1))


# ---------------------------------------------------------------- weights


def test_att_weights_equal_odds():
    model, X = model_with_scores([0.5, 0.5, 0.5])
    np.testing.assert_allclose(att_control_weights(model, X), 1 / 3, rtol=1e-15)


def test_att_weights_two_controls():
    model, X = model_with_scores([0.8, 0.2])
    w = att_control_weights(model, X)
    np.testing.assert_allclose(w, [4 / 4.25, 0.25 / 4.25], rtol=1e-12)
    np.testing.assert_allclose(w, [0.9412, 0.0588], atol=1e-4)


def test_att_weights_single_control():
    model, X = model_with_scores([0.3])
    np.testing.assert_array_equal(att_control_weights(model, X), [1.0])


def test_att_weights_overflow_reports_index():
    model = LogisticModel(np.array([1.0]), 0.0, True, 0)
    with pytest.raises(PropensityOverflowError) as info:
        att_control_weights(model, np.array([[0.0], [1.0], [60.0]]))
    assert info.value.index == 2


def test_ate_weights_examples():
    m = ate_weights_from_scores([0.25, 0.75], [0.25, 0.75])
    np.testing.assert_allclose(m.b, [0.75, 0.25], rtol=1e-14)
    np.testing.assert_allclose(m.a, [0.25, 0.75], rtol=1e-14)
    model, X = model_with_scores([0.5, 0.5])
    both = ate_weights(model, X, X)
    np.testing.assert_allclose(both.a, 0.5)
    np.testing.assert_allclose(both.b, 0.5)


def test_ate_weights_overflow():
    with pytest.raises(PropensityOverflowError) as info:
        ate_weights_from_scores([0.5, 0.0], [0.5])
    assert info.value.index == 1
    with pytest.raises(PropensityOverflowError):
        ate_weights_from_scores([0.5], [1.0])


def test_clamping_warns_and_keeps_weights_positive():
    with pytest.warns(ClampWarning):
        w = odds_weights([1e-14, 0.5])
    assert np.all(w > 0) and w.sum() == pytest.approx(1.0, abs=1e-12)


scores = arrays(float, st.integers(1, 30), elements=st.floats(1e-6, 1 - 1e-6))


@given(scores)
def test_odds_weights_normalized_positive(p):
    w = odds_weights(p)
    assert np.all(w > 0) and abs(w.sum() - 1.0) <= 1e-12


@given(scores, scores)
def test_ate_weights_normalized_positive(pt, pc):
    m = ate_weights_from_scores(pt, pc)
    for vec in (m.a, m.b):
        assert np.all(vec > 0) and abs(vec.sum() - 1.0) <= 1e-12


def test_weights_recomputed_from_stored_scores_bitwise():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(150, 2))
    Z = (rng.uniform(size=150) < expit(X @ [0.5, -0.3])).astype(float)
    model = fit_logistic(X, Z)
    stored = model.predict(X[Z == 0])
    np.testing.assert_array_equal(att_control_weights(model, X[Z == 0]), odds_weights(stored))


def test_non_converged_model_warns_on_weights():
    model = LogisticModel(np.array([1.0]), 0.0, False, 100)
    with pytest.warns(SeparationWarning):
        att_control_weights(model, np.array([[0.0], [1.0]]))


# ---------------------------------------------------------------- trimming


def test_trim_examples():
    np.testing.assert_array_equal(trim_by_overlap([0.01, 0.5, 0.99], 0.05, 0.95), [1])
    np.testing.assert_array_equal(trim_by_overlap([0.2, 0.3, 0.9]), [0, 1, 2])
    np.testing.assert_array_equal(trim_by_overlap([0.05, 0.95]), [0, 1])


def test_trim_empty_and_bad_bounds():
    with pytest.raises(EmptySelectionError):
        trim_by_overlap([0.01, 0.99])
    with pytest.raises(InvalidInputError):
        trim_by_overlap([0.5], 0.6, 0.4)


@given(arrays(float, st.integers(1, 40), elements=st.floats(0, 1)))
def test_trim_order_preserving_subset(p):
    try:
        keep = trim_by_overlap(p)
    except EmptySelectionError:
        assert not np.any((p >= 0.05) & (p <= 0.95))
        return
    assert np.all(np.diff(keep) > 0)
    assert np.all((p[keep] >= 0.05) & (p[keep] <= 0.95))
    assert keep.size == np.sum((p >= 0.05) & (p <= 0.95))
