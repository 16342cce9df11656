import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from synthcoupling import (
    Coupling,
    DegenerateError,
    DivergenceUndefinedError,
    InvalidInputError,
    KernelSpec,
    Marginals,
    QuadraticSpec,
    entropy,
    entropy_chi2_ratio,
    gram_triple,
    independence_coupling,
    jensen_upper_bound,
    kl_divergence,
    ksc_gradient,
    ksc_objective,
)
from synthcoupling.coupling import check_feasible

from conftest import KERNELS, random_coupling, random_instance, random_marginals


# ---------------------------------------------------------------- marginals and couplings


def test_marginals_validation():
    with pytest.raises(InvalidInputError):
        Marginals([0.5, 0.5 + 1e-9], [1.0])
    with pytest.raises(InvalidInputError):
        Marginals([1.0, 0.0], [1.0])
    with pytest.raises(InvalidInputError):
        Marginals([], [1.0])
    m = Marginals.uniform(3, 4)
    assert m.shape == (3, 4)


def test_feasibility_check():
    m = Marginals.uniform(2, 2)
    check_feasible(np.full((2, 2), 0.25), m)
    with pytest.raises(InvalidInputError):
        check_feasible(np.array([[0.5, 0.0], [0.0, 0.6]]), m)
    with pytest.raises(InvalidInputError):
        check_feasible(np.array([[0.75, -0.25], [-0.25, 0.75]]), m)
    assert Coupling(np.full((2, 2), 0.25), m).is_feasible()


# ---------------------------------------------------------------- entropy and KL


def test_entropy_uniform():
    n, m = 3, 5
    assert entropy(np.full((n, m), 1 / (n * m))) == pytest.approx(-math.log(n * m) - 1, abs=1e-14)


def test_entropy_single_unit_entry():
    pi = np.zeros((3, 2))
    pi[1, 0] = 1.0
    assert entropy(pi) == -1.0


def test_entropy_diagonal_half():
    value = entropy(np.array([[0.5, 0.0], [0.0, 0.5]]))
    assert value == pytest.approx(2 * 0.5 * (math.log(0.5) - 1), abs=1e-15)
    assert value == pytest.approx(-1.6931, abs=1e-4)


def test_kl_identity_and_uniform():
    rng = np.random.default_rng(0)
    p = random_coupling(rng, Marginals.uniform(3, 3))
    assert kl_divergence(p, p) == 0.0
    u = np.full((2, 2), 0.25)
    assert kl_divergence(u, u) == 0.0


def test_kl_diagonal_against_uniform():
    value = kl_divergence(np.array([[0.5, 0.0], [0.0, 0.5]]), np.full((2, 2), 0.25))
    assert value == pytest.approx(math.log(2), abs=1e-15)


def test_kl_undefined_when_reference_vanishes():
    with pytest.raises(DivergenceUndefinedError):
        kl_divergence(np.full((2, 2), 0.25), np.array([[0.5, 0.0], [0.0, 0.5]]))


@given(st.integers(0, 10_000))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    m = random_marginals(rng, 3, 4)
    assert kl_divergence(random_coupling(rng, m), random_coupling(rng, m)) >= 0.0


@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(2, 6))
def test_entropy_strong_convexity_midpoint(seed, n, m):
    rng = np.random.default_rng(seed)
    marg = random_marginals(rng, n, m)
    p, q = random_coupling(rng, marg), random_coupling(rng, marg)
    gap = (entropy(p) + entropy(q)) / 2 - entropy((p + q) / 2)
    assert gap >= np.abs(p - q).sum() ** 2 / 8 - 1e-13


# ---------------------------------------------------------------- independence coupling


def test_independence_examples():
    np.testing.assert_array_equal(independence_coupling(Marginals([0.5, 0.5], [0.5, 0.5])), 0.25)
    np.testing.assert_array_equal(independence_coupling(Marginals([1.0], [1.0])), [[1.0]])
    np.testing.assert_allclose(
        independence_coupling(Marginals([0.3, 0.7], [0.2, 0.8])),
        [[0.06, 0.24], [0.14, 0.56]],
        rtol=1e-15,
    )


@given(st.integers(0, 10_000))
def test_independence_exactly_feasible(seed):
    rng = np.random.default_rng(seed)
    m = random_marginals(rng, 5, 3)
    assert Coupling(independence_coupling(m), m).is_feasible(tol=1e-15)


# ---------------------------------------------------------------- objective


def feature_space_objective(Xc, Xt, pi, v):
    """Half the v-weighted squared distance between each treated point and its synthetic counterpart."""
    total = 0.0
    for j in range(Xt.shape[0]):
        synthetic = sum(pi[i, j] / v[j] * Xc[i] for i in range(Xc.shape[0]))
        total += v[j] * np.sum((Xt[j] - synthetic) ** 2)
    return 0.5 * total


def test_objective_perfect_balance():
    g = gram_triple(KernelSpec("rbf", gamma=2.5), [[0.3]], [[0.3]])
    assert ksc_objective(g, Marginals([1.0], [1.0]), 0.0, [[1.0]]) == 0.0


@pytest.mark.parametrize("uniform", [True, False])
def test_objective_matches_feature_space(uniform):
    rng = np.random.default_rng(11)
    for _ in range(100):
        n_c, n_t, d = rng.integers(1, 8), rng.integers(1, 6), rng.integers(1, 4)
        Xc, Xt, g, m = random_instance(rng, n_c, n_t, d, KernelSpec("linear"), uniform=uniform)
        pi = random_coupling(rng, m)
        oracle = feature_space_objective(Xc, Xt, pi, m.b)
        value = ksc_objective(g, m, 0.0, pi)
        assert value == pytest.approx(oracle, rel=1e-9, abs=1e-12)


def test_objective_entropy_is_additive():
    rng = np.random.default_rng(3)
    _, _, g, m = random_instance(rng, 5, 3, uniform=False)
    pi = random_coupling(rng, m)
    base = ksc_objective(g, m, 0.0, pi)
    assert ksc_objective(g, m, 0.3, pi) == pytest.approx(base + 0.3 * entropy(pi), abs=1e-14)


def test_objective_uniform_matrix_form():
    rng = np.random.default_rng(5)
    _, _, g, m = random_instance(rng, 6, 4)
    pi = random_coupling(rng, m)
    n_t = 4
    direct = n_t / 2 * np.sum(pi * (g.K_cc @ pi)) - np.sum(pi * g.K_ct) + np.trace(g.K_tt) / (2 * n_t)
    assert ksc_objective(g, m, 0.0, pi) == pytest.approx(direct, rel=1e-12)


def test_objective_rejects_infeasible_and_shape():
    rng = np.random.default_rng(5)
    _, _, g, m = random_instance(rng, 3, 2)
    with pytest.raises(InvalidInputError):
        ksc_objective(g, m, 0.0, np.full((3, 2), 0.5))
    with pytest.raises(InvalidInputError):
        ksc_objective(g, m, 0.0, np.full((2, 3), 1 / 6))


@pytest.mark.parametrize("uniform", [True, False])
def test_quadratic_spec_matches_objective(uniform):
    rng = np.random.default_rng(8)
    for kernel in KERNELS:
        _, _, g, m = random_instance(rng, 6, 4, kernel=kernel, uniform=uniform)
        spec = QuadraticSpec.from_gram(g, m)
        pi = random_coupling(rng, m)
        assert spec.value(pi) == pytest.approx(ksc_objective(g, m, 0.0, pi), rel=1e-12, abs=1e-13)
        np.testing.assert_allclose(spec.gradient(pi), ksc_gradient(g, m, pi), rtol=1e-12, atol=1e-13)


def test_quadratic_spec_uniform_layout():
    rng = np.random.default_rng(9)
    _, _, g, m = random_instance(rng, 5, 4)
    spec = QuadraticSpec.from_gram(g, m)
    np.testing.assert_allclose(spec.H, 4 * g.K_cc, rtol=1e-15)
    np.testing.assert_array_equal(spec.C, -g.K_ct)
    assert spec.constant == pytest.approx(np.trace(g.K_tt) / 8, rel=1e-15)
    assert spec.col_scale is None


def test_quadratic_spec_rejects_asymmetric():
    with pytest.raises(InvalidInputError):
        QuadraticSpec(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros((2, 1)))


# ---------------------------------------------------------------- gradient


def test_gradient_at_zero_is_minus_cross_gram():
    rng = np.random.default_rng(2)
    _, _, g, m = random_instance(rng, 4, 3, uniform=False)
    np.testing.assert_array_equal(ksc_gradient(g, m, np.zeros((4, 3))), -g.K_ct)


def test_gradient_identity_gram():
    rng = np.random.default_rng(2)
    _, _, g, m = random_instance(rng, 2, 3, d=2, kernel=KernelSpec("linear"))
    g = type(g)(np.eye(2), g.K_ct, g.K_tt)
    pi = random_coupling(rng, m)
    np.testing.assert_allclose(ksc_gradient(g, m, pi), 3 * pi - g.K_ct, rtol=1e-15)


def central_difference(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        grad[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


@pytest.mark.parametrize("uniform", [True, False])
def test_gradient_finite_differences(uniform):
    rng = np.random.default_rng(21)
    _, _, g, m = random_instance(rng, 5, 4, kernel=KERNELS[2], uniform=uniform)
    pi = random_coupling(rng, m)
    fd = central_difference(lambda x: ksc_objective(g, m, 0.0, x, check=False), pi)
    assert np.abs(fd - ksc_gradient(g, m, pi)).max() <= 1e-6


# ---------------------------------------------------------------- Jensen bound


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda s: s.kind)
def test_jensen_bound(kernel):
    rng = np.random.default_rng(31)
    for _ in range(100):
        _, _, g, m = random_instance(rng, rng.integers(1, 9), rng.integers(1, 6), kernel=kernel)
        pi = random_coupling(rng, m)
        assert ksc_objective(g, m, 0.0, pi) <= jensen_upper_bound(g, pi) + 1e-9


def test_jensen_bound_tight_for_deterministic_coupling():
    # Every treated unit copies exactly one control: no averaging, so the bound is attained.
    rng = np.random.default_rng(1)
    Xc, Xt = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    g = gram_triple(KernelSpec("linear"), Xc, Xt)
    m = Marginals.uniform(3, 3)
    pi = np.eye(3)[[2, 0, 1]] / 3
    assert ksc_objective(g, m, 0.0, pi) == pytest.approx(jensen_upper_bound(g, pi), rel=1e-12)


# ---------------------------------------------------------------- entropy / chi-square ratio


def test_ratio_point_mass_on_two():
    r = entropy_chi2_ratio([1.0, 0.0])
    assert r.ratio == pytest.approx(math.log(2), abs=1e-15)
    assert r.lower == pytest.approx(1 / 6, abs=1e-15)
    assert r.upper == 1.0


def test_ratio_three_quarters():
    r = entropy_chi2_ratio([0.75, 0.25])
    expected = (0.75 * math.log(0.75) + 0.25 * math.log(0.25) + math.log(2)) / 0.25
    assert r.ratio == pytest.approx(expected, rel=1e-13)
    assert r.lower <= r.ratio <= r.upper


def test_ratio_uniform_is_degenerate():
    with pytest.raises(DegenerateError):
        entropy_chi2_ratio([0.25] * 4)


@given(st.integers(0, 2**32 - 1), st.integers(2, 500), st.floats(0.05, 5.0))
def test_ratio_sandwich(seed, n, shape):
    rng = np.random.default_rng(seed)
    p = rng.gamma(shape, size=n)
    p /= p.sum()
    r = entropy_chi2_ratio(p)
    assert r.lower <= r.ratio <= r.upper


@given(st.integers(2, 40), st.integers(0, 39))
def test_ratio_sandwich_sparse(n, k):
    p = np.zeros(n)
    p[: k % n + 1] = 1.0
    p /= p.sum()
    if k % n + 1 == n:
        return
    r = entropy_chi2_ratio(p)
    assert r.lower <= r.ratio <= r.upper
