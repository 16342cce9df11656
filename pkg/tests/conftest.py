"""Shared fixtures and random-instance builders."""

from __future__ import annotations

import warnings
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from synthcoupling import KernelSpec, Marginals, gram_triple
from synthcoupling.solver import ConvergenceWarning

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

KERNELS = (
    KernelSpec("linear"),
    KernelSpec("rbf", gamma=2.5),
    KernelSpec("polynomial", degree=2, offset=1.0),
)


def random_simplex(rng, n):
    p = rng.exponential(size=n)
    return p / p.sum()


def random_marginals(rng, n, m, uniform=False):
    if uniform:
        return Marginals.uniform(n, m)
    return Marginals(random_simplex(rng, n), random_simplex(rng, m))


def random_instance(rng, n_c, n_t, d=2, kernel=None, uniform=True):
    """Covariates, Gram triple and marginals for a random problem."""
    kernel = kernel or KERNELS[1]
    Xc = rng.uniform(size=(n_c, d))
    Xt = rng.uniform(size=(n_t, d))
    return Xc, Xt, gram_triple(kernel, Xc, Xt), random_marginals(rng, n_c, n_t, uniform)


def random_coupling(rng, marginals, tol=1e-14):
    """Strictly positive feasible coupling by scaling a random matrix."""
    from synthcoupling import sinkhorn

    n, m = marginals.shape
    return sinkhorn(rng.uniform(0.05, 1.0, size=(n, m)), marginals.a, marginals.b, tol=tol).matrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@contextmanager
def quiet_convergence():
    """Silence solver non-convergence warnings where a capped run is intended."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        yield


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): test backing numbered acceptance criterion n")


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the acceptance summary for this test."""

    def note(text):
        request.node.acceptance_detail = text

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
    text = getattr(item, "acceptance_detail", "")
    if rep.skipped and isinstance(rep.longrepr, tuple):
        text = rep.longrepr[2]
    _ACCEPTANCE.setdefault(mark.args[0], {})[item.name] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[n]
        statuses = {s for s, _ in parts.values()}
        overall = "FAIL" if "FAIL" in statuses else ("SKIP" if statuses == {"SKIP"} else "PASS")
        info = "; ".join(f"{name}: {s} {t}".strip() for name, (s, t) in parts.items())
        terminalreporter.write_line(f"criterion {n:>2}: {overall}  [{info}]")
