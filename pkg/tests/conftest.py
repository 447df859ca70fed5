"""Shared fixtures: the experiment's model and its expensive derived objects.

The optimum search, covariance quadrature, and grid construction are pure
functions of the default model spec, so they are computed once per session
and shared across test modules. The acceptance module registers one
pass/fail line per criterion; the hook below prints them at the end of the
run regardless of capture settings.
"""

import pytest

import felab

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def spec5():
    return felab.ModelSpec()


@pytest.fixture(scope="session")
def optset(spec5):
    return felab.find_optima(spec5)


@pytest.fixture(scope="session")
def cov(optset, spec5):
    return felab.covariance(optset, spec5)


@pytest.fixture(scope="session")
def coeff(optset, cov):
    return felab.build_coefficients(optset, cov)


@pytest.fixture(scope="session")
def grid(optset, spec5):
    return felab.build_grid(optset, spec5)


@pytest.fixture(scope="session")
def small_grid(optset, spec5):
    cfg = felab.GridConfig(coarse_resolution=100, patch_resolution=40, patch_radius=1.5)
    return felab.build_grid(optset, spec5, cfg)
