import numpy as np
import pytest

from felab.quad import (
    QuadratureError,
    gauss_hermite_standard_normal,
    gauss_legendre_panels,
    refine_panel_rule,
)


def test_panel_rule_exact_for_piecewise_polynomials():
    # |x|-like kink at the breakpoint is integrated exactly
    x, w = gauss_legendre_panels((-1.0, 0.0, 1.0), 8)
    assert np.dot(w, np.abs(x)) == pytest.approx(1.0, abs=1e-14)
    assert np.dot(w, x**6) == pytest.approx(2.0 / 7.0, abs=1e-14)


def test_breakpoint_validation():
    with pytest.raises(ValueError):
        gauss_legendre_panels((0.0,), 4)
    with pytest.raises(ValueError):
        gauss_legendre_panels((1.0, 0.0), 4)


def test_hermite_rule_matches_normal_moments():
    z, w = gauss_hermite_standard_normal(41)
    assert np.dot(w, np.ones_like(z)) == pytest.approx(1.0, abs=1e-12)
    assert np.dot(w, z**2) == pytest.approx(1.0, abs=1e-12)
    assert np.dot(w, z**4) == pytest.approx(3.0, abs=1e-10)


def test_refinement_converges_on_smooth_integrand():
    value = refine_panel_rule(lambda x: np.exp(-(x**2)), (-2.0, -1.0, 1.0, 2.0))
    from scipy.special import erf

    assert value == pytest.approx(np.sqrt(np.pi) * erf(2.0), abs=1e-12)


def test_refinement_reports_non_convergence():
    rng_phase = 1e4
    with pytest.raises(QuadratureError):
        refine_panel_rule(
            lambda x: np.sin(rng_phase * x**2),
            (0.0, 1.0),
            start_nodes=2,
            rel_tol=1e-14,
            max_doublings=2,
        )
