import math

import numpy as np
import pytest

from felab.asymptotics import (
    AsymptoticCoefficients,
    GaussianMaxProblem,
    argmax_with_tiebreak,
    branch_probabilities,
    build_coefficients,
    expected_max_mc,
    mu_closed_form_two,
    predicted_free_energy,
    predicted_gen_loss,
)

ONE_OVER_SQRT_PI = 1.0 / math.sqrt(math.pi)


def random_psd_2x2(rng):
    root = rng.normal(size=(2, 2))
    return root @ root.T + 1e-6 * np.eye(2)


class TestClosedForm:
    def test_identical_components_give_zero(self):
        assert mu_closed_form_two(np.ones((2, 2))) == 0.0

    def test_identity_covariance(self):
        assert mu_closed_form_two(np.eye(2)) == pytest.approx(ONE_OVER_SQRT_PI, abs=1e-15)

    def test_equicorrelation_formula_and_monotonicity(self):
        values = []
        for rho in (-0.5, 0.0, 0.5, 0.9):
            V = np.array([[1.0, rho], [rho, 1.0]])
            mu = mu_closed_form_two(V)
            assert mu == pytest.approx(math.sqrt((1 - rho) / math.pi), abs=1e-14)
            values.append(mu)
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_negative_gap_variance_rejected(self):
        with pytest.raises(ValueError, match="invalid covariance"):
            mu_closed_form_two(np.array([[1.0, 1.2], [1.2, 1.0]]))

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError):
            mu_closed_form_two(np.eye(3))


class TestExpectedMaxMC:
    def test_single_component_centers_on_zero(self):
        est, se = expected_max_mc(GaussianMaxProblem(np.array([[2.0]])), 100_000, seed=1)
        assert abs(est) < 3 * se

    def test_matches_closed_form_identity(self):
        est, se = expected_max_mc(GaussianMaxProblem(np.eye(2)), 1_000_000, seed=2)
        assert abs(est - ONE_OVER_SQRT_PI) < 3 * se

    def test_scaling_by_two(self):
        V = np.array([[1.0, 0.3], [0.3, 1.0]])
        est1, se1 = expected_max_mc(GaussianMaxProblem(V), 400_000, seed=3)
        est2, se2 = expected_max_mc(GaussianMaxProblem(4.0 * V), 400_000, seed=3)
        assert abs(est2 - 2.0 * est1) < 3 * math.hypot(2 * se1, se2)

    def test_closed_form_agrees_with_mc_for_random_matrices(self):
        rng = np.random.default_rng(99)
        for k in range(20):
            V = random_psd_2x2(rng)
            est, se = expected_max_mc(GaussianMaxProblem(V), 100_000, seed=1000 + k)
            assert abs(est - mu_closed_form_two(V)) < 3 * se

    def test_too_few_draws_rejected(self):
        with pytest.raises(ValueError):
            expected_max_mc(GaussianMaxProblem(np.eye(2)), 100)

    def test_non_psd_rejected(self):
        with pytest.raises(ValueError):
            GaussianMaxProblem(np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestBranchProbabilities:
    def test_exchangeable_pair_is_even(self):
        V = np.array([[1.0, 0.4], [0.4, 1.0]])
        alpha = branch_probabilities(GaussianMaxProblem(V), 400_000, seed=4)
        se = math.sqrt(0.25 / 400_000)
        assert abs(alpha[0] - 0.5) < 3 * se
        assert alpha.sum() == 1.0

    def test_unequal_variance_pair_is_still_even(self):
        # for any mean-zero pair the difference is symmetric about zero, so
        # each component wins exactly half the time regardless of scales
        V = np.diag([4.0, 0.01])
        alpha = branch_probabilities(GaussianMaxProblem(V), 200_000, seed=5)
        se = math.sqrt(0.25 / 200_000)
        assert abs(alpha[0] - 0.5) < 3 * se

    def test_larger_variance_wins_more_often_among_three(self):
        V = np.diag([4.0, 0.01, 0.01])
        alpha = branch_probabilities(GaussianMaxProblem(V), 200_000, seed=5)
        assert alpha[0] > 0.45
        assert alpha[0] > alpha[1] and alpha[0] > alpha[2]

    def test_single_component(self):
        alpha = branch_probabilities(GaussianMaxProblem(np.array([[1.0]])), 10_000, seed=6)
        assert alpha.tolist() == [1.0]

    def test_degenerate_ties_follow_rlct_rule(self):
        # identical components tie on every draw; the smaller lambda wins
        V = np.ones((2, 2))
        problem = GaussianMaxProblem(V, lambdas=(2.0, 1.0), multiplicities=(1, 1))
        alpha = branch_probabilities(problem, 10_000, seed=7)
        assert alpha.tolist() == [0.0, 1.0]

    def test_tie_on_lambda_uses_multiplicity(self):
        problem = GaussianMaxProblem(
            np.ones((2, 2)), lambdas=(1.0, 1.0), multiplicities=(1, 3)
        )
        alpha = branch_probabilities(problem, 10_000, seed=8)
        assert alpha.tolist() == [0.0, 1.0]


def test_argmax_tiebreak_rules():
    assert argmax_with_tiebreak([1.0, 2.0, 0.5]) == 1
    assert argmax_with_tiebreak([1.0, 1.0], lambdas=[2.0, 1.0]) == 1
    assert argmax_with_tiebreak([1.0, 1.0], lambdas=[1.0, 1.0], multiplicities=[1, 2]) == 1
    assert argmax_with_tiebreak([1.0, 1.0]) == 0


def make_coeff(L0=0.8, mu=1.5, lambda_hat=1.0, m_hat=1.0, beta=1.0, alpha=(0.5, 0.5)):
    return AsymptoticCoefficients(
        L0=L0, V=np.eye(2), mu=mu, alpha=alpha, lambda_hat=lambda_hat, m_hat=m_hat, beta=beta
    )


class TestPredictedCurves:
    def test_regular_two_branch_shape(self):
        # lambda_hat = m_hat = 1, beta = 1: value - nL0 = -mu sqrt(n) + log n
        coeff = make_coeff()
        for n in (100, 400, 600):
            expected = -coeff.mu * math.sqrt(n) + math.log(n)
            assert predicted_free_energy(n, coeff) - n * coeff.L0 == pytest.approx(
                expected, abs=1e-10
            )

    def test_zero_mu_reduces_to_unique_distribution_expansion(self):
        coeff = make_coeff(mu=0.0, lambda_hat=1.5, m_hat=2.0)
        n = 50
        expected = n * coeff.L0 + 1.5 * math.log(n) - 1.0 * math.log(math.log(n))
        assert predicted_free_energy(n, coeff) == pytest.approx(expected, abs=1e-12)

    def test_beta_doubling_halves_log_terms(self):
        c1 = make_coeff(lambda_hat=2.0, m_hat=3.0)
        c2 = make_coeff(lambda_hat=2.0, m_hat=3.0, beta=2.0)
        n = 200
        f1 = predicted_free_energy(n, c1) - (n * c1.L0 - c1.mu * math.sqrt(n))
        f2 = predicted_free_energy(n, c2) - (n * c2.L0 - c2.mu * math.sqrt(n))
        assert f2 == pytest.approx(0.5 * f1, abs=1e-12)

    def test_small_n_rejected(self):
        with pytest.raises(ValueError):
            predicted_free_energy(2, make_coeff())

    def test_gen_loss_values(self):
        coeff = make_coeff(mu=0.0)
        assert predicted_gen_loss(10, coeff) == coeff.L0
        coeff = make_coeff(mu=1.0)
        gap_n = coeff.L0 - predicted_gen_loss(100, coeff)
        gap_4n = coeff.L0 - predicted_gen_loss(400, coeff)
        assert gap_4n == pytest.approx(gap_n / 2.0, abs=1e-15)

    def test_gen_loss_requires_beta_one(self):
        with pytest.raises(ValueError, match="beta = 1"):
            predicted_gen_loss(100, make_coeff(beta=2.0))

    def test_discrete_difference_matches_gen_loss(self):
        # F(n+1) - F(n) = L0 - mu/(2 sqrt n) + O(1/n)
        coeff = make_coeff(mu=1.77)
        for n in (10, 100, 1000, 10_000, 100_000, 1_000_000):
            diff = predicted_free_energy(n + 1, coeff) - predicted_free_energy(n, coeff)
            gap = abs(diff - predicted_gen_loss(n, coeff))
            assert gap < 2.0 / n


class TestCoefficients:
    def test_session_coefficients_shape(self, coeff):
        assert coeff.alpha == (0.5, 0.5)
        assert coeff.lambda_hat == 1.0
        assert coeff.m_hat == 1.0
        assert coeff.mu > 0

    def test_hat_values_in_convex_hull(self, optset, cov):
        custom = build_coefficients(
            type(optset)(
                optima=optset.optima,
                branches=optset.branches,
                lambdas=(1.0, 3.0),
                multiplicities=(1, 4),
                L0=optset.L0,
            ),
            cov,
        )
        assert 1.0 <= custom.lambda_hat <= 3.0
        assert 1.0 <= custom.m_hat <= 4.0

    def test_alpha_sums_to_one_exactly(self, coeff):
        assert sum(coeff.alpha) == 1.0

    def test_json_round_trip(self, coeff):
        restored = AsymptoticCoefficients.from_json_dict(coeff.to_json_dict())
        assert restored.mu == coeff.mu
        assert restored.alpha == coeff.alpha
        np.testing.assert_array_equal(restored.V, coeff.V)

    def test_invalid_alpha_rejected(self):
        with pytest.raises(ValueError):
            make_coeff(alpha=(0.7, 0.7))
