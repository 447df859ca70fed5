import numpy as np
import pytest

import felab
from felab.model import ModelSpec, Parameter, sample_dataset, log_model_density
from felab.population import (
    Branch,
    OptimumSet,
    avg_error,
    covariance,
    find_optima,
    log_loss,
    validate_covariance,
    variance_condition_check,
)


def entropy_term(sigma):
    return np.log(np.sqrt(2 * np.pi) * sigma)


class TestLogLoss:
    def test_zero_gap_family_hits_noise_entropy(self):
        # model mean identical to the truth: L = log(sqrt(2 pi) sigma) + 1/2
        for sigma in (0.2, 1.0):
            spec = ModelSpec(noise_sigma=sigma, regression_kind="tent-exact")
            value = log_loss(Parameter(1.0, 1.0), spec)
            assert value == pytest.approx(entropy_term(sigma) + 0.5, abs=1e-12)

    def test_mirror_symmetry(self, spec5):
        rng = np.random.default_rng(31)
        for _ in range(10):
            a, b = rng.uniform(-15, 15, size=2)
            assert log_loss(Parameter(a, b), spec5) == pytest.approx(
                log_loss(Parameter(-a, b), spec5), abs=1e-10
            )

    def test_loss_at_optimum_equals_L0(self, spec5, optset):
        for w in optset.optima:
            assert abs(log_loss(w, spec5) - optset.L0) < 1e-8

    def test_error_function_identities(self, spec5, optset):
        rng = np.random.default_rng(17)
        for _ in range(200):
            w = Parameter(rng.uniform(-20, 20), rng.uniform(-20, 20))
            K = avg_error(w, optset, spec5)
            assert K >= -1e-10
            assert log_loss(w, spec5) == pytest.approx(K + optset.L0, abs=1e-12)

    def test_far_from_optimum_positive_and_matches_mc(self, spec5, optset):
        # Monte Carlo oracle: average log density ratio over 1e6 samples
        w = Parameter(0.0, -20.0)
        K = avg_error(w, optset, spec5)
        assert K > 1.0
        n = 1_000_000
        data = sample_dataset(n, 123, spec5)
        ratio = log_model_density(data.x, data.y, optset.optima[0], spec5) - log_model_density(
            data.x, data.y, w, spec5
        )
        se = ratio.std(ddof=1) / np.sqrt(n)
        assert abs(K - ratio.mean()) < 3 * se


class TestFindOptima:
    def test_matches_published_location(self, optset):
        # two optima at (5.13, 7.71) and (-5.13, 7.71), +-0.02 per coordinate
        assert optset.m == 2
        (a1, b1), (a2, b2) = optset.optima
        assert abs(a1 - 5.13) < 0.02 and abs(b1 - 7.71) < 0.02
        assert abs(a2 + 5.13) < 0.02 and abs(b2 - 7.71) < 0.02

    def test_optima_mirror_each_other(self, optset):
        (a1, b1), (a2, b2) = optset.optima
        assert abs(a1 + a2) < 1e-6
        assert abs(b1 - b2) < 1e-6

    def test_error_vanishes_at_each_optimum(self, spec5, optset):
        for w in optset.optima:
            assert abs(avg_error(w, optset, spec5)) < 1e-8

    def test_restricted_box_single_optimum(self):
        spec = ModelSpec(prior_a=(0.5, 20.0))
        opt = find_optima(spec)
        assert opt.m == 1
        assert opt.optima[0].a == pytest.approx(5.1357, abs=1e-3)
        assert opt.branches[0].contains(0.6, 0.0)

    def test_oversized_merge_radius_warns_and_merges(self, spec5):
        with pytest.warns(UserWarning, match="merge radius"):
            opt = find_optima(spec5, merge_radius=15.0)
        assert opt.m == 1

    def test_invariant_under_scan_doubling(self, spec5, optset):
        doubled = find_optima(spec5, scan_points=241)
        for w, v in zip(optset.optima, doubled.optima):
            assert abs(w.a - v.a) < 1e-5
            assert abs(w.b - v.b) < 1e-5

    def test_branches_partition_prior_box(self, spec5, optset):
        rng = np.random.default_rng(3)
        a = rng.uniform(-20, 20, size=1000)
        b = rng.uniform(-20, 20, size=1000)
        membership = sum(br.contains(a, b).astype(int) for br in optset.branches)
        assert np.all(membership == 1)
        # the shared boundary belongs to the nonnegative branch
        counts = [br.contains(0.0, 0.0) for br in optset.branches]
        assert sum(counts) == 1
        owner = optset.branches[counts.index(True)]
        assert owner.a_lo == 0.0

    def test_each_branch_contains_its_optimum(self, optset):
        for w, br in zip(optset.optima, optset.branches):
            assert br.contains(w.a, w.b)

    def test_json_round_trip(self, optset, tmp_path):
        path = tmp_path / "optima.json"
        optset.save(path)
        loaded = OptimumSet.load(path)
        assert loaded == optset


class TestCovariance:
    def test_mirrored_optima_give_equal_diagonal(self, cov):
        assert cov[0, 0] == pytest.approx(cov[1, 1], abs=1e-8)

    def test_symmetric_psd(self, cov):
        validate_covariance(cov)
        eigvals = np.linalg.eigvalsh(cov)
        assert eigvals.min() >= -1e-10

    def test_matches_monte_carlo_oracle(self, spec5, optset, cov):
        # second-moment form so an L0 error cannot hide in the centering
        n = 1_000_000
        data = sample_dataset(n, 2718, spec5)
        g = np.stack(
            [
                log_model_density(data.x, data.y, w, spec5) + optset.L0
                for w in optset.optima
            ]
        )
        for i in range(2):
            for j in range(2):
                prod = g[i] * g[j]
                se = prod.std(ddof=1) / np.sqrt(n)
                assert abs(cov[i, j] - prod.mean()) < 3 * se

    def test_duplicated_optimum_collapses_entries(self, spec5, optset):
        w = optset.optima[0]
        box = Branch(
            spec5.prior_a[0], spec5.prior_a[1], spec5.prior_b[0], spec5.prior_b[1], True
        )
        dup = OptimumSet(
            optima=(w, w),
            branches=(box, box),
            lambdas=(1.0, 1.0),
            multiplicities=(1, 1),
            L0=optset.L0,
        )
        V = covariance(dup, spec5)
        assert V[0, 0] == pytest.approx(V[0, 1], abs=1e-12)
        assert V[0, 0] == pytest.approx(V[1, 1], abs=1e-12)

    def test_gap_variance_identity(self, spec5, optset, cov):
        # Var[log p1 - log p2] computed directly equals V11 + V22 - 2 V12
        from felab.population import _joint_rule, log_density_centered

        x, eps, wgt = _joint_rule(spec5, 160, 41)
        ratio = log_density_centered(x, eps, optset.optima[0], spec5, 0.0) - log_density_centered(
            x, eps, optset.optima[1], spec5, 0.0
        )
        mean = np.sum(wgt * ratio)
        var = np.sum(wgt * ratio**2) - mean**2
        assert var == pytest.approx(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1], abs=1e-8)


class TestVarianceCondition:
    def test_identical_points_hold(self, spec5, optset):
        w = optset.optima[0]
        mean, second, holds = variance_condition_check(w, w, spec5)
        assert mean == 0.0 and second == 0.0 and holds

    def test_mirrored_optima_falsify_condition(self, spec5, optset):
        mean, second, holds = variance_condition_check(*optset.optima, spec5)
        assert abs(mean) < 1e-6
        assert second > 0.1
        assert not holds

    def test_generic_pair_passes_without_judgement(self, spec5):
        mean, second, holds = variance_condition_check(
            Parameter(3.0, 5.0), Parameter(2.0, 1.0), spec5
        )
        assert abs(mean) > 1e-3
        assert second > 0.0
        assert holds

    def test_outside_box_rejected(self, spec5):
        with pytest.raises(ValueError):
            variance_condition_check(Parameter(25.0, 0.0), Parameter(0.0, 0.0), spec5)
