import numpy as np
import pytest

from app.common.errors import PathologicalTruncationError, RejectedInputError
from app.cvpm import geometry as geo
from app.cvpm.controller import Case
from app.cvpm.probability import (
    McEstimate,
    RngStream,
    TruncatedGaussianSampler,
    monte_carlo_violation,
    mvn_sample,
    sample_truncated_gaussian,
    solve_case2_sampling,
    trajectory_draws,
)

SIGMA_W = 0.2 * np.eye(2)
W = geo.from_box([-0.2, -0.2], [0.2, 0.2])
X0 = np.array([2.4, 4.0])
X_REF = np.array([1.06, 3.30])


class TestRngStream:
    def test_same_seed_and_key_repeat(self):
        a = RngStream(7).child(0).standard_normal(5)
        b = RngStream(7).child(0).standard_normal(5)
        assert np.array_equal(a, b)

    def test_children_are_independent_streams(self):
        root = RngStream(7)
        assert not np.array_equal(root.child(0).standard_normal(5), root.child(1).standard_normal(5))

    def test_split_and_counter(self):
        streams = RngStream(3).split(4)
        assert [s.key for s in streams] == [(0,), (1,), (2,), (3,)]
        s = streams[0]
        s.standard_normal((10, 2))
        assert s.counter == 20


class TestTruncatedGaussian:
    def test_samples_stay_in_support(self):
        sampler = TruncatedGaussianSampler(SIGMA_W, W, RngStream(1).child(2))
        draws = sampler.sample(RngStream(1).child(0), size=3000)
        assert draws.shape == (3000, 2)
        assert np.all(np.abs(draws) <= 0.2 + 1e-12)
        assert np.all(np.abs(draws.mean(axis=0)) < 0.01)
        assert 0.05 < sampler.acceptance_rate < 0.25

    def test_mvn_sample_moments(self):
        L = np.linalg.cholesky(np.array([[0.2, 0.05], [0.05, 0.1]]))
        draws = mvn_sample([1.0, -1.0], L, RngStream(3), size=40000)
        assert draws.shape == (40000, 2)
        assert draws.mean(axis=0) == pytest.approx([1.0, -1.0], abs=0.01)
        assert np.cov(draws.T) == pytest.approx(L @ L.T, abs=0.01)
        assert mvn_sample([1.0, -1.0], L, RngStream(3)).shape == (2,)

    def test_single_sample(self):
        w = sample_truncated_gaussian(SIGMA_W, W, RngStream(5))
        assert w.shape == (2,)
        assert geo.contains(W, w, 0.0)

    def test_pathological_truncation(self):
        tiny = geo.from_box([-1e-3, -1e-3], [1e-3, 1e-3])
        with pytest.raises(PathologicalTruncationError):
            TruncatedGaussianSampler(np.eye(2), tiny, RngStream(0))

    def test_support_must_contain_origin(self):
        shifted = geo.from_box([0.1, 0.1], [0.3, 0.3])
        with pytest.raises(RejectedInputError):
            TruncatedGaussianSampler(SIGMA_W, shifted, RngStream(0))

    def test_non_positive_definite_covariance(self):
        with pytest.raises(RejectedInputError):
            TruncatedGaussianSampler(np.diag([1.0, -1.0]), W, RngStream(0))


class TestMonteCarlo:
    def test_estimate_from_counts(self):
        est = McEstimate.from_counts(n_inside=750, n_samples=1000)
        assert est.p_hat == pytest.approx(0.25)
        assert est.std_err == pytest.approx(np.sqrt(0.25 * 0.75 / 1000))

    def test_minimum_sample_count(self, dcdc_problem):
        with pytest.raises(RejectedInputError):
            trajectory_draws(dcdc_problem, 50, RngStream(0))

    def test_common_random_numbers_are_deterministic(self, dcdc_problem):
        U = dcdc_problem.stacked_u_ref()
        a = monte_carlo_violation(dcdc_problem, X_REF, U, 2000, RngStream(11))
        b = monte_carlo_violation(dcdc_problem, X_REF, U, 2000, RngStream(11))
        assert a == b
        assert 0.0 <= a.p_hat <= 1.0

    def test_outside_state_violates_more(self, dcdc_problem):
        draws = trajectory_draws(dcdc_problem, 2000, RngStream(3))
        U = dcdc_problem.stacked_u_ref()
        near = monte_carlo_violation(dcdc_problem, X_REF, U, draws=draws)
        far = monte_carlo_violation(dcdc_problem, X0, U, draws=draws)
        assert far.p_hat >= near.p_hat

    def test_requires_rng_or_draws(self, dcdc_problem):
        with pytest.raises(RejectedInputError):
            monte_carlo_violation(dcdc_problem, X_REF, dcdc_problem.stacked_u_ref())

    @pytest.mark.slow
    def test_sampling_case2_improves_on_seed(self, dcdc_problem):
        outcome = solve_case2_sampling(dcdc_problem, X0, n_samples=2000, rng=RngStream(7).child(1))
        assert outcome.case is Case.PROBABILISTIC
        assert outcome.diagnostics["method"] == "montecarlo"
        assert outcome.p_violation <= outcome.diagnostics["initial_p_hat"]
        assert np.all(outcome.U_star >= -1e-9) and np.all(outcome.U_star <= 1.0 + 1e-9)
        assert outcome.xi_star is None
