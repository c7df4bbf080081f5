"""
Tests for the online quantile learner: losses, schedules, alignment and updates.
"""

import math

import numpy as np
import pytest

from online_quantile.basis import SQRT2, BasisSpec, eval_basis_vector
from online_quantile.errors import DomainError, LayoutMismatchError
from online_quantile.learner import (
    CoefficientState,
    EstimatorConfig,
    MiniBatch,
    Mode,
    OnlineQuantileEstimator,
    PrequentialLoss,
    Sample,
    advisory_step_constant,
    align_dimension,
    batch_gradient,
    pinball_loss,
    predict,
    predict_many,
    step_size,
    streamed_pinball,
    subgradient_scalar,
    sup_norm_on_grid,
    truncation_dim,
    update_batch,
    update_single,
)
from online_quantile.projection import l1_project_oracle


def random_samples(rng, n, p, noise=1.0):
    X = rng.random((n, p))
    y = np.sin(2 * np.pi * X[:, 0]) + noise * rng.standard_normal(n)
    return [Sample(x=X[i], y=float(y[i])) for i in range(n)]


class TestEstimatorConfig:
    """Test cases for EstimatorConfig validation and digest."""

    @pytest.mark.parametrize("field,value", [("tau", 0.0), ("tau", 1.0), ("R", 0.0), ("A", -1.0), ("s", 0.5), ("p", 0)])
    def test_invalid_values(self, field, value):
        """Test EstimatorConfig validation."""
        kwargs = dict(tau=0.5, R=1.0, A=1.0, s=2.0, p=1)
        kwargs[field] = value
        with pytest.raises(ValueError):
            EstimatorConfig(**kwargs)

    def test_default_basis(self):
        """Test the default basis matches p."""
        config = EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=2.0, p=3)
        assert config.basis == BasisSpec(dims_p=3)
        assert config.sup_norm_bound == pytest.approx(SQRT2)

    def test_basis_dimension_mismatch(self):
        """Test a basis with another covariate count."""
        with pytest.raises(LayoutMismatchError):
            EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=2.0, p=3, basis=BasisSpec(dims_p=2))

    def test_dict_round_trip(self, batch_config):
        """Test EstimatorConfig serialization round trip."""
        assert EstimatorConfig.from_dict(batch_config.to_dict()) == batch_config

    def test_digest_ignores_seed(self):
        """Test the digest does not depend on the seed."""
        a = EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=2.0, p=1, seed=1)
        b = EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=2.0, p=1, seed=2)
        assert a.digest() == b.digest()

    def test_digest_tracks_tau(self):
        """Test the digest changes with tau."""
        a = EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=2.0, p=1)
        b = EstimatorConfig(tau=0.25, R=1.0, A=1.0, s=2.0, p=1)
        assert a.digest() != b.digest()

    def test_advisory_step_constant(self):
        """Test 1/(τ(1−τ))."""
        assert advisory_step_constant(0.5) == pytest.approx(4.0)


class TestSampleAndState:
    """Test cases for Sample, MiniBatch and CoefficientState."""

    def test_sample_outside_unit_cube(self):
        """Test a sample outside the unit cube."""
        with pytest.raises(DomainError):
            Sample(x=np.array([1.5]), y=0.0)

    def test_sample_non_finite_response(self):
        """Test a non-finite response."""
        with pytest.raises(DomainError):
            Sample(x=np.array([0.5]), y=float("nan"))

    def test_empty_batch(self):
        """Test an empty mini-batch."""
        with pytest.raises(ValueError):
            MiniBatch([])

    def test_batch_mixed_dimensions(self):
        """Test a mini-batch mixing covariate counts."""
        with pytest.raises(DomainError):
            MiniBatch([Sample(x=np.array([0.1]), y=0.0), Sample(x=np.array([0.1, 0.2]), y=0.0)])

    def test_zero_state(self):
        """Test CoefficientState.zeros."""
        state = CoefficientState.zeros(3)
        assert state.theta.shape == (4,)
        assert (state.J, state.t, state.N) == (1, 0, 0)
        assert state.l1_norm == 0.0

    def test_bad_layout(self):
        """Test a θ length that does not match p and J."""
        with pytest.raises(LayoutMismatchError):
            CoefficientState(theta=np.zeros(4), J=2, t=0, N=0, p=2)

    def test_block_view_is_read_only(self):
        """Test block views cannot be written."""
        state = CoefficientState(theta=np.arange(7.0), J=3, t=0, N=0, p=2)
        np.testing.assert_array_equal(state.block(1), [4.0, 5.0, 6.0])
        with pytest.raises(ValueError):
            state.block(0)[0] = 1.0

    def test_snapshot_is_independent(self):
        """Test snapshots do not share θ."""
        state = CoefficientState(theta=np.ones(3), J=1, t=1, N=1, p=2)
        copy = state.snapshot()
        state.theta[0] = 5.0
        assert copy.theta[0] == 1.0


class TestLossAndSubgradient:
    """Test cases for the pinball loss and its subgradient scalar."""

    @pytest.mark.parametrize("tau,u,expected", [(0.5, 1.0, 0.5), (0.5, 0.0, 0.0), (0.9, -1.0, 0.1)])
    def test_pinball_loss(self, tau, u, expected):
        """Test pinball loss values."""
        assert pinball_loss(tau, u) == pytest.approx(expected)

    def test_pinball_loss_nonnegative(self, rng):
        """Test pinball loss is nonnegative."""
        u = rng.standard_normal(100)
        assert np.all(pinball_loss(0.3, u) >= 0)

    @pytest.mark.parametrize("tau,y,yhat,expected", [(0.5, 2.0, 1.0, 0.5), (0.9, 0.0, 1.0, -0.1), (0.3, 1.0, 1.0, -0.7)])
    def test_subgradient_scalar(self, tau, y, yhat, expected):
        """Test subgradient values including the tie."""
        assert subgradient_scalar(tau, y, yhat) == pytest.approx(expected)


class TestSchedules:
    """Test cases for step size and truncation dimension."""

    def test_single_sample_step(self):
        """Test γ = A/t."""
        config = EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=2.0, p=1)
        assert step_size(config, 4) == pytest.approx(0.25)

    def test_mini_batch_step(self):
        """Test γ = A·n/N."""
        config = EstimatorConfig(tau=0.5, R=1.0, A=2.0, s=2.0, p=1, mode=Mode.MINI_BATCH)
        assert step_size(config, 3, n_t=10, N_t=100) == pytest.approx(0.2)

    def test_mini_batch_first_step_is_A(self):
        """Test mini batch first step is A."""
        config = EstimatorConfig(tau=0.5, R=1.0, A=2.0, s=2.0, p=1, mode=Mode.MINI_BATCH)
        assert step_size(config, 1, n_t=7, N_t=7) == 2.0

    def test_mini_batch_needs_cumulative_count(self, batch_config):
        """Test mini-batch step size without N."""
        with pytest.raises(ValueError):
            step_size(batch_config, 1, n_t=1)

    @pytest.mark.parametrize("t,expected", [(1, 1), (32, 2), (33, 3), (100, 3), (243, 3), (244, 4)])
    def test_truncation_dim(self, t, expected):
        """Test J at small t."""
        config = EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=2.0, p=1)
        assert truncation_dim(config, t) == expected

    @pytest.mark.parametrize(
        "s,t,expected",
        [(2.0, 47 ** 5, 47), (2.0, 47 ** 5 + 1, 48), (2.0, 10 ** 15, 1000), (2.0, 10 ** 15 + 1, 1001),
         (1.5, 81, 3), (1.5, 82, 4), (1.25, 128, 4), (1.25, 129, 5)],
    )
    def test_truncation_dim_at_and_above_exact_powers(self, s, t, expected):
        """Test that J equals the exact root at powers and the next integer one past them."""
        config = EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=s, p=1)
        assert truncation_dim(config, t) == expected

    def test_truncation_dim_monotone(self, single_config):
        """Test J never decreases."""
        values = [truncation_dim(single_config, t) for t in range(1, 5000)]
        assert all(b >= a for a, b in zip(values, values[1:]))


class TestAlignDimension:
    """Test cases for block-preserving zero padding."""

    def test_noop_returns_same_state(self):
        """Test alignment to the current J."""
        state = CoefficientState(theta=np.arange(5.0), J=2, t=3, N=3, p=2)
        assert align_dimension(state, 2) is state

    def test_two_blocks(self):
        """Test alignment of two blocks."""
        state = CoefficientState(theta=np.array([1.0, 2.0, 3.0]), J=1, t=0, N=0, p=2)
        aligned = align_dimension(state, 2)
        np.testing.assert_array_equal(aligned.theta, [1.0, 2.0, 0.0, 3.0, 0.0])
        assert aligned.J == 2

    def test_one_block(self):
        """Test alignment of one block."""
        state = CoefficientState(theta=np.array([1.0, 2.0]), J=1, t=0, N=0, p=1)
        np.testing.assert_array_equal(align_dimension(state, 3).theta, [1.0, 2.0, 0.0, 0.0])

    def test_prediction_unchanged(self, rng):
        """Test alignment keeps predictions."""
        state = CoefficientState(theta=rng.standard_normal(7), J=3, t=0, N=0, p=2)
        basis = BasisSpec(dims_p=2)
        x = rng.random(2)
        assert predict(align_dimension(state, 6), basis, x) == pytest.approx(predict(state, basis, x), abs=1e-12)

    def test_shrinking_rejected(self):
        """Test alignment to a smaller J."""
        state = CoefficientState(theta=np.zeros(5), J=2, t=0, N=0, p=2)
        with pytest.raises(ValueError):
            align_dimension(state, 1)


class TestPredict:
    """Test cases for prediction."""

    def test_zero_state(self):
        """Test prediction of the zero state."""
        assert predict(CoefficientState.zeros(2), BasisSpec(dims_p=2), np.array([0.3, 0.9])) == 0.0

    def test_single_sine(self):
        """Test prediction with one sine coefficient."""
        state = CoefficientState(theta=np.array([0.0, 1.0]), J=1, t=0, N=0, p=1)
        assert predict(state, BasisSpec(dims_p=1), np.array([0.25])) == pytest.approx(SQRT2)

    def test_intercept_only(self):
        """Test prediction with only an intercept."""
        state = CoefficientState(theta=np.array([2.0, 0.0]), J=1, t=0, N=0, p=1)
        assert predict(state, BasisSpec(dims_p=1), np.array([0.7])) == pytest.approx(2.0)

    def test_layout_mismatch(self):
        """Test prediction with a mismatching basis."""
        with pytest.raises(LayoutMismatchError):
            predict(CoefficientState.zeros(2), BasisSpec(dims_p=3), np.array([0.1, 0.2, 0.3]))

    def test_predict_many_matches_predict(self, rng):
        """Test vectorized prediction against single prediction."""
        state = CoefficientState(theta=rng.standard_normal(9), J=4, t=0, N=0, p=2)
        basis = BasisSpec(dims_p=2)
        X = rng.random((20, 2))
        expected = [predict(state, basis, x) for x in X]
        np.testing.assert_allclose(predict_many(state, basis, X), expected, atol=1e-13)

    def test_sup_norm_on_grid(self):
        """Test grid sup-norm of a known state."""
        state = CoefficientState(theta=np.array([0.5, 1.0]), J=1, t=0, N=0, p=1)
        grid = np.linspace(0.0, 1.0, 401).reshape(-1, 1)
        assert sup_norm_on_grid(state, BasisSpec(dims_p=1), grid) == pytest.approx(0.5 + SQRT2)


class TestUpdateSingle:
    """Test cases for the single-sample update."""

    @pytest.fixture
    def unit_config(self):
        return EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=2.0, p=1)

    def test_first_step_projects(self, unit_config):
        """Test the first step lands on the ball."""
        state = update_single(CoefficientState.zeros(1), unit_config, Sample(x=np.array([0.25]), y=5.0))
        assert (state.t, state.N, state.J) == (1, 1, 1)
        np.testing.assert_allclose(state.theta, [0.39645, 0.60355], atol=1e-5)
        np.testing.assert_allclose(state.theta, l1_project_oracle(np.array([0.5, 0.5 * SQRT2]), 1.0), atol=1e-12)
        assert state.l1_norm == pytest.approx(1.0)

    def test_interior_step_is_plain_gradient_step(self):
        """Test a step that stays inside the ball."""
        config = EstimatorConfig(tau=0.5, R=10.0, A=1.0, s=2.0, p=1)
        state = update_single(CoefficientState.zeros(1), config, Sample(x=np.array([0.25]), y=5.0))
        np.testing.assert_allclose(state.theta, [0.5, 0.5 * SQRT2])

    def test_tie_uses_tau_minus_one(self):
        """Test a tie y = ŷ uses τ − 1."""
        config = EstimatorConfig(tau=0.3, R=10.0, A=1.0, s=2.0, p=1)
        state = update_single(CoefficientState.zeros(1), config, Sample(x=np.array([0.25]), y=0.0))
        np.testing.assert_allclose(state.theta, [-0.7, -0.7 * SQRT2])

    def test_input_state_not_modified(self, unit_config):
        """Test the input state is left untouched."""
        state = CoefficientState.zeros(1)
        update_single(state, unit_config, Sample(x=np.array([0.25]), y=5.0))
        np.testing.assert_array_equal(state.theta, [0.0, 0.0])
        assert state.t == 0

    def test_wrong_dimension_consumes_no_step(self, single_config):
        """Test a rejected sample does not advance t."""
        estimator = OnlineQuantileEstimator(single_config)
        with pytest.raises(DomainError):
            estimator.partial_fit(Sample(x=np.array([0.5]), y=1.0))
        assert estimator.state.t == 0

    def test_wrong_mode(self, batch_config):
        """Test update_single with a mini-batch config."""
        with pytest.raises(ValueError):
            update_single(CoefficientState.zeros(2), batch_config, Sample(x=np.array([0.1, 0.2]), y=0.0))

    def test_dimension_grows_with_schedule(self, single_config, rng):
        """Test θ grows with the truncation schedule."""
        estimator = OnlineQuantileEstimator(single_config)
        for t, sample in enumerate(random_samples(rng, 300, 2), start=1):
            estimator.partial_fit(sample)
            assert estimator.state.J == truncation_dim(single_config, t)
            assert estimator.state.theta.shape == (1 + 2 * estimator.state.J,)

    def test_feasibility_along_a_stream(self, single_config, rng):
        """Test ℓ1 feasibility after every update."""
        estimator = OnlineQuantileEstimator(single_config)
        grid = np.random.default_rng(1).random((200, 2))
        for sample in random_samples(rng, 2000, 2, noise=5.0):
            estimator.partial_fit(sample)
            assert estimator.state.l1_norm <= single_config.R + 1e-9
        bound = single_config.sup_norm_bound + 1e-6
        assert sup_norm_on_grid(estimator.state, single_config.basis, grid) <= bound

    @pytest.mark.slow
    def test_feasibility_long_stream(self):
        """Test ℓ1 and sup-norm bounds on a long stream."""
        rng = np.random.default_rng(3)
        config = EstimatorConfig(tau=0.9, R=2.0, A=10.0, s=1.0, p=3)
        estimator = OnlineQuantileEstimator(config)
        grid = rng.random((500, 3))
        for i, sample in enumerate(random_samples(rng, 100_000, 3, noise=3.0)):
            estimator.partial_fit(sample)
            assert estimator.state.l1_norm <= config.R + 1e-9
            if i % 10_000 == 0:
                assert sup_norm_on_grid(estimator.state, config.basis, grid) <= SQRT2 * config.R + 1e-6


class TestUpdateBatch:
    """Test cases for the mini-batch update."""

    def test_size_one_batches_match_single_sample(self, single_config, batch_config, rng):
        """Test batches of one reproduce single-sample updates bit for bit."""
        single = CoefficientState.zeros(2)
        batched = CoefficientState.zeros(2)
        for sample in random_samples(rng, 10_000, 2):
            single = update_single(single, single_config, sample)
            batched = update_batch(batched, batch_config, MiniBatch([sample]))
            assert (single.t, single.N, single.J) == (batched.t, batched.N, batched.J)
        np.testing.assert_array_equal(single.theta, batched.theta)

    def test_duplicate_samples_match_single_copy(self, batch_config, rng):
        """Test two copies of a sample give the single-copy step exactly."""
        sample = random_samples(rng, 1, 2)[0]
        # J = 3 covers the schedule at N = 1 and N = 2; γ = A·n/N is A in both first steps
        start = CoefficientState(theta=np.zeros(7), J=3, t=0, N=0, p=2)
        one = update_batch(start, batch_config, MiniBatch([sample]))
        two = update_batch(start, batch_config, MiniBatch([sample, sample]))
        np.testing.assert_array_equal(one.theta, two.theta)

    def test_repeated_samples_match_up_to_rounding(self, batch_config, rng):
        """Test that three copies of a sample give the single-copy step up to summation rounding."""
        sample = random_samples(rng, 1, 2)[0]
        start = CoefficientState(theta=np.zeros(9), J=4, t=0, N=0, p=2)
        one = update_batch(start, batch_config, MiniBatch([sample]))
        three = update_batch(start, batch_config, MiniBatch([sample, sample, sample]))
        np.testing.assert_allclose(three.theta, one.theta, rtol=1e-12, atol=1e-12)

    def test_opposite_signs_average(self):
        """Test averaging of opposite subgradients."""
        config = EstimatorConfig(tau=0.25, R=10.0, A=1.0, s=2.0, p=1, mode=Mode.MINI_BATCH)
        state = CoefficientState.zeros(1)
        x = np.array([0.25])
        direction, yhats = batch_gradient(state, config.basis, config.tau, [Sample(x=x, y=1.0), Sample(x=x, y=-1.0)])
        np.testing.assert_allclose(direction, (0.25 - 0.5) * eval_basis_vector(config.basis, 1, x))
        assert yhats == [0.0, 0.0]

    def test_counters(self, batch_config, rng):
        """Test t and N after a mini-batch."""
        state = update_batch(CoefficientState.zeros(2), batch_config, MiniBatch(random_samples(rng, 16, 2)))
        state = update_batch(state, batch_config, MiniBatch(random_samples(rng, 16, 2)))
        assert (state.t, state.N) == (2, 32)
        assert state.J == truncation_dim(batch_config, 32)

    def test_batch_predictions_use_pre_update_state(self, batch_config, rng):
        """Test every batch prediction uses the pre-update θ."""
        estimator = OnlineQuantileEstimator(batch_config)
        yhats = estimator.partial_fit_batch(MiniBatch(random_samples(rng, 5, 2)))
        assert yhats == [0.0] * 5


class TestPrequentialLoss:
    """Test cases for the streamed pinball loss."""

    def test_empty(self):
        """Test an empty prequential loss."""
        assert streamed_pinball(PrequentialLoss()) is None

    def test_first_sample_against_zero_state(self):
        """Test the first loss is scored against the zero state."""
        config = EstimatorConfig(tau=0.5, R=1.0, A=1.0, s=2.0, p=1)
        estimator = OnlineQuantileEstimator(config)
        estimator.partial_fit(Sample(x=np.array([0.3]), y=1.0))
        assert estimator.streamed_pinball == pytest.approx(0.5)

    def test_constant_stream_mean_decreases(self):
        """Test the running loss decreases on a constant stream."""
        config = EstimatorConfig(tau=0.5, R=2.0, A=1.0, s=2.0, p=1)
        estimator = OnlineQuantileEstimator(config)
        rng = np.random.default_rng(0)
        means = []
        for i in range(4000):
            estimator.partial_fit(Sample(x=rng.random(1), y=1.0))
            if i % 1000 == 999:
                means.append(estimator.streamed_pinball)
        assert means[-1] <= means[0]
        assert estimator.prequential.count == 4000


class TestOnlineQuantileEstimator:
    """Test cases for the estimator owner object."""

    def test_fit_stream_single(self, single_config, rng):
        """Test fit_stream in single-sample mode."""
        samples = random_samples(rng, 50, 2)
        estimator = OnlineQuantileEstimator(single_config).fit_stream(samples)
        assert estimator.state.t == 50

    def test_fit_stream_batches_with_remainder(self, batch_config, rng):
        """Test fit_stream with a short final batch."""
        estimator = OnlineQuantileEstimator(batch_config).fit_stream(random_samples(rng, 50, 2), batch_size=16)
        assert (estimator.state.t, estimator.state.N) == (4, 50)

    def test_summary(self, single_config):
        """Test summary of an untrained estimator."""
        summary = OnlineQuantileEstimator(single_config).summary()
        assert summary == {"t": 0, "N": 0, "J": 1, "l1_norm": 0.0, "streamed_pinball": None}

    def test_resident_state_tracks_schedule(self, single_config, rng):
        """Test θ length follows the schedule."""
        estimator = OnlineQuantileEstimator(single_config)
        for sample in random_samples(rng, 1000, 2):
            estimator.partial_fit(sample)
        J = truncation_dim(single_config, 1000)
        assert estimator.state.theta.shape == (1 + 2 * J,)
        assert J == math.ceil(1000 ** 0.2)


@pytest.mark.slow
class TestDescentSanity:
    """Long-run behaviour on a constant median."""

    def test_intercept_recovers_constant_median(self):
        """Test that θ₀ ends within 0.05 of c after 10^5 steps, median over 20 seeds."""
        c = 0.7
        config = EstimatorConfig(tau=0.5, R=3.0, A=advisory_step_constant(0.5), s=2.0, p=1)
        gaps = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.random((100_000, 1))
            y = c + rng.standard_normal(100_000)
            estimator = OnlineQuantileEstimator(config)
            for i in range(100_000):
                estimator.partial_fit(Sample(x=X[i], y=float(y[i])))
            gaps.append(abs(estimator.state.intercept - c))
        assert float(np.median(gaps)) < 0.05
