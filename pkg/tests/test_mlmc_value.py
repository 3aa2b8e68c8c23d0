"""Randomized truncated MLMC value estimator, cost formula and truncation schedules."""
import math

import numpy as np
import pytest

from errors import CostGuardExceeded, DimensionMismatch, InfiniteCost, MissingConstant
from models import MlmcConfig, ProblemConstants, SaaConfig
from mcco_services.mlmc_value import default_rates, expected_cost, mlmc_value_estimate, truncation_schedule
from mcco_services.problems import EntropicParams, LqrParams, SyntheticParams, build_problem
from mcco_services.problems import entropic_exact_value, lqr_exact_value, synthetic_exact_value
from mcco_services.randomness import root_stream
from mcco_services.recursion import ScenarioBudget, run_mlmc_forest
from mcco_services.saa import saa_estimate


def _config(n1, rates, truncations, **kwargs):
    return MlmcConfig.from_rates(n1, list(rates), list(truncations), **kwargs)


class TestExpectedCost:
    """n_1 prod_t E[2^lambda_t] against tabulated values."""

    @pytest.mark.parametrize("M, r, expected", [(9, 0.59, 22.6084), (10, 0.58, 29.5795), (11, 0.59, 26.3283)])
    def test_three_stage_truncated(self, M, r, expected):
        assert expected_cost(_config(1, [r] * 3, [M] * 3)) == pytest.approx(expected, rel=1e-4)

    def test_three_stage_untruncated(self):
        assert expected_cost(_config(1, [0.6] * 3, [None] * 3)) == pytest.approx(27.0)

    def test_near_critical_rate(self):
        assert expected_cost(_config(1, [0.5001] * 3, [None] * 3)) == pytest.approx(1.5634e10, rel=1e-4)

    def test_two_stage_untruncated(self):
        assert expected_cost(_config(1, [0.74, 0.6], [None, None])) == pytest.approx(4.6250, rel=1e-4)

    def test_smooth_default_rates(self):
        assert expected_cost(_config(1, default_rates(3, smooth=True), [6, 5])) == pytest.approx(4.7674, abs=1e-3)

    def test_scales_with_trees(self):
        assert expected_cost(_config(10, [0.6, 0.6], [4, 4])) == pytest.approx(10 * expected_cost(_config(1, [0.6, 0.6], [4, 4])))

    def test_divergent_rate_raises(self):
        with pytest.raises(InfiniteCost):
            expected_cost(_config(1, [0.4], [None]))


class TestDefaultRates:
    def test_nonsmooth(self):
        assert default_rates(4, smooth=False) == [0.5, 0.5, 0.5]

    def test_smooth(self):
        np.testing.assert_allclose(default_rates(3, smooth=True), [1 - 2 ** -1.5, 1 - 2 ** -1.25])

    def test_single_stage(self):
        with pytest.raises(ValueError):
            default_rates(1, smooth=True)


class TestMlmcEstimate:
    """Estimator behaviour on problems with known values."""

    def test_degenerate_levels_equal_saa(self, synthetic):
        """M = 0 at every stage reproduces SAA with n = (n1, 1, 1) bit for bit."""
        mlmc = mlmc_value_estimate(synthetic, [0.0], _config(5000, [0.6, 0.6], [0, 0]), root_stream(11))
        saa = saa_estimate(synthetic, [0.0], SaaConfig(n=[5000, 1, 1]), root_stream(11))
        np.testing.assert_array_equal(mlmc.tree_values, saa.tree_values)
        assert mlmc.scenario_count == 5000

    def test_antithetic_identity(self, synthetic, stream):
        """The full child average is the mean of the even and odd halves."""
        batches = []
        mlmc_value_estimate(synthetic, [0.0], _config(300, [0.6, 0.6], [4, 4]), stream, threads=1,
                            observer=batches.append)
        assert batches
        for batch in batches:
            rows = batch.split_rows
            np.testing.assert_allclose(batch.mean_all[rows], 0.5 * (batch.mean_even + batch.mean_odd), rtol=1e-12, atol=1e-14)
            assert np.all(batch.levels[rows] > 0)

    def test_agrees_with_saa_on_affine_chain(self, linear_two_stage):
        """Both estimators are unbiased for an affine chain; means agree within 3 combined errors."""
        mlmc = mlmc_value_estimate(linear_two_stage, [1.0], _config(20_000, [0.6], [3]), root_stream(1))
        saa = saa_estimate(linear_two_stage, [1.0], SaaConfig(n=[20_000, 8]), root_stream(2))
        assert abs(mlmc.value - saa.value) < 3 * math.hypot(mlmc.stderr, saa.stderr)

    def test_synthetic_small_run(self, synthetic, stream):
        truth = synthetic_exact_value(SyntheticParams())
        report = mlmc_value_estimate(synthetic, [0.0], _config(20_000, default_rates(3, True), [6, 5]), stream)
        assert abs(report.value - truth) < 4 * report.stderr

    def test_entropic_against_closed_form(self, stream):
        params = EntropicParams(T=2, mu=1.0)
        assert entropic_exact_value(params) == pytest.approx(1.0)
        report = mlmc_value_estimate(build_problem(params), [0.0], _config(20_000, [0.6], [10]), stream)
        assert abs(report.value - 1.0) < 4 * report.stderr + 0.01

    def test_lqr_against_closed_form(self, stream):
        """Unit scalar LQR with unit disturbance variance has value 2.5."""
        params = LqrParams(T=2, noise_cov=[[1.0]])
        problem = build_problem(params)
        truth = lqr_exact_value(params)
        assert truth == pytest.approx(2.5)
        report = mlmc_value_estimate(problem, problem.reference_point, _config(20_000, [0.6], [8]), stream)
        assert abs(report.value - truth) < 4 * report.stderr + 0.005

    def test_thread_invariance(self, synthetic):
        config = _config(1000, [0.6, 0.6], [5, 5], block_size=100)
        one = mlmc_value_estimate(synthetic, [0.0], config, root_stream(3), threads=1)
        three = mlmc_value_estimate(synthetic, [0.0], config, root_stream(3), threads=3)
        np.testing.assert_array_equal(one.tree_values, three.tree_values)
        assert one.scenario_count == three.scenario_count

    def test_seed_determinism(self, synthetic):
        config = _config(500, [0.6, 0.6], [5, 5])
        a = mlmc_value_estimate(synthetic, [0.0], config, root_stream(8))
        b = mlmc_value_estimate(synthetic, [0.0], config, root_stream(8))
        np.testing.assert_array_equal(a.tree_values, b.tree_values)

    def test_empirical_cost_tracks_formula(self, synthetic, stream):
        config = _config(50_000, [0.6, 0.6], [4, 4])
        report = mlmc_value_estimate(synthetic, [0.0], config, stream)
        assert report.scenario_count / report.expected_cost == pytest.approx(1.0, rel=0.03)

    def test_divergent_rate_aborts_before_sampling(self, synthetic, stream):
        with pytest.raises(InfiniteCost):
            mlmc_value_estimate(synthetic, [0.0], _config(10, [0.4, 0.4], [None, None]), stream)

    def test_cost_guard(self, synthetic, stream):
        with pytest.raises(CostGuardExceeded):
            mlmc_value_estimate(synthetic, [0.0], _config(1000, [0.6, 0.6], [6, 6]), stream, budget=500)

    def test_expected_cost_checked_before_sampling(self, linear_two_stage):
        """n1 E[2^lambda] is about 237,500 against a budget of 5000; no tree is drawn."""
        batches = []
        config = _config(100_000, [0.6], [6], block_size=1000)
        with pytest.raises(CostGuardExceeded, match="expected"):
            mlmc_value_estimate(linear_two_stage, [1.0], config, root_stream(3), budget=5000, observer=batches.append)
        assert batches == []

    def test_level_count_must_match(self, synthetic, stream):
        with pytest.raises(DimensionMismatch):
            mlmc_value_estimate(synthetic, [0.0], _config(10, [0.6], [3]), stream)


class TestRunWideBudget:
    """The scenario budget covers the whole forest, not each block."""

    @pytest.mark.parametrize("threads", [1, 4])
    def test_stops_at_the_first_block_over_budget(self, linear_two_stage, threads):
        """100 blocks of about 2375 leaves against a budget of 5000: at most two blocks finish."""
        finished = []
        config = _config(100_000, [0.6], [6], block_size=1000)
        with pytest.raises(CostGuardExceeded):
            run_mlmc_forest(linear_two_stage, np.array([1.0]), config, root_stream(3), threads=threads, budget=5000,
                            observer=lambda batch: finished.append(batch.stage))
        assert 1 <= len(finished) <= 2

    def test_exhausted_budget_refuses_every_block(self):
        budget = ScenarioBudget(10)
        budget.charge(6, block_index=0)
        with pytest.raises(CostGuardExceeded):
            budget.charge(6, block_index=1)
        with pytest.raises(CostGuardExceeded):
            budget.check(1, block_index=2)

    def test_within_budget(self, linear_two_stage):
        config = _config(4000, [0.6], [6], block_size=1000)
        outcome = run_mlmc_forest(linear_two_stage, np.array([1.0]), config, root_stream(3), threads=2, budget=50_000)
        assert outcome.values.shape == (4000,)
        assert outcome.scenarios <= 50_000


class TestTruncationSchedule:
    """Backward recursion for the truncation points."""

    def test_smooth_three_stage(self):
        constants = ProblemConstants(S=[1.0, 1.0], L=[1.0], dims=[1, 1], mu_bar={8: 1.0})
        schedule = truncation_schedule(1.0, constants, smooth=True)
        assert schedule.truncations == [9, 1]
        np.testing.assert_allclose(schedule.rates, default_rates(3, smooth=True))

    def test_nonsmooth_two_stage(self):
        constants = ProblemConstants(L=[1.0], mu_bar={2: 1.0})
        schedule = truncation_schedule(1.0, constants, smooth=False)
        assert schedule.truncations == [1]
        assert schedule.rates == [0.5]
        assert schedule.n1 is not None and schedule.n1 >= 1

    def test_truncations_grow_as_epsilon_shrinks(self):
        constants = ProblemConstants(L=[1.0, 1.0], mu_bar={2: 1.0})
        coarse = truncation_schedule(0.5, constants, smooth=False)
        fine = truncation_schedule(0.01, constants, smooth=False)
        assert all(f >= c for f, c in zip(fine.truncations, coarse.truncations))
        assert fine.n1 > coarse.n1

    def test_schedule_to_config(self):
        constants = ProblemConstants(L=[1.0], mu_bar={2: 1.0})
        config = truncation_schedule(1.0, constants, smooth=False).to_config(n1=20)
        assert config.n1 == 20 and config.levels[0].truncation == 1

    def test_missing_smoothness(self):
        with pytest.raises(MissingConstant):
            truncation_schedule(0.1, ProblemConstants(L=[1.0], mu_bar={8: 1.0}), smooth=True)

    def test_missing_moment(self):
        with pytest.raises(MissingConstant) as info:
            truncation_schedule(0.1, ProblemConstants(L=[1.0]), smooth=False)
        assert "mu_bar[2]" in info.value.names

    def test_rate_count(self):
        with pytest.raises(ValueError):
            truncation_schedule(0.1, ProblemConstants(L=[1.0], mu_bar={2: 1.0}), smooth=False, rates=[0.6, 0.6])
