"""Scenario-forest SAA and its sample-size schedules."""
import numpy as np
import pytest

from errors import DimensionMismatch, MissingConstant
from models import ProblemConstants, SaaConfig
from mcco_services.problems import LinearParams, build_problem
from mcco_services.randomness import root_stream
from mcco_services.saa import saa_estimate, saa_schedule


class TestSaaEstimate:
    """Nested conditional sample means over a forest."""

    def test_noiseless_chain_is_exact(self):
        """With zero noise every tree returns F(x) = 30 x."""
        problem = build_problem(LinearParams(noise_sd=0.0))
        report = saa_estimate(problem, [0.5], SaaConfig(n=[10, 3, 2]), root_stream(1))
        np.testing.assert_allclose(report.tree_values, np.full(10, 15.0))
        assert report.value == pytest.approx(15.0)

    def test_unbiased_on_affine_chain(self, linear_chain, stream):
        report = saa_estimate(linear_chain, [1.0], SaaConfig(n=[4000, 4, 4]), stream)
        assert abs(report.value - 30.0) < 4 * report.stderr

    def test_scenario_count(self, linear_chain, stream):
        report = saa_estimate(linear_chain, [1.0], SaaConfig(n=[50, 3, 4]), stream)
        assert report.scenario_count == 600
        assert report.expected_cost == 600
        assert report.tree_values.shape == (50,)
        assert report.estimator == "saa"

    def test_thread_invariance(self, synthetic):
        """Small blocks on one or four threads give identical tree values."""
        config = SaaConfig(n=[500, 4, 3], block_size=37)
        one = saa_estimate(synthetic, [0.0], config, root_stream(9), threads=1)
        four = saa_estimate(synthetic, [0.0], config, root_stream(9), threads=4)
        np.testing.assert_array_equal(one.tree_values, four.tree_values)

    def test_seed_determinism(self, synthetic):
        config = SaaConfig(n=[200, 3, 3])
        a = saa_estimate(synthetic, [0.0], config, root_stream(4))
        b = saa_estimate(synthetic, [0.0], config, root_stream(4))
        c = saa_estimate(synthetic, [0.0], config, root_stream(5))
        np.testing.assert_array_equal(a.tree_values, b.tree_values)
        assert not np.array_equal(a.tree_values, c.tree_values)

    def test_branching_length_must_match(self, linear_chain, stream):
        with pytest.raises(ValueError):
            saa_estimate(linear_chain, [1.0], SaaConfig(n=[10, 2]), stream)

    def test_decision_dimension(self, linear_chain, stream):
        with pytest.raises(DimensionMismatch):
            saa_estimate(linear_chain, [1.0, 2.0], SaaConfig(n=[10, 2, 2]), stream)

    def test_observer_sees_grouped_stages(self, linear_chain, stream):
        """Stages arrive leaf first; stage t holds prod(n[:t]) rows."""
        seen = []
        saa_estimate(linear_chain, [1.0], SaaConfig(n=[5, 3, 2]), stream, threads=1,
                     observer=lambda t, values: seen.append((t, values.shape)))
        assert seen == [(3, (30, 1)), (2, (15, 1)), (1, (5, 1))]

    def test_branching_factors_positive(self):
        with pytest.raises(ValueError):
            SaaConfig(n=[10, 0])


class TestLeafBudget:
    """No stage batch of a forest holds more rows than the leaf budget."""

    @staticmethod
    def _batches(problem, x, config, seed=1):
        seen = []
        report = saa_estimate(problem, x, config, root_stream(seed), threads=1,
                              observer=lambda t, values: seen.append((t, values.shape[0])))
        return report, seen

    def test_tree_larger_than_budget(self, linear_chain):
        """1200 leaves per tree against a budget of 100."""
        report, seen = self._batches(linear_chain, [1.0], SaaConfig(n=[2, 40, 30], leaf_budget=100))
        assert max(rows for _, rows in seen) <= 100
        assert sum(rows for t, rows in seen if t == 3) == 2400
        assert sum(rows for t, rows in seen if t == 2) == 80
        assert report.scenario_count == 2400
        assert report.tree_values.shape == (2,)

    def test_single_node_with_too_many_children(self, linear_two_stage):
        report, seen = self._batches(linear_two_stage, [1.0], SaaConfig(n=[3, 500], leaf_budget=64))
        assert max(rows for _, rows in seen) <= 64
        assert sum(rows for t, rows in seen if t == 2) == 1500
        assert report.scenario_count == 1500

    def test_chunked_forest_is_exact_without_noise(self):
        problem = build_problem(LinearParams(noise_sd=0.0))
        report = saa_estimate(problem, [0.5], SaaConfig(n=[7, 9, 11], leaf_budget=10), root_stream(1))
        np.testing.assert_allclose(report.tree_values, np.full(7, 15.0))

    def test_chunked_forest_is_unbiased(self, linear_chain):
        report = saa_estimate(linear_chain, [1.0], SaaConfig(n=[400, 6, 5], leaf_budget=12), root_stream(2))
        assert abs(report.value - 30.0) < 4 * report.stderr

    def test_default_budget_from_settings(self, monkeypatch):
        from config import settings
        monkeypatch.setattr(settings, "MCCO_LEAF_BUDGET", 50)
        config = SaaConfig(n=[10, 5, 5])
        assert config.resolved_leaf_budget() == 50
        assert config.resolved_block_size() == 2


class TestSaaSchedule:
    """Stage-wise sample sizes for a target accuracy."""

    def test_first_stage_size(self):
        """n_1 = ceil(1 + 2 sqrt(2) sigma / eps + 2 sigma^2 / eps^2) = 6 for unit values."""
        config = saa_schedule(1.0, ProblemConstants(sigma=[1.0]), smooth=False)
        assert config.n == [6]

    def test_nonsmooth_inner_size(self):
        """(sqrt(2) L sigma (T - 1) / eps)^2 = 200 at eps = 0.1."""
        constants = ProblemConstants(sigma=[1.0, 1.0], L=[1.0])
        config = saa_schedule(0.1, constants, smooth=False)
        assert config.n[1] == 200

    def test_smooth_inner_size(self):
        """sqrt(2) S sigma^2 (T - 1) / (2 eps) = 4 sqrt(2), rounded up to 6."""
        constants = ProblemConstants(sigma=[1.0, 1.0], S=[4.0])
        config = saa_schedule(0.5, constants, smooth=True)
        assert config.n == [15, 6]

    def test_missing_constants_named(self):
        with pytest.raises(MissingConstant) as info:
            saa_schedule(0.1, ProblemConstants(sigma=[1.0, 1.0]), smooth=False)
        assert "L[1..1]" in info.value.names

    def test_highprob_needs_beta(self):
        constants = ProblemConstants(sigma=[1.0], L=[1.0], zeta2=1.0, D_X=1.0, d=1)
        with pytest.raises(ValueError):
            saa_schedule(0.1, constants, smooth=False, mode="highprob")

    def test_highprob_first_stage(self):
        """ceil(128 zeta^2 / eps^2 (d log(ceil(8 L D / eps + 1)) + log(4 / beta)))."""
        constants = ProblemConstants(sigma=[1.0], L=[1.0], zeta2=1.0, D_X=1.0, d=1)
        config = saa_schedule(1.0, constants, smooth=False, mode="highprob", beta=0.5)
        expected = int(np.ceil(128.0 * (np.log(9.0) + np.log(8.0))))
        assert config.n == [expected]

    def test_epsilon_positive(self):
        with pytest.raises(ValueError):
            saa_schedule(0.0, ProblemConstants(sigma=[1.0]), smooth=False)
