"""Projected SGD, block-wise Adam and the stepsize formulas."""
import numpy as np
import pytest

from errors import NonFinite
from models import AdamBlock, AdamConfig, GradientReport, MlmcConfig, ProblemConstants, SgdConfig
from mcco_services.mlmc_gradient import mlmc_gradient_estimate
from mcco_services.optimizer import (
    adam_run,
    bandit_adam_config,
    clip_norm,
    inverse_softplus,
    projected_sgd,
    smoothness_sum,
    softplus,
    stationary_iterations,
    stationary_stepsize,
)
from mcco_services.randomness import root_stream


def quadratic_oracle(target, scenarios=10):
    """Exact gradient of |x - target|^2."""
    target = np.asarray(target, dtype=float)

    def oracle(x, stream):
        return GradientReport(gradient=2.0 * (x - target), scenario_count=scenarios, n1=1)
    return oracle


class TestProjectedSgd:
    """x_{k+1} = Proj(x_k - eta G(x_k))."""

    def test_converges_on_quadratic(self, linear_chain, stream):
        result = projected_sgd(linear_chain, [5.0], SgdConfig(K=200, eta=0.1), quadratic_oracle([2.0]), stream)
        assert result.trajectory.shape == (201, 1)
        np.testing.assert_allclose(result.trajectory[-1], [2.0], atol=1e-8)

    def test_output_is_a_visited_iterate(self, linear_chain, stream):
        result = projected_sgd(linear_chain, [5.0], SgdConfig(K=20, eta=0.1), quadratic_oracle([2.0]), stream)
        assert any(np.array_equal(result.output, point) for point in result.trajectory[:20])

    def test_projection_keeps_iterates_feasible(self, linear_chain, stream):
        """Target outside the box [-10, 10]; iterates stop at the bound."""
        result = projected_sgd(linear_chain, [0.0], SgdConfig(K=50, eta=0.4), quadratic_oracle([50.0]), stream)
        assert np.all(np.abs(result.trajectory) <= 10.0)
        np.testing.assert_allclose(result.trajectory[-1], [10.0])

    def test_cumulative_scenarios(self, linear_chain, stream):
        result = projected_sgd(linear_chain, [0.0], SgdConfig(K=5, eta=0.1), quadratic_oracle([1.0], scenarios=7), stream)
        assert result.scenario_counts == [7, 14, 21, 28, 35]
        assert result.total_scenarios == 35

    def test_infeasible_start(self, linear_chain, stream):
        with pytest.raises(ValueError):
            projected_sgd(linear_chain, [11.0], SgdConfig(K=5, eta=0.1), quadratic_oracle([1.0]), stream)

    def test_inverse_sqrt_schedule(self):
        config = SgdConfig(K=10, eta=2.0, schedule="inverse_sqrt")
        assert config.stepsize(4) == pytest.approx(1.0)

    def test_oracle_failure_propagates(self, linear_chain, stream):
        def failing(x, st):
            raise NonFinite("overflow")
        with pytest.raises(NonFinite):
            projected_sgd(linear_chain, [0.0], SgdConfig(K=3, eta=0.1), failing, stream)

    def test_with_mlmc_gradients(self, linear_chain):
        """F(x) = 30 x on [-10, 10] is minimized at the lower bound."""
        config = MlmcConfig.from_rates(1000, [0.6, 0.6], [3, 3])

        def oracle(x, st):
            return mlmc_gradient_estimate(linear_chain, x, config, st)

        result = projected_sgd(linear_chain, [1.0], SgdConfig(K=20, eta=0.1), oracle, root_stream(3))
        np.testing.assert_allclose(result.trajectory[-1], [-10.0])
        assert result.total_scenarios > 0

    def test_same_seed_same_trajectory(self, linear_chain):
        config = MlmcConfig.from_rates(200, [0.6, 0.6], [3, 3])

        def oracle(x, st):
            return mlmc_gradient_estimate(linear_chain, x, config, st)

        a = projected_sgd(linear_chain, [1.0], SgdConfig(K=5, eta=0.01), oracle, root_stream(4))
        b = projected_sgd(linear_chain, [1.0], SgdConfig(K=5, eta=0.01), oracle, root_stream(4))
        np.testing.assert_array_equal(a.trajectory, b.trajectory)


class TestAdam:
    """Adam with per-block clipping, softplus coordinates and skipped non-finite blocks."""

    def test_converges_on_quadratic(self, linear_chain, stream):
        config = AdamConfig(iterations=500, blocks=[AdamBlock(name="x", indices=[0], lr=0.05)])
        result = adam_run(linear_chain, [5.0], config, quadratic_oracle([2.0]), stream)
        np.testing.assert_allclose(result.output, [2.0], atol=0.1)
        assert result.trajectory.shape == (501, 1)

    def test_softplus_block_stays_positive(self, linear_chain, stream):
        """A softplus coordinate pushed toward -5 stays strictly positive."""
        config = AdamConfig(iterations=200, blocks=[AdamBlock(name="x", indices=[0], lr=0.1, softplus=True)])
        result = adam_run(linear_chain, [1.0], config, quadratic_oracle([-5.0]), stream)
        assert np.all(result.trajectory[:, 0] > 0.0)

    def test_nonfinite_block_skipped(self, linear_chain, stream):
        def oracle(x, st):
            return GradientReport(gradient=np.array([np.nan]), scenario_count=1)

        config = AdamConfig(iterations=4, blocks=[AdamBlock(name="x", indices=[0], lr=0.1)])
        result = adam_run(linear_chain, [1.0], config, oracle, stream)
        assert result.skipped_updates == 4
        np.testing.assert_array_equal(result.output, [1.0])

    def test_block_index_out_of_range(self, linear_chain, stream):
        config = AdamConfig(iterations=1, blocks=[AdamBlock(name="x", indices=[3], lr=0.1)])
        with pytest.raises(ValueError):
            adam_run(linear_chain, [1.0], config, quadratic_oracle([0.0]), stream)

    def test_bandit_blocks(self):
        config = bandit_adam_config(iterations=10)
        names = [block.name for block in config.blocks]
        assert names == ["theta1", "theta2", "lambda"]
        assert config.blocks[2].softplus and config.blocks[2].clip == 100.0
        assert config.blocks[0].lr == pytest.approx(0.025) and config.blocks[2].lr == pytest.approx(0.75)


class TestHelpers:
    def test_softplus_inverse(self):
        x = np.array([1e-3, 0.5, 3.0, 40.0])
        np.testing.assert_allclose(softplus(inverse_softplus(x)), x, rtol=1e-10)

    def test_clip_norm(self):
        np.testing.assert_allclose(clip_norm(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
        np.testing.assert_array_equal(clip_norm(np.array([0.3, 0.4]), 1.0), [0.3, 0.4])


class TestStepsizeFormulas:
    """Constant stepsize and iteration count from the stationarity bound."""

    def test_stepsize(self):
        assert stationary_stepsize(2.0, 4, 16) == pytest.approx(1.0)

    def test_iterations(self):
        assert stationary_iterations(1.0, 1, 1.0, gap=0.5, smoothness=1.0) == 4

    def test_smoothness_sum(self):
        """L = (1, 2), S = (3, 4): 1 * 3 * 2^2 + 1 * 4 * 1 = 16."""
        assert smoothness_sum(ProblemConstants(L=[1.0, 2.0], S=[3.0, 4.0])) == pytest.approx(16.0)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            stationary_stepsize(0.0, 1, 1)
        with pytest.raises(ValueError):
            stationary_iterations(1.0, 1, 0.0, gap=1.0, smoothness=1.0)
