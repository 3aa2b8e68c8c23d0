"""Coupled MLMC gradient estimator and the admissible rate windows."""
import logging
import math

import numpy as np
import pytest

from errors import CostGuardExceeded, DimensionMismatch, EmptyWindow, NotDifferentiable
from models import MlmcConfig
from mcco_services.mlmc_gradient import grad_rate_window, independent_expected_cost, mlmc_gradient_estimate
from mcco_services.mlmc_value import expected_cost, mlmc_value_estimate
from mcco_services.problems import LinearParams, StoppingParams, build_problem, linear_exact_gradient
from mcco_services.randomness import root_stream


def _config(n1, rates, truncations, **kwargs):
    return MlmcConfig.from_rates(n1, list(rates), list(truncations), **kwargs)


class TestGradientEstimate:
    """Mean, coupling and failure modes of the gradient recursion."""

    def test_affine_chain_gradient(self, linear_chain, stream):
        """grad F = prod a = 30 for the default chain."""
        assert linear_exact_gradient(LinearParams()) == 30.0
        report = mlmc_gradient_estimate(linear_chain, [1.0], _config(20_000, [0.6, 0.6], [3, 3]), stream)
        assert report.gradient.shape == (1,)
        assert abs(report.gradient[0] - 30.0) < 4 * report.stderr[0]

    def test_shares_samples_with_value(self, synthetic):
        """The coupled run returns exactly the value estimator's tree values."""
        config = _config(2000, [0.6, 0.6], [4, 4], block_size=500)
        grad = mlmc_gradient_estimate(synthetic, [0.3], config, root_stream(6))
        value = mlmc_value_estimate(synthetic, [0.3], config, root_stream(6))
        np.testing.assert_array_equal(grad.tree_values, value.tree_values)
        assert grad.scenario_count == value.scenario_count
        assert grad.expected_cost == pytest.approx(expected_cost(config))

    def test_independent_variant(self, linear_chain, stream):
        config = _config(20_000, [0.6, 0.6], [3, 3])
        report = mlmc_gradient_estimate(linear_chain, [1.0], config, stream, independent=True)
        assert report.expected_cost == pytest.approx(independent_expected_cost(config))
        assert report.expected_cost > expected_cost(config)
        assert abs(report.gradient[0] - 30.0) < 4 * report.stderr[0]

    def test_thread_invariance(self, synthetic):
        config = _config(800, [0.6, 0.6], [4, 4], block_size=100)
        one = mlmc_gradient_estimate(synthetic, [0.1], config, root_stream(2), threads=1)
        four = mlmc_gradient_estimate(synthetic, [0.1], config, root_stream(2), threads=4)
        np.testing.assert_array_equal(one.tree_gradients, four.tree_gradients)

    @pytest.mark.parametrize("independent", [False, True])
    def test_expected_cost_over_budget(self, linear_two_stage, stream, independent):
        with pytest.raises(CostGuardExceeded, match="expected"):
            mlmc_gradient_estimate(linear_two_stage, [1.0], _config(100_000, [0.6], [6]), stream,
                                   independent=independent, budget=5000)

    def test_nonsmooth_problem_rejected(self, stream):
        problem = build_problem(StoppingParams(T=2))
        with pytest.raises(NotDifferentiable):
            mlmc_gradient_estimate(problem, [0.0], _config(10, [0.6], [2]), stream)

    def test_rate_outside_window_warns(self, linear_two_stage, stream, caplog):
        with caplog.at_level(logging.WARNING):
            mlmc_gradient_estimate(linear_two_stage, [1.0], _config(100, [0.9], [3]), stream, rho=[1.0])
        assert "outside" in caplog.text


class TestIndependentCost:
    def test_degenerate_levels(self):
        """With M = 0 each stage-t node has one gradient child and one value child."""
        config = _config(1, [0.6, 0.6], [0, 0])
        assert independent_expected_cost(config) == pytest.approx(3.0)

    def test_recursion(self):
        config = _config(4, [0.6], [None])
        assert independent_expected_cost(config) == pytest.approx(4 * 3.0 * 2.0)


class TestRateWindow:
    """Open intervals (1/2, upper) from the Hölder exponents."""

    def test_first_stage(self):
        (window,) = grad_rate_window(2, [1.0])
        assert window.upper == pytest.approx(0.75)
        assert window.lower == 0.5
        assert window.default == pytest.approx(0.625)

    def test_second_stage(self):
        windows = grad_rate_window(3, [1.0, 1.0])
        assert windows[1].upper == pytest.approx(1.0 - 2.0 ** (-8.0 / 7.0))

    def test_boundary_exponent_is_empty(self):
        """rho_t must exceed 1 - 2^(1 - t)."""
        with pytest.raises(EmptyWindow) as info:
            grad_rate_window(3, [1.0, 0.5])
        assert info.value.stage == 2

    def test_exponent_count(self):
        with pytest.raises(DimensionMismatch):
            grad_rate_window(3, [1.0])

    def test_upper_decreases_with_rougher_gradients(self):
        smooth = grad_rate_window(2, [1.0])[0].upper
        rough = grad_rate_window(2, [0.5])[0].upper
        assert rough < smooth
        assert rough == pytest.approx(1.0 - 2.0 ** -1.5)
        assert math.isfinite(rough)
