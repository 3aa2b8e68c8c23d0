"""Concrete adapters: descriptors, integrands and closed-form values."""
import math

import numpy as np
import pytest

from errors import InvalidParams
from mcco_services.core import SamplePath, evaluate_integrand
from mcco_services.problems import (
    KINDS,
    BanditCostModel,
    BanditsParams,
    BermudanParams,
    EntropicParams,
    LinearParams,
    LqrParams,
    StoppingParams,
    SyntheticParams,
    bandits_ground_truth,
    bandits_objective,
    bermudan_surrogate_params,
    build_problem,
    build_stopping_problem,
    entropic_exact_value,
    linear_exact_value,
    lqr_exact_value,
    parse_adapter_params,
    synthetic_exact_value,
)
from mcco_services.problems.bandits import CONTEXT_DIM, all_contexts


class TestDescriptors:
    """Discriminated descriptors and the builder registry."""

    @pytest.mark.parametrize("kind", KINDS)
    def test_every_kind_builds_with_defaults(self, kind):
        problem = build_problem({"kind": kind})
        assert problem.T >= 1
        assert problem.reference_point is not None

    def test_missing_kind(self):
        with pytest.raises(InvalidParams):
            parse_adapter_params({"a": [1.0]})

    def test_unknown_kind(self):
        with pytest.raises(InvalidParams):
            parse_adapter_params({"kind": "heston"})

    def test_unknown_field(self):
        with pytest.raises(InvalidParams):
            parse_adapter_params({"kind": "linear", "slope": 2.0})

    def test_params_round_trip(self):
        params = parse_adapter_params({"kind": "entropic", "T": 3, "mu": [1.0, 0.5, 2.0]})
        assert isinstance(params, EntropicParams)
        assert params.aversions() == [1.0, 0.5, 2.0]


class TestClosedForms:
    def test_linear(self):
        assert linear_exact_value(LinearParams(), 0.5) == pytest.approx(15.0)

    def test_synthetic(self):
        assert synthetic_exact_value(SyntheticParams()) == pytest.approx(math.exp(-0.5))

    def test_entropic_two_stage(self):
        assert entropic_exact_value(EntropicParams(T=2, mu=1.0)) == pytest.approx(1.0)

    def test_entropic_one_stage(self):
        """E exp(-mu xi) = exp(mu^2 / 2) for a standard normal."""
        assert entropic_exact_value(EntropicParams(T=1, mu=2.0)) == pytest.approx(math.exp(2.0))

    def test_entropic_needs_independence(self):
        with pytest.raises(InvalidParams):
            entropic_exact_value(EntropicParams(T=2, ar=0.5))

    def test_entropic_aversion_count(self):
        with pytest.raises(ValueError):
            EntropicParams(T=3, mu=[1.0, 1.0])

    def test_lqr_deterministic(self):
        """Unit scalar system from s0 = 1: min_a s^2 + a^2 + (s + a)^2 = 1.5."""
        assert lqr_exact_value(LqrParams(T=2)) == pytest.approx(1.5)

    def test_lqr_with_disturbance(self):
        assert lqr_exact_value(LqrParams(T=2, noise_cov=[[1.0]])) == pytest.approx(2.5)

    def test_lqr_singular_but_consistent(self):
        """Q = R = P_T = 0 leaves a singular action block with a zero minimum."""
        params = LqrParams(T=2, Q=[[0.0]], R=[[0.0]], P_T=[[0.0]])
        assert lqr_exact_value(params) == pytest.approx(0.0)

    def test_lqr_shape_check(self):
        with pytest.raises(InvalidParams):
            build_problem({"kind": "lqr", "A": [[1.0, 0.0]]})

    def test_lqr_needs_invertible_r(self):
        with pytest.raises(InvalidParams):
            build_problem({"kind": "lqr", "R": [[0.0]]})

    def test_lqr_two_dimensional_is_finite(self):
        params = LqrParams(T=3, A=[[1.0, 0.1], [0.0, 1.0]], B=[[0.0], [1.0]], Q=[[1.0, 0.0], [0.0, 1.0]],
                           R=[[1.0]], P_T=[[1.0, 0.0], [0.0, 1.0]], s0=[1.0, 0.0], noise_cov=[[0.1, 0.0], [0.0, 0.1]])
        problem = build_problem(params)
        assert problem.dims[1] == 4 + 2 + 1 + 2 + 1 + 1
        assert math.isfinite(lqr_exact_value(params))


class TestStopping:
    """Stopping nests and the Bermudan basket put."""

    def test_bermudan_payoff(self):
        problem = build_problem(BermudanParams())
        np.testing.assert_allclose(evaluate_integrand(problem, problem.T, np.full(5, 100.0), [0.0]), [0.0])
        np.testing.assert_allclose(evaluate_integrand(problem, problem.T, np.full(5, 90.0), [0.0]), [10.0])

    def test_continuation_takes_the_max(self):
        problem = build_problem(BermudanParams())
        discount = math.exp(-0.05)
        np.testing.assert_allclose(evaluate_integrand(problem, 1, np.full(5, 95.0), [20.0]), [20.0 * discount])
        np.testing.assert_allclose(evaluate_integrand(problem, 1, np.full(5, 95.0), [1.0]), [5.0])

    def test_gbm_log_returns(self):
        """One step of the basket kernel has log-return mean 0.03 and variance 0.04."""
        problem = build_problem(BermudanParams())
        start = SamplePath((np.full((200_000, 5), 100.0),))
        nxt = problem.kernels[0](np.random.default_rng(42), start)
        log_returns = np.log(nxt / 100.0).ravel()
        assert log_returns.size == 1_000_000
        assert abs(log_returns.mean() - 0.03) < 3 * 0.2 / 1000.0
        assert log_returns.var() == pytest.approx(0.04, rel=0.01)

    def test_surrogate(self):
        params = bermudan_surrogate_params()
        assert params.strike == 0.0 and params.process == "iid"
        assert params.discount == pytest.approx(math.exp(-0.05))
        assert build_problem(params).T == 4

    def test_random_walk_process(self):
        problem = build_problem(StoppingParams(T=3, process="random_walk", strike=1.0))
        np.testing.assert_allclose(evaluate_integrand(problem, 3, [-1.0], [0.0]), [2.0])

    def test_kernel_count_checked(self):
        with pytest.raises(InvalidParams):
            build_stopping_problem([lambda xi: xi[:, 0]] * 3, lambda rng, n: rng.normal(size=(n, 1)), [], noise_dim=1)

    def test_discount_positive(self):
        with pytest.raises(InvalidParams):
            build_stopping_problem([lambda xi: xi[:, 0]], lambda rng, n: rng.normal(size=(n, 1)), [], 1, discount=0.0)


class TestBandits:
    """Contextual bandit adapter and its enumerated objective."""

    def test_context_grid(self):
        contexts = all_contexts()
        assert contexts.shape == (1440, CONTEXT_DIM)
        assert len({tuple(row) for row in contexts}) == 1440

    def test_terminal_cost_without_shift(self):
        """theta = (1, 0), u_1 != 0, lambda = 0 and u = c' give y_1 + r_y."""
        problem = build_problem(BanditsParams())
        context = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        xi = np.concatenate([context, context, [2.0, 7.0]])
        np.testing.assert_allclose(evaluate_integrand(problem, 3, xi, [1.0, 0.0, 0.0]), [2.0 + 0.15])

    def test_terminal_cost_transport_term(self):
        """lambda (r_c^2 - |u - c'|^2) enters linearly."""
        problem = build_problem(BanditsParams())
        c_prime = np.zeros(CONTEXT_DIM)
        u = np.array([0.0, 1.0, 0.0, 0.0, 2.0, 0.0])
        xi = np.concatenate([c_prime, u, [2.0, 7.0]])
        # u_1 = 0 selects theta2 = 1.0, so the cost is y_1
        value = evaluate_integrand(problem, 3, xi, [0.0, 1.0, 2.0])
        np.testing.assert_allclose(value, [2.0 + 0.15 + 2.0 * (0.16 - 5.0)])

    def test_objective_gradient_matches_differences(self):
        params = BanditsParams()
        x = np.array([0.3, 0.7, 2.0])
        _, grad = bandits_objective(params, x)
        h = 1e-5
        numeric = np.array([
            (bandits_objective(params, x + h * e)[0] - bandits_objective(params, x - h * e)[0]) / (2 * h)
            for e in np.eye(3)
        ])
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-6)

    def test_symmetric_costs_give_flat_policy_gradient(self):
        """Identical action-cost means make the policy coordinates irrelevant."""
        model = BanditCostModel(conscious_intercepts=(3.0, 3.0), conscious_slopes=(1.0, 1.0),
                                impaired_intercepts=(2.0, 2.0), impaired_slopes=(1.0, 1.0))
        _, grad = bandits_objective(BanditsParams(cost_model=model), [0.2, 0.9, 1.5])
        assert np.all(np.abs(grad[:2]) < 1e-8)

    def test_zero_radius_oracle_is_finite(self):
        """r_c = 0 drives lambda up; the oracle still returns a point inside the box."""
        params = BanditsParams(r_c=0.0, lambda_max=50.0)
        optimum = bandits_ground_truth(params)
        assert 0.0 <= optimum.lambda_ <= 50.0
        assert math.isfinite(optimum.value)

    def test_covariance_must_be_psd(self):
        with pytest.raises(ValueError):
            BanditsParams(cov_diag=1.0, cov_offdiag=2.0)

    @pytest.mark.slow
    def test_oracle_matches_reference(self):
        """Exact minimizer (lambda, theta1, theta2) near (11.829, 0.589, 0.713)."""
        optimum = bandits_ground_truth(BanditsParams())
        np.testing.assert_allclose([optimum.lambda_, optimum.theta1, optimum.theta2], [11.829, 0.589, 0.713], atol=1e-2)
