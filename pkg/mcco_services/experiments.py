# mcco_services/experiments.py
"""Desk-scale reproductions: synthetic ground truth, Bermudan pricing, bandit learning and convergence slopes.

Each run writes plot-ready CSV files plus a summary.json holding the resolved
configuration and every acceptance check; a failed check raises AcceptanceFailure
after the summary has been written.
"""
import logging
import os
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from config import settings
from errors import AcceptanceFailure
from models import AcceptanceCheck, ExperimentSummary, MlmcConfig, SaaConfig
from .analysis import confidence_interval, loglog_slope, replicate
from .mlmc_gradient import mlmc_gradient_estimate
from .mlmc_value import expected_cost, mlmc_value_estimate
from .optimizer import BANDIT_START, adam_run, bandit_adam_config
from .problems import (
    BanditsParams,
    BermudanParams,
    SyntheticParams,
    bandits_ground_truth,
    build_problem,
    synthetic_exact_value,
)
from .randomness import derive_stream, root_stream
from .saa import saa_estimate
from .utils.report_writer import append_csv, estimate_row, write_json, write_table

logger = logging.getLogger(__name__)

SYNTHETIC_RATES = (1.0 - 2.0 ** -1.5, 1.0 - 2.0 ** -1.25)
SYNTHETIC_TRUNCATIONS = (6, 5)
SYNTHETIC_COST = 4.7674

# (truncation, rate, expected cost per tree) for the three-stage branching of the basket put
BERMUDAN_COST_ROWS = ((9, 0.59, 22.6084), (10, 0.58, 29.5795), (11, 0.59, 26.3283), (None, 0.60, 27.0))
BERMUDAN_RANGE = (2.13, 2.18)
BERMUDAN_REFERENCE_CI = (2.154, 2.164)

BANDIT_TARGET = (11.829, 0.589, 0.713)

SLOPE_BANDS = {
    "mlmc_truncated": (-1.1, -0.6),
    "saa_uniform": (-0.45, -0.22),
    "saa_square": (-0.65, -0.35),
}


class ExperimentService:
    """Runs the named reproductions and persists their artifacts under one output root."""

    def __init__(self, out_dir: Optional[str] = None, threads: Optional[int] = None):
        self.out_dir = out_dir or settings.MCCO_OUTPUT_DIR
        self.threads = threads
        self.registry: Dict[str, Callable[..., ExperimentSummary]] = {
            "synthetic": self.synthetic,
            "bermudan": self.bermudan,
            "bandits": self.bandits,
            "slopes": self.slopes,
        }

    @property
    def names(self) -> List[str]:
        return list(self.registry)

    def run(self, name: str, seed: int = 1, strict: bool = True, **overrides: Any) -> ExperimentSummary:
        if name not in self.registry:
            raise ValueError(f"unknown experiment '{name}', expected one of {', '.join(self.names)}")
        logger.info(f"Starting experiment '{name}' with seed {seed} and overrides {overrides}.")
        summary = self.registry[name](seed=seed, **overrides)
        self._finish(summary, strict)
        return summary

    # --- helpers ---

    def _path(self, name: str, filename: str) -> str:
        directory = os.path.join(self.out_dir, name)
        os.makedirs(directory, exist_ok=True)
        return os.path.join(directory, filename)

    def _finish(self, summary: ExperimentSummary, strict: bool) -> None:
        path = self._path(summary.name, "summary.json")
        summary.artifacts.append(path)
        payload = {
            "name": summary.name,
            "passed": summary.passed,
            "results": summary.results,
            "checks": [check.model_dump() for check in summary.checks],
            "artifacts": summary.artifacts,
        }
        write_json(path, payload, seed=summary.seed, config=summary.config)
        for check in summary.checks:
            level = logging.INFO if check.passed else logging.WARNING
            logger.log(level, f"[{summary.name}] {check.name}: value={check.value} passed={check.passed} {check.detail}")
        if strict and not summary.passed:
            raise AcceptanceFailure(f"experiment '{summary.name}' failed checks: {', '.join(summary.failed())}")

    # --- experiments ---

    def synthetic(
        self,
        seed: int = 1,
        n1: int = 100_000,
        rates: Sequence[float] = SYNTHETIC_RATES,
        truncations: Sequence[int] = SYNTHETIC_TRUNCATIONS,
    ) -> ExperimentSummary:
        """Truncated MLMC on the trigonometric random walk against its closed form."""
        params = SyntheticParams()
        problem = build_problem(params)
        truth = synthetic_exact_value(params)
        config = MlmcConfig.from_rates(n1, list(rates), list(truncations))
        report = mlmc_value_estimate(problem, problem.reference_point, config, root_stream(seed), threads=self.threads)

        low, high = confidence_interval(report.tree_values)
        csv_path = self._path("synthetic", "estimates.csv")
        append_csv(csv_path, [estimate_row(report)])

        per_tree = expected_cost(config) / n1
        empirical = report.scenario_count / n1
        checks = [
            AcceptanceCheck(
                name="ci_contains_truth", value=report.value, lower=low, upper=high,
                passed=low <= truth <= high, detail=f"truth={truth:.6f}",
            ),
            AcceptanceCheck.within("expected_cost_per_tree", per_tree, SYNTHETIC_COST - 1e-3, SYNTHETIC_COST + 1e-3),
            AcceptanceCheck.within("empirical_cost_per_tree", empirical, 0.99 * per_tree, 1.01 * per_tree),
        ]
        return ExperimentSummary(
            name="synthetic", seed=seed,
            config={"n1": n1, "rates": list(rates), "truncations": list(truncations), "problem": params.model_dump()},
            results={"estimate": report.value, "stderr": report.stderr, "ci": [low, high], "truth": truth,
                     "expected_cost_per_tree": per_tree, "empirical_cost_per_tree": empirical},
            checks=checks, artifacts=[csv_path],
        )

    def bermudan(
        self,
        seed: int = 1,
        n1: int = 500_000,
        truncation: Optional[int] = 10,
        rate: float = 0.58,
    ) -> ExperimentSummary:
        """Basket put price by truncated MLMC plus the expected-cost table of the tuned configurations."""
        params = BermudanParams()
        problem = build_problem(params)
        stages = problem.T - 1

        # 1. Expected cost per tree for the tabulated configurations
        cost_rows = []
        checks = []
        for M, r, reference in BERMUDAN_COST_ROWS:
            cost = expected_cost(MlmcConfig.from_rates(1, [r] * stages, [M] * stages))
            cost_rows.append({"truncation": "inf" if M is None else M, "rate": r, "expected_cost": cost, "reference": reference})
            checks.append(AcceptanceCheck.within(
                f"expected_cost_M{'inf' if M is None else M}_r{r}", cost, reference * (1 - 1e-3), reference * (1 + 1e-3),
            ))
        cost_path = self._path("bermudan", "costs.csv")
        write_table(cost_path, cost_rows)

        # 2. Price estimate
        config = MlmcConfig.from_rates(n1, [rate] * stages, [truncation] * stages)
        report = mlmc_value_estimate(problem, problem.reference_point, config, root_stream(seed), threads=self.threads)
        low, high = confidence_interval(report.tree_values)
        csv_path = self._path("bermudan", "estimates.csv")
        append_csv(csv_path, [estimate_row(report)])

        ref_low, ref_high = BERMUDAN_REFERENCE_CI
        checks.append(AcceptanceCheck.within("price_in_range", report.value, *BERMUDAN_RANGE))
        checks.append(AcceptanceCheck(
            name="ci_overlaps_reference", value=report.value, lower=low, upper=high,
            passed=low <= ref_high and high >= ref_low, detail=f"reference interval {BERMUDAN_REFERENCE_CI}",
        ))
        return ExperimentSummary(
            name="bermudan", seed=seed,
            config={"n1": n1, "truncation": truncation, "rate": rate, "problem": params.model_dump()},
            results={"estimate": report.value, "stderr": report.stderr, "ci": [low, high],
                     "expected_cost_per_tree": report.expected_cost / n1, "costs": cost_rows},
            checks=checks, artifacts=[cost_path, csv_path],
        )

    def bandits(
        self,
        seed: int = 1,
        seeds: int = 5,
        iterations: int = 2000,
        n1: int = 64,
        rates: Sequence[float] = (0.6, 0.6),
        truncations: Sequence[int] = (4, 4),
    ) -> ExperimentSummary:
        """Exact bandit minimizer, then Adam on truncated MLMC gradients from several seeds."""
        params = BanditsParams()
        problem = build_problem(params)
        optimum = bandits_ground_truth(params)
        exact = np.array([optimum.lambda_, optimum.theta1, optimum.theta2])
        target = np.array(BANDIT_TARGET)

        checks = [
            AcceptanceCheck.within(f"oracle_{name}", float(value), goal - 1e-2, goal + 1e-2)
            for name, value, goal in zip(("lambda", "theta1", "theta2"), exact, target)
        ]
        if np.any(np.abs(exact - target) > 1e-2):
            logger.warning(f"Exact bandit minimizer {exact.round(4).tolist()} differs from the reference {list(BANDIT_TARGET)}.")

        config = MlmcConfig.from_rates(n1, list(rates), list(truncations))
        adam = bandit_adam_config(iterations)

        def oracle(x, stream):
            return mlmc_gradient_estimate(problem, x, config, stream, threads=self.threads, allow_nonfinite=True)

        root = root_stream(seed)
        finals = []
        rows = []
        skipped = 0
        for s in range(seeds):
            result = adam_run(problem, BANDIT_START, adam, oracle, derive_stream(root, s))
            finals.append(result.output)
            skipped += result.skipped_updates
            scenarios = [0] + result.scenario_counts
            for k, point in enumerate(result.trajectory):
                rows.append({"run": s, "iteration": k, "scenarios": scenarios[k],
                             "theta1": point[0], "theta2": point[1], "lambda": point[2]})
            logger.info(f"Bandit run {s}: theta=({result.output[0]:.4f}, {result.output[1]:.4f}), lambda={result.output[2]:.4f}.")
        trajectory_path = self._path("bandits", "trajectories.csv")
        write_table(trajectory_path, rows)

        finals = np.array(finals)
        error = np.abs(finals - np.array([exact[1], exact[2], exact[0]])).mean(axis=0)
        checks += [
            AcceptanceCheck.within("adam_theta1_error", float(error[0]), 0.0, 0.05),
            AcceptanceCheck.within("adam_theta2_error", float(error[1]), 0.0, 0.05),
            AcceptanceCheck.within("adam_lambda_error", float(error[2]), 0.0, 1.0),
        ]
        return ExperimentSummary(
            name="bandits", seed=seed,
            config={"seeds": seeds, "iterations": iterations, "n1": n1, "rates": list(rates),
                    "truncations": list(truncations), "adam": adam.model_dump(), "problem": params.model_dump()},
            results={"oracle": optimum.model_dump(by_alias=True), "finals": finals.tolist(),
                     "mean_abs_error": error.tolist(), "skipped_updates": skipped},
            checks=checks, artifacts=[trajectory_path],
        )

    def slopes(
        self,
        seed: int = 1,
        reps: int = 10,
        n1_grid: Sequence[int] = (1_000, 3_000, 10_000, 30_000, 100_000),
        uniform_grid: Sequence[int] = (10, 15, 22, 32, 46),
        square_grid: Sequence[int] = (6, 8, 11, 15, 20),
    ) -> ExperimentSummary:
        """Log-log MSE against cost on the synthetic problem for MLMC and two SAA sweeps."""
        params = SyntheticParams()
        problem = build_problem(params)
        truth = synthetic_exact_value(params)
        x = problem.reference_point
        root = root_stream(seed)
        rows = []

        def sweep(method: str, index: int, configs):
            stream = derive_stream(root, index)
            for j, (label, cost, run) in enumerate(configs):
                summary = replicate(run, reps, derive_stream(stream, j), truth=truth)
                rows.append({"method": method, "size": label, "cost": cost, "mse": summary.mse,
                             "bias2": summary.bias2, "variance": summary.variance})

        def mlmc_run(n1):
            config = MlmcConfig.from_rates(n1, list(SYNTHETIC_RATES), list(SYNTHETIC_TRUNCATIONS))
            return expected_cost(config), lambda st: mlmc_value_estimate(problem, x, config, st, threads=self.threads)

        def saa_run(n):
            config = SaaConfig(n=list(n))
            return float(config.scenario_count), lambda st: saa_estimate(problem, x, config, st, threads=self.threads)

        sweep("mlmc_truncated", 0, [(n1, *mlmc_run(n1)) for n1 in n1_grid])
        sweep("saa_uniform", 1, [(k, *saa_run((k, k, k))) for k in uniform_grid])
        sweep("saa_square", 2, [(k, *saa_run((k * k, k, k))) for k in square_grid])

        table_path = self._path("slopes", "slopes.csv")
        write_table(table_path, rows)

        slopes = {}
        checks = []
        for method, (lower, upper) in SLOPE_BANDS.items():
            points = [r for r in rows if r["method"] == method]
            slope = loglog_slope([r["cost"] for r in points], [r["mse"] for r in points])
            slopes[method] = slope
            checks.append(AcceptanceCheck.within(f"slope_{method}", slope, lower, upper))
        return ExperimentSummary(
            name="slopes", seed=seed,
            config={"reps": reps, "n1_grid": list(n1_grid), "uniform_grid": list(uniform_grid),
                    "square_grid": list(square_grid), "rates": list(SYNTHETIC_RATES),
                    "truncations": list(SYNTHETIC_TRUNCATIONS)},
            results={"slopes": slopes, "truth": truth},
            checks=checks, artifacts=[table_path],
        )
