"""
Acceptance Evaluation Script
Runs the acceptance criteria from tests/acceptance_cases.json against the gallery models:
oracle equivalence, the projection and block identities, the mixing inequalities, variance
limits and the seeded distributional checks. Writes evaluation_results.json.
"""

import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List

import numpy as np

from cltlab.config import settings
from cltlab.logging_config import setup_logging
from cltlab.services.blocks_service import identity_check, orthogonality_check, remainder_second_moment
from cltlab.services.bridge_service import (
    bridge_profile,
    bridge_sum_table,
    centered_sigma,
    endpoint_projection_norm,
    endpoint_second_moment,
    x0_two_sided_norm,
)
from cltlab.services.enumeration_service import (
    oracle_beta,
    oracle_beta_two_sided,
    oracle_bridge_table,
    oracle_conditional_second_moment,
    oracle_remainder_second_moment,
    oracle_second_moment,
    oracle_x0_two_sided_norm,
)
from cltlab.services.gallery_service import build_preset, parse_preset
from cltlab.services.kernel_service import ergodicity_report
from cltlab.services.mixing_service import (
    FAILED,
    beta_coefficient,
    beta_two_sided,
    clt_condition_report,
    lemma_strong_gap,
    quantile_integral,
)
from cltlab.services.moments_service import Model, partial_sum_variance, second_moment_profile, sigma_series
from cltlab.services.montecarlo_service import (
    SeedSpec,
    abs_mean_sigma,
    clt_experiment,
    mixture_reference,
)
from cltlab.utils import CltlabError


def _conditional_square_sums(M: Model, N: int) -> List[float]:
    """
    E((S_n - E(S_n|xi_0,xi_n))^2) for n = 1..N from the recursion
    U_n = U_{n-1} P + 2 (T_{n-1} P) diag(f) + P^n diag(f^2), with U_n(x,y) = E(S_n^2; xi_n=y | xi_0=x).
    """
    P = M.kernel.rows
    f = M.f[None, :]
    values = []
    second = None
    previous = None
    for step in bridge_profile(M, N):
        if second is None:
            second = step.transition * f**2
        else:
            second = second @ P + 2.0 * (previous @ P) * f + step.transition * f**2
        previous = step.numerator
        total = math.fsum((M.pi.probs[:, None] * second).ravel().tolist())
        values.append(total - endpoint_second_moment(M, step.numerator, step.transition))
    return values


class AcceptanceEvaluator:
    """Evaluates every acceptance criterion and records measured values."""

    def __init__(self, cases_path: str = "tests/acceptance_cases.json", results_path: str = "evaluation_results.json"):
        self.cases_path = Path(cases_path)
        self.results_path = Path(results_path)
        self.cases = self.load_cases()
        self.seed = SeedSpec(self.cases.get("seed", settings.SEED))
        self._models: Dict[str, Model] = {}

    def load_cases(self) -> Dict[str, Any]:
        """Load acceptance cases from JSON file."""
        if not self.cases_path.exists():
            raise FileNotFoundError(f"Acceptance cases file not found: {self.cases_path}")
        with open(self.cases_path, "r", encoding="utf-8") as f:
            return json.load(f)

    def model(self, name: str) -> Model:
        if name not in self._models:
            self._models[name] = build_preset(parse_preset(self.cases["models"][name])).model
        return self._models[name]

    # ==================== Criteria ====================

    def check_oracle(self, case: Dict[str, Any]) -> Dict[str, Any]:
        tol = case["tolerance"]
        worst = 0.0
        for name in case["models"]:
            M = self.model(name)
            for n in range(1, case["max_n"] + 1):
                gaps = [
                    abs(partial_sum_variance(M, n) - oracle_second_moment(M, n)),
                    abs(n * endpoint_projection_norm(M, n) - oracle_conditional_second_moment(M, n)),
                    abs(n * centered_sigma(M, n) - (oracle_second_moment(M, n) - oracle_conditional_second_moment(M, n))),
                    abs(beta_coefficient(M.kernel, M.pi, n) - oracle_beta(M, n)),
                ]
                table = bridge_sum_table(M, n).values
                oracle = oracle_bridge_table(M, n)
                if not np.array_equal(np.isnan(table), np.isnan(oracle)):
                    gaps.append(math.inf)
                else:
                    mask = ~np.isnan(table)
                    gaps.append(float(np.max(np.abs(table[mask] - oracle[mask]))))
                if n <= case["max_two_sided_n"]:
                    gaps.append(abs(x0_two_sided_norm(M, n) - oracle_x0_two_sided_norm(M, n)))
                    gaps.append(abs(beta_two_sided(M.kernel, M.pi, n) - oracle_beta_two_sided(M, n)))
                worst = max(worst, max(gaps))
            for m, u in ((1, 2), (2, 2), (2, 4), (4, 2)):
                gap = abs(remainder_second_moment(M, m, u) - oracle_remainder_second_moment(M, m, u))
                worst = max(worst, gap, abs(orthogonality_check(M, m, u, mode="exact").value))
        return {"passed": worst <= tol, "max_deviation": worst}

    def check_pythagoras(self, case: Dict[str, Any]) -> Dict[str, Any]:
        worst = 0.0
        for name in case["models"]:
            M = self.model(name)
            N = case["max_n"]
            totals = second_moment_profile(M, N)
            centered = _conditional_square_sums(M, N)
            for step, total, residual in zip(bridge_profile(M, N), totals, centered):
                projected = endpoint_second_moment(M, step.numerator, step.transition)
                worst = max(worst, abs(total - residual - projected) / step.n)
        return {"passed": worst <= case["tolerance"], "max_deviation": worst}

    def check_identity(self, case: Dict[str, Any]) -> Dict[str, Any]:
        worst = 0.0
        for name in case["models"]:
            M = self.model(name)
            for m in case["block_lengths"]:
                for u in case["block_counts"]:
                    worst = max(worst, identity_check(M, m, u, tol=case["tolerance"]))
        return {"passed": True, "max_residual": worst}

    def check_lemma_strong(self, case: Dict[str, Any]) -> Dict[str, Any]:
        margin = math.inf
        for name in case["models"]:
            M = self.model(name)
            for n in range(1, case["max_n"] + 1):
                lhs, rhs = lemma_strong_gap(M.kernel, M.pi, n)
                margin = min(margin, rhs + case["tolerance"] - lhs)
        return {"passed": margin >= 0.0, "min_margin": margin}

    def check_quantile_bound(self, case: Dict[str, Any]) -> Dict[str, Any]:
        margin = math.inf
        for name in case["models"]:
            M = self.model(name)
            for n in range(1, case["max_n"] + 1):
                bound = 2.0 * quantile_integral(M, min(1.0, beta_two_sided(M.kernel, M.pi, n)))
                margin = min(margin, bound + case["tolerance"] - x0_two_sided_norm(M, n))
        return {"passed": margin >= 0.0, "min_margin": margin}

    def check_variance_limits(self, case: Dict[str, Any]) -> Dict[str, Any]:
        M = self.model(case["model"])
        expected = case["expected"]
        series = sigma_series(M).value
        centered = centered_sigma(M, case["n"])
        abs_mean = abs_mean_sigma(M, case["n"], mode="exact").value
        passed = (
            abs(series - expected) <= case["series_tolerance"]
            and abs(centered - expected) <= case["centered_tolerance"]
            and abs(abs_mean - expected) <= case["abs_mean_tolerance"]
        )
        return {"passed": passed, "sigma_series": series, "centered_sigma": centered, "abs_mean_sigma": abs_mean}

    def check_clt(self, case: Dict[str, Any]) -> Dict[str, Any]:
        reports = {}
        for name in case["models"]:
            M = self.model(name)
            table = bridge_sum_table(M, case["n"])
            report = clt_experiment(M, case["n"], case["reps"], self.seed, "endpoint", table)
            reports[name] = report.model_dump()
        return {"passed": all(r["within_threshold"] for r in reports.values()), "reports": reports}

    def check_mixture(self, case: Dict[str, Any]) -> Dict[str, Any]:
        M = self.model(case["model"])
        reference = mixture_reference([(0.5, v) for v in case["expected_variances"]])
        table = bridge_sum_table(M, case["n"])
        report = clt_experiment(M, case["n"], case["reps"], self.seed, "endpoint", table, reference=reference)
        return {"passed": report.within_threshold, "report": report.model_dump()}

    def check_counter_case(self, case: Dict[str, Any]) -> Dict[str, Any]:
        M = self.model(case["model"])
        betas = [beta_coefficient(M.kernel, M.pi, n) for n in range(1, case["max_n"] + 1)]
        ergodic = ergodicity_report(M.kernel, M.pi).totally_ergodic
        report = clt_experiment(
            M, case["n"], case["reps"], self.seed, "endpoint", bridge_sum_table(M, case["n"])
        )
        verdicts = {v.name: v.status for v in clt_condition_report(M, case["max_n"]).verdicts()}
        identity_check(M, 4, 4)
        passed = (
            all(abs(b - 0.5) <= 1e-12 for b in betas)
            and not ergodic
            and report.degenerate
            and report.max_abs_statistic == 0.0
            and verdicts["cond beta"] == FAILED
        )
        return {
            "passed": passed,
            "totally_ergodic": ergodic,
            "max_abs_statistic": report.max_abs_statistic,
            "cond_beta": verdicts["cond beta"],
        }

    def check_davydov_rate(self, case: Dict[str, Any]) -> Dict[str, Any]:
        low, high = case["window"]
        strong, weak = (self.model(name) for name in case["models"])
        ns = range(low, high + 1)
        strong_beta = np.array([beta_coefficient(strong.kernel, strong.pi, n) for n in ns])
        weak_beta = np.array([beta_coefficient(weak.kernel, weak.pi, n) for n in ns])
        n = np.arange(low, high + 1, dtype=float)
        scaled = n * strong_beta * np.log(n + 1.0) ** 2
        running_min = np.minimum.accumulate(scaled)
        monotone = bool(np.all(scaled <= (1.0 + case["slack"]) * running_min))
        dominated = bool(np.all(weak_beta >= strong_beta - 1e-12))
        return {"passed": monotone and dominated, "monotone": monotone, "dominated": dominated}

    def check_determinism(self, case: Dict[str, Any]) -> Dict[str, Any]:
        M = self.model(case["model"])
        table = bridge_sum_table(M, case["n"])
        dumps = [
            clt_experiment(M, case["n"], case["reps"], self.seed, "endpoint", table, workers=w).model_dump_json()
            for w in case["workers"]
        ]
        return {"passed": len(set(dumps)) == 1, "workers": case["workers"]}

    # ==================== Workflow ====================

    def run_criterion(self, case: Dict[str, Any]) -> Dict[str, Any]:
        handler: Callable[[Dict[str, Any]], Dict[str, Any]] = getattr(self, f"check_{case['id']}")
        started = time.perf_counter()
        try:
            outcome = handler(case)
        except CltlabError as e:
            outcome = {"passed": False, "error": type(e).__name__, "message": e.message}
        outcome["seconds"] = round(time.perf_counter() - started, 3)
        return {"id": case["id"], "description": case["description"], **outcome}

    def save_results(self, results: List[Dict[str, Any]]) -> None:
        """Save evaluation results to JSON file."""
        output = {
            "evaluation_date": datetime.now(timezone.utc).isoformat(),
            "master_seed": self.seed.master,
            "total_criteria": len(results),
            "passed_criteria": sum(1 for r in results if r["passed"]),
            "criteria": results,
        }
        with open(self.results_path, "w", encoding="utf-8") as f:
            json.dump(output, f, indent=2, default=float)
        print(f"\n✓ Results saved to: {self.results_path}")

    def run_evaluation(self) -> bool:
        print("=" * 60)
        print("Starting acceptance evaluation")
        print("=" * 60)

        results = []
        for i, case in enumerate(self.cases["criteria"], 1):
            print(f"\n[{i}/{len(self.cases['criteria'])}] {case['id']}: {case['description']}")
            result = self.run_criterion(case)
            results.append(result)
            mark = "✓" if result["passed"] else "✗"
            print(f"{mark} {'passed' if result['passed'] else 'FAILED'} in {result['seconds']}s")

        self.save_results(results)
        print("\n" + "=" * 60)
        print(f"Passed {sum(1 for r in results if r['passed'])}/{len(results)} criteria")
        print("=" * 60)
        return all(r["passed"] for r in results)


def main() -> None:
    """Main entry point for the acceptance evaluation."""
    setup_logging(log_level="WARNING", log_dir=settings.LOG_DIR)
    evaluator = AcceptanceEvaluator()
    sys.exit(0 if evaluator.run_evaluation() else 1)


if __name__ == "__main__":
    main()
