import unittest
from pydantic import ValidationError
from src.schemas.experiment_schemas import ExperimentConfig, LatticeSpec
from src.schemas.model_schemas import (
    CoefficientSpec,
    LQParams,
    MarketModelSpec,
    PerturbationParams,
)
from src.schemas.report_schemas import (
    AssumptionCheck,
    AssumptionReport,
    StabilityReport,
)
from src.schemas.solver_schemas import SolverConfig


class TestModelSchemas(unittest.TestCase):
    def setUp(self):
        self.valid_model = {
            "n": 1,
            "d0": 1,
            "d": 1,
            "N": 2,
            "coefficients": {
                "family": "lq",
                "lq": {"gamma_f": 1.0, "lambda": 2.0, "sigma": 0.3},
            },
        }

    def test_valid_model(self):
        spec = MarketModelSpec(**self.valid_model)
        self.assertEqual(spec.N, 2)
        self.assertEqual(spec.coefficients.lq.lam, 2.0)
        self.assertEqual(spec.initial_law.family, "gaussian")

    def test_lambda_alias_round_trip(self):
        params = LQParams(lam=3.0)
        dumped = params.model_dump(by_alias=True)
        self.assertIn("lambda", dumped)
        self.assertEqual(LQParams(**dumped).lam, 3.0)

    def test_unknown_key_rejected(self):
        invalid = dict(self.valid_model, mystery=1)
        with self.assertRaises(ValidationError) as context:
            MarketModelSpec(**invalid)
        self.assertIn("Extra inputs are not permitted", str(context.exception))

    def test_lq_family_rejects_perturbation(self):
        with self.assertRaises(ValidationError) as context:
            CoefficientSpec(
                family="lq", perturbation=PerturbationParams(kappa=0.1)
            )
        self.assertIn("does not take a perturbation", str(context.exception))

    def test_agent_count_must_match(self):
        invalid = dict(self.valid_model, agents=[{"family": "lq"}])
        with self.assertRaises(ValidationError):
            MarketModelSpec(**invalid)

    def test_negative_initial_spread_rejected(self):
        with self.assertRaises(ValidationError):
            LQParams(s0=-1.0)


class TestSolverConfig(unittest.TestCase):
    def test_defaults(self):
        config = SolverConfig()
        self.assertEqual(config.schedule[0], 0.0)
        self.assertEqual(config.schedule[-1], 1.0)
        self.assertTrue(config.store_cross_z)
        self.assertFalse(config.allow_invalid)

    def test_schedule_must_reach_one(self):
        with self.assertRaises(ValidationError) as context:
            SolverConfig(schedule=[0.0, 0.5])
        self.assertIn("start at 0 and end at 1", str(context.exception))

    def test_schedule_must_increase(self):
        with self.assertRaises(ValidationError):
            SolverConfig(schedule=[0.0, 0.5, 0.5, 1.0])

    def test_damping_range(self):
        with self.assertRaises(ValidationError):
            SolverConfig(damping=0.0)
        with self.assertRaises(ValidationError):
            SolverConfig(damping=1.5)


class TestExperimentConfig(unittest.TestCase):
    def test_deterministic_kind_needs_no_seed(self):
        config = ExperimentConfig(kind="solve-lattice")
        self.assertIsNone(config.seed)
        self.assertEqual(config.lattice, LatticeSpec())

    def test_randomized_kind_needs_seed(self):
        with self.assertRaises(ValidationError) as context:
            ExperimentConfig(kind="experiment-convergence")
        self.assertIn("needs a seed", str(context.exception))
        config = ExperimentConfig(kind="experiment-convergence", seed=7)
        self.assertEqual(config.seed, 7)

    def test_inline_and_file_model_exclusive(self):
        with self.assertRaises(ValidationError) as context:
            ExperimentConfig(model=MarketModelSpec(), model_file="m.json")
        self.assertIn("not both", str(context.exception))

    def test_unknown_kind_rejected(self):
        with self.assertRaises(ValidationError):
            ExperimentConfig(kind="plot")

    def test_unknown_key_rejected(self):
        with self.assertRaises(ValidationError):
            ExperimentConfig(kind="validate", seed=1, verbose=True)

    def test_seed_is_u64(self):
        with self.assertRaises(ValidationError):
            ExperimentConfig(seed=2**64)
        with self.assertRaises(ValidationError):
            ExperimentConfig(seed=-1)


class TestReportSchemas(unittest.TestCase):
    def test_assumption_report_failures(self):
        report = AssumptionReport(
            checks={
                "convexity_f": AssumptionCheck(passed=True, margin=1.0),
                "flow_monotonicity": AssumptionCheck(
                    passed=False, margin=-0.5
                ),
            },
            samples=10,
            seed=0,
        )
        self.assertFalse(report.all_passed)
        self.assertEqual(report.failures(), ["flow_monotonicity"])

    def test_stability_report_fields(self):
        report = StabilityReport(lhs=1.0, rhs=2.0, ratio=0.5)
        self.assertEqual(report.model_dump()["ratio"], 0.5)


if __name__ == "__main__":
    unittest.main()
