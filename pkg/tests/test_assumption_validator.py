import unittest
from src.model.assumption_validator import (
    AssumptionValidator,
    validate_assumptions,
)
from src.model.market import heterogeneous_model, lq_market
from src.schemas.model_schemas import LQParams, PerturbationParams


class TestAssumptionValidator(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.model = lq_market(LQParams(sigma0=0.2, sigma=0.3), N=2)
        cls.report = validate_assumptions(cls.model, samples=2000, seed=3)

    def test_lq_default_passes(self):
        self.assertTrue(self.report.all_passed, self.report.failures())
        self.assertEqual(self.report.samples, 2000)
        self.assertEqual(self.report.seed, 3)

    def test_convexity_modulus_observed(self):
        check = self.report.checks["convexity_f"]
        self.assertGreaterEqual(check.observed, 1.0 - 1e-9)
        self.assertIn("conditional_terminal_monotonicity", self.report.checks)

    def test_perturbed_family_passes(self):
        model = lq_market(
            LQParams(),
            N=3,
            perturbation=PerturbationParams(
                epsilon_f=0.2, epsilon_g=0.1, kappa=0.1, rho=0.2
            ),
        )
        report = validate_assumptions(model, samples=2000, seed=1)
        self.assertEqual(report.failures(), [])

    def test_flat_flow_fails(self):
        model = lq_market(LQParams(gamma_l=0.0), N=2)
        report = validate_assumptions(model, samples=500, seed=0)
        failures = report.failures()
        self.assertIn("flow_monotonicity", failures)
        self.assertIn("gamma_compatibility", failures)

    def test_concave_cost_fails(self):
        model = lq_market(LQParams(gamma_f=-1.0), N=2)
        report = validate_assumptions(model, samples=500, seed=0)
        failures = report.failures()
        self.assertIn("convexity_f", failures)
        self.assertIn("constants_nonnegative", failures)

    def test_heterogeneous_agents_skip_conditional_checks(self):
        model = heterogeneous_model(self.model, [0.1, 0.2], "gamma_f")
        report = validate_assumptions(model, samples=500, seed=0)
        self.assertTrue(report.all_passed, report.failures())
        self.assertEqual(report.failures(), [])
        self.assertNotIn("homogeneous_agents", report.checks)
        self.assertNotIn("conditional_flow_monotonicity", report.checks)
        self.assertIn("flow_monotonicity", report.checks)

    def test_seeded_and_thread_independent(self):
        again = validate_assumptions(self.model, samples=2000, seed=3)
        threaded = validate_assumptions(
            self.model, samples=2000, seed=3, threads=2
        )
        self.assertEqual(again, self.report)
        self.assertEqual(threaded, self.report)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            AssumptionValidator(self.model, box=0.0)
        with self.assertRaises(ValueError):
            AssumptionValidator(self.model, group_size=1)
        with self.assertRaises(ValueError):
            AssumptionValidator(self.model).validate(0, 0)
        with self.assertRaises(ValueError):
            AssumptionValidator("not a model")


if __name__ == "__main__":
    unittest.main()
