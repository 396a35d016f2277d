import unittest
import numpy as np
from src.errors import CapacityError, InvalidModelError, NonConvergenceError
from src.fbsde.clearing import (
    clearing_l2_norm,
    clearing_residual,
    total_rates,
)
from src.fbsde.decoupled import solve_decoupled
from src.fbsde.equilibrium import solve_equilibrium
from src.fbsde.newton import (
    DiscreteSystem,
    newton_residual,
    solve_global_newton,
)
from src.lqoracle.riccati import discrete_riccati
from src.model.market import (
    MarketModel,
    evaluate_cost,
    heterogeneous_model,
    lq_market,
)
from src.schemas.model_schemas import (
    LQParams,
    MarketModelSpec,
    PerturbationParams,
)
from src.schemas.solver_schemas import SolverConfig


class TestLatticeEquilibrium(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = LQParams(
            gamma_f=1.0,
            gamma_g=0.8,
            gamma_l=1.0,
            sigma0=0.2,
            sigma=0.3,
            l0=0.1,
            m0=0.5,
            delta=0.25,
        )
        cls.model = lq_market(cls.params, N=2)
        cls.lattice = cls.model.build_lattice(2)
        cls.solution = solve_equilibrium(cls.model, cls.lattice)

    def test_matches_discrete_riccati(self):
        riccati = discrete_riccati(self.params, 2)
        expected = riccati.reconstruct(self.solution.X.values)
        for got, want in zip(self.solution.Y.values, expected):
            np.testing.assert_allclose(got, want, atol=1e-7)

    def test_market_clears(self):
        for rate in total_rates(self.solution, self.model, self.lattice):
            np.testing.assert_allclose(rate, 0.0, atol=1e-12)
        residual = clearing_residual(self.solution, self.model, self.lattice)
        self.assertLess(clearing_l2_norm(residual, self.lattice), 1e-12)

    def test_other_price_does_not_clear(self):
        zero = [
            np.zeros((self.lattice.level_size(k), 1)) for k in range(3)
        ]
        residual = clearing_residual(
            self.solution, self.model, self.lattice, zero
        )
        self.assertGreater(clearing_l2_norm(residual, self.lattice), 1e-3)

    def test_independent_of_initial_price(self):
        other = solve_equilibrium(self.model, self.lattice, initial_price=1.0)
        for a, b in zip(other.phi.values, self.solution.phi.values):
            np.testing.assert_allclose(a, b, atol=1e-8)

    def test_shapes_and_diagnostics(self):
        solution = self.solution
        self.assertEqual(solution.X.values[2].shape, (64, 2, 1))
        self.assertEqual(solution.phi.values[1].shape, (8, 1))
        self.assertEqual(solution.Z0[0].shape, (1, 2, 1, 1))
        self.assertEqual(solution.Zij[1].shape, (8, 2, 1, 2, 1))
        self.assertEqual(solution.diagnostics.solver, "picard")
        self.assertLessEqual(solution.diagnostics.residual, 1e-10)
        self.assertTrue(solution.diagnostics.cross_z_stored)

    def test_own_blocks_only(self):
        config = SolverConfig(store_cross_z=False)
        solution = solve_equilibrium(self.model, self.lattice, config)
        self.assertEqual(solution.Zij[1].shape, (8, 2, 1, 1))
        np.testing.assert_allclose(
            solution.Zij[1][:, 1], self.solution.Zij[1][:, 1, :, 1]
        )
        self.assertFalse(solution.diagnostics.cross_z_stored)

    def test_threads_do_not_change_result(self):
        threaded = solve_equilibrium(
            self.model, self.lattice, SolverConfig(threads=2)
        )
        for a, b in zip(threaded.Y.values, self.solution.Y.values):
            np.testing.assert_array_equal(a, b)

    def test_rates_are_optimal(self):
        alpha = self.solution.alpha(self.model)
        own = [level[:, 0] for level in alpha[:2]]
        price = self.solution.phi.values
        best = evaluate_cost(self.model, self.lattice, 0, own, price)
        for bump in (0.05, -0.05):
            shifted = [level + bump for level in own]
            cost = evaluate_cost(
                self.model, self.lattice, 0, shifted, price
            )
            self.assertGreater(cost, best)

    def test_price_taker_reproduces_agent(self):
        best = solve_decoupled(
            self.model, self.lattice, 1, self.solution.phi
        )
        for got, want in zip(best.Y, self.solution.Y.values):
            np.testing.assert_allclose(got, want[:, 1], atol=1e-8)
        self.assertEqual(best.Zij[0].shape, (1, 1, 2, 1))

    def test_price_taker_stall(self):
        config = SolverConfig(max_iters=1, tol=1e-14)
        with self.assertRaises(NonConvergenceError) as context:
            solve_decoupled(
                self.model, self.lattice, 0, self.solution.phi, config
            )
        self.assertEqual(len(context.exception.residual_history), 1)


class TestModelChecks(unittest.TestCase):
    def test_invalid_model_rejected(self):
        model = lq_market(LQParams(gamma_f=-1.0), N=2)
        lattice = model.build_lattice(1)
        with self.assertRaises(InvalidModelError) as context:
            solve_equilibrium(model, lattice)
        self.assertIn("allow_invalid", str(context.exception))

    def test_zero_model_with_override(self):
        params = LQParams(gamma_f=0.0, gamma_g=0.0, gamma_l=0.0, sigma=0.3)
        model = lq_market(params, N=2)
        lattice = model.build_lattice(2)
        solution = solve_equilibrium(
            model, lattice, SolverConfig(allow_invalid=True)
        )
        for level in solution.Y.values:
            np.testing.assert_allclose(level, 0.0, atol=1e-9)
        for level in solution.phi.values:
            np.testing.assert_allclose(level, 0.0, atol=1e-9)

    def test_heterogeneous_agents_clear(self):
        base = lq_market(LQParams(sigma=0.3), N=2)
        model = heterogeneous_model(base, [0.2, -0.2], "l0")
        lattice = model.build_lattice(2)
        solution = solve_equilibrium(model, lattice)
        for rate in total_rates(solution, model, lattice):
            np.testing.assert_allclose(rate, 0.0, atol=1e-12)

    def test_common_noise_only(self):
        params = LQParams(sigma0=0.2, sigma=0.0, l0=0.1)
        model = lq_market(params, N=2, d0=1, d=0)
        lattice = model.build_lattice(2)
        solution = solve_equilibrium(model, lattice)
        self.assertEqual(solution.X.values[2].shape, (4, 2, 1))
        self.assertEqual(solution.Zij[1].shape, (2, 2, 1, 2, 0))
        expected = discrete_riccati(params, 2).reconstruct(solution.X.values)
        for got, want in zip(solution.Y.values, expected):
            np.testing.assert_allclose(got, want, atol=1e-7)
        for rate in total_rates(solution, model, lattice):
            np.testing.assert_allclose(rate, 0.0, atol=1e-12)

    def test_two_securities_with_coupled_fees(self):
        model = MarketModel(
            MarketModelSpec(
                n=2,
                N=2,
                Lambda=[[2.0, 0.5], [0.5, 1.0]],
                coefficients={
                    "family": "lq",
                    "lq": {"sigma0": 0.2, "sigma": 0.3, "l0": 0.1},
                },
            )
        )
        lattice = model.build_lattice(1)
        solution = solve_equilibrium(model, lattice)
        for rate in total_rates(solution, model, lattice):
            self.assertEqual(rate.shape[-1], 2)
            np.testing.assert_allclose(rate, 0.0, atol=1e-12)
        alpha = solution.alpha(model)
        for a, y, phi in zip(alpha, solution.Y.values, solution.phi.values):
            np.testing.assert_allclose(
                a @ model.Lambda, -(y + phi[:, None, :]), atol=1e-12
            )

    def test_perturbed_family_solves(self):
        model = lq_market(
            LQParams(sigma=0.3),
            N=2,
            perturbation=PerturbationParams(
                epsilon_f=0.2, epsilon_g=0.1, kappa=0.1, rho=0.1
            ),
        )
        lattice = model.build_lattice(2)
        solution = solve_equilibrium(model, lattice)
        self.assertLess(newton_residual(model, lattice, solution), 1e-8)


class TestNewtonOracle(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.model = lq_market(
            LQParams(sigma0=0.2, sigma=0.3, l0=0.1, delta=0.25),
            N=2,
        )
        cls.lattice = cls.model.build_lattice(2)

    def test_system_size(self):
        system = DiscreteSystem(self.model, self.lattice)
        self.assertEqual(system.size, 2 * 73 * 2)
        u = np.arange(system.size, dtype=float)
        x, y = system.unpack(u)
        np.testing.assert_array_equal(system.pack(x, y), u)

    def test_agrees_with_picard(self):
        config = SolverConfig(newton_tol=1e-9)
        newton = solve_global_newton(self.model, self.lattice, config)
        picard = solve_equilibrium(self.model, self.lattice)
        for a, b in zip(newton.Y.values, picard.Y.values):
            np.testing.assert_allclose(a, b, atol=1e-7)
        self.assertEqual(newton.diagnostics.solver, "newton")
        self.assertIsNotNone(newton.diagnostics.condition_estimate)
        residual = newton_residual(self.model, self.lattice, picard)
        self.assertLess(residual, 1e-8)

    def test_size_cap(self):
        config = SolverConfig(newton_size_cap=10)
        with self.assertRaises(CapacityError) as context:
            solve_global_newton(self.model, self.lattice, config)
        self.assertIn("size cap", str(context.exception))

    def test_iteration_cap(self):
        config = SolverConfig(newton_max_iters=1, newton_tol=1e-300)
        with self.assertRaises(NonConvergenceError):
            solve_global_newton(self.model, self.lattice, config)


if __name__ == "__main__":
    unittest.main()
