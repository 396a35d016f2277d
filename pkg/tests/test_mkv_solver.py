import unittest
import numpy as np
from src.errors import InvalidModelError, ShapeError
from src.fbsde.clearing import clearing_l2_norm
from src.lqoracle.riccati import discrete_clearing_variance, discrete_riccati
from src.mfg.mkv_solver import (
    extend_price,
    lift_to_agents,
    mfg_clearing_residual,
    solve_mkv,
)
from src.model.market import heterogeneous_model, lq_market
from src.schemas.model_schemas import LQParams


class TestMkvSolver(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = LQParams(
            gamma_f=1.0,
            gamma_g=0.8,
            gamma_l=1.0,
            sigma0=0.3,
            sigma=0.4,
            l0=0.2,
            m0=0.5,
            delta=0.25,
        )
        cls.model = lq_market(cls.params, N=3)
        cls.rep_lattice = cls.model.representative().build_lattice(3)
        cls.mkv = solve_mkv(cls.model, cls.rep_lattice)

    def test_fixed_point(self):
        self.assertLess(self.mkv.fixed_point_residual(), 1e-9)
        self.assertEqual(self.mkv.diagnostics.solver, "mkv")
        for k, level in enumerate(self.mkv.phi_mfg.values):
            self.rep_lattice.check_common(level, k)

    def test_price_matches_riccati(self):
        riccati = discrete_riccati(self.params, 3)
        for k, (x, phi) in enumerate(
            zip(self.mkv.X.values, self.mkv.phi_mfg.values)
        ):
            xbar = self.rep_lattice.cond_expect_common(x, k)
            expected = -(riccati.P[k] * xbar + riccati.q[k])
            np.testing.assert_allclose(phi, expected, atol=1e-7)

    def test_shapes(self):
        self.assertEqual(self.mkv.X.values[3].shape, (64, 1))
        self.assertEqual(self.mkv.Z0[0].shape, (1, 1, 1))
        self.assertEqual(self.mkv.Zii[2].shape, (16, 1, 1))

    def test_lift_to_agents(self):
        lattice = lq_market(self.params, N=2).build_lattice(3)
        lifted = lift_to_agents(self.mkv, lattice)
        self.assertEqual(lifted.X[3].shape, (lattice.level_size(3), 2, 1))
        self.assertEqual(lifted.Zii[2].shape, (lattice.level_size(2), 2, 1, 1))
        projection = lattice.project_agent(self.rep_lattice, 1)
        np.testing.assert_array_equal(
            lifted.Y[2][:, 1], self.mkv.Y.values[2][projection[2]]
        )
        phi = extend_price(self.mkv, lattice)
        self.assertEqual(phi.tag, "common")
        np.testing.assert_array_equal(lifted.phi[3], phi.values[3])

    def test_clearing_residual_matches_variance(self):
        for N in (2, 4):
            lattice = lq_market(self.params, N=N).build_lattice(3)
            residual = mfg_clearing_residual(self.mkv, self.model, lattice)
            predicted = discrete_clearing_variance(self.params, N, 3)
            expected = np.sqrt(
                predicted.times[1] * np.sum(predicted.P**2 * predicted.v)
            )
            self.assertAlmostEqual(
                clearing_l2_norm(residual, lattice) / expected,
                1.0,
                places=6,
            )

    def test_grid_mismatch(self):
        lattice = lq_market(self.params, N=2).build_lattice(2)
        with self.assertRaises(ShapeError):
            mfg_clearing_residual(self.mkv, self.model, lattice)
        with self.assertRaises(ShapeError):
            solve_mkv(self.model, lattice)

    def test_heterogeneous_rejected(self):
        model = heterogeneous_model(self.model, [0.1, 0.0, -0.1], "l0")
        with self.assertRaises(InvalidModelError):
            solve_mkv(model, self.rep_lattice)


if __name__ == "__main__":
    unittest.main()
