import unittest
import numpy as np
from src.errors import AdaptednessError, CapacityError, ShapeError
from src.lattice.scenario_lattice import AdaptedProcess, build_lattice


class TestScenarioLattice(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.lattice = build_lattice(M=2, N=2, d0=1, d=1, T=1.0)
        cls.random_start = build_lattice(
            M=1, N=2, d0=1, d=1, T=1.0, initial_bits=1
        )

    def test_level_sizes(self):
        self.assertEqual(self.lattice.noise_dim, 3)
        self.assertEqual(self.lattice.branching, 8)
        self.assertEqual(
            [self.lattice.level_size(k) for k in range(3)], [1, 8, 64]
        )
        self.assertEqual(self.lattice.total_nodes, 73)
        self.assertAlmostEqual(self.lattice.probability(2), 1 / 64)

    def test_increments_are_moment_matched(self):
        inc = self.lattice.increments
        dt = self.lattice.dt
        np.testing.assert_allclose(inc.mean(axis=0), 0.0, atol=1e-15)
        np.testing.assert_allclose(
            inc.T @ inc / self.lattice.branching, dt * np.eye(3), atol=1e-15
        )

    def test_brownian_is_a_martingale(self):
        w2 = self.lattice.brownian(2)
        np.testing.assert_allclose(
            self.lattice.cond_expect(w2, 2), self.lattice.brownian(1)
        )

    def test_martingale_coefficients_of_brownian(self):
        z = self.lattice.martingale_coefficients(self.lattice.brownian(1), 1)
        self.assertEqual(z.shape, (1, 3, 3))
        np.testing.assert_allclose(z[0], np.eye(3), atol=1e-12)

    def test_reconstruct_affine_values(self):
        lattice = self.lattice
        values = 2.0 + lattice.brownian(2) @ np.array([1.0, -0.5, 3.0])
        mean = lattice.cond_expect(values, 2)
        z = lattice.martingale_coefficients(values, 2)
        np.testing.assert_allclose(
            lattice.reconstruct(z, mean, 2), values, atol=1e-12
        )

    def test_common_conditional_expectation(self):
        lattice = self.lattice
        w = lattice.brownian(2)
        np.testing.assert_allclose(
            lattice.cond_expect_common(w[:, 0], 2), w[:, 0]
        )
        np.testing.assert_allclose(
            lattice.cond_expect_common(w[:, 1:], 2), 0.0, atol=1e-15
        )
        self.assertEqual(len(lattice.common_values(w[:, 0], 2)), 4)
        lattice.check_common(w[:, 0], 2)
        with self.assertRaises(AdaptednessError):
            lattice.check_common(w[:, 1], 2)

    def test_wrong_level_size(self):
        with self.assertRaises(ShapeError):
            self.lattice.cond_expect(np.zeros(7), 1)

    def test_capacity_guard(self):
        with self.assertRaises(CapacityError) as context:
            build_lattice(M=10, N=4, d0=1, d=1, T=1.0)
        self.assertIn("above the limit", str(context.exception))

    def test_initial_layer(self):
        x0 = self.random_start.initial_states(np.array([1.0]), 0.5)
        self.assertEqual(x0.shape, (4, 2, 1))
        np.testing.assert_allclose(x0.mean(axis=0), 1.0)
        np.testing.assert_allclose(x0.var(axis=0), 0.25)
        with self.assertRaises(ShapeError):
            self.lattice.initial_states(np.array([1.0]), 0.5)

    def test_project_agent(self):
        rep = build_lattice(M=2, N=1, d0=1, d=1, T=1.0)
        for agent in range(2):
            projection = self.lattice.project_agent(rep, agent)
            for k in range(3):
                full = self.lattice.brownian(k)
                mapped = rep.brownian(k)[projection[k]]
                np.testing.assert_allclose(full[:, 0], mapped[:, 0])
                np.testing.assert_allclose(full[:, 1 + agent], mapped[:, 1])
        with self.assertRaises(ShapeError):
            self.lattice.project_agent(self.lattice, 0)

    def test_no_idiosyncratic_noise(self):
        lattice = build_lattice(M=2, N=3, d0=1, d=0, T=1.0)
        self.assertEqual(lattice.agent_increments(1).shape, (2, 3, 0))
        self.assertEqual(lattice.agent_increments(2).shape, (4, 3, 0))
        self.assertEqual(lattice.common_increments(2).shape, (4, 1))

    def test_running_max(self):
        levels = [self.lattice.brownian(k)[:, 0] for k in range(3)]
        best = self.lattice.running_max(levels)
        self.assertEqual(best.shape, (64,))
        self.assertTrue(np.all(best >= levels[2]))
        self.assertTrue(np.all(best >= 0.0))

    def test_to_rows(self):
        process = AdaptedProcess(
            [np.zeros((self.lattice.level_size(k), 1)) for k in range(3)]
        )
        rows = self.lattice.to_rows(process, "X")
        self.assertEqual(len(rows), 73)
        self.assertEqual(rows[0], [0, 0, 1.0, "X", 0, 0.0])

    def test_unknown_tag(self):
        with self.assertRaises(ShapeError):
            AdaptedProcess([np.zeros(1)], tag="partial")


if __name__ == "__main__":
    unittest.main()
