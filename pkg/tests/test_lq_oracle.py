import unittest
import numpy as np
from src.errors import (
    DegenerateParameterError,
    DomainError,
    UnsupportedFamilyError,
)
from src.lqoracle.riccati import (
    DEVIATION,
    MEAN,
    clearing_variance,
    continuous_riccati,
    discrete_clearing_variance,
    discrete_gap_variance,
    discrete_riccati,
    gap_variance,
    riccati_closed_form,
    riccati_offset,
    riccati_rk4,
)
from src.lqoracle.simulate import simulate_lq
from src.schemas.model_schemas import LQParams


class TestRiccati(unittest.TestCase):
    def setUp(self):
        self.params = LQParams(
            gamma_f=1.0,
            gamma_g=0.5,
            gamma_l=2.0,
            lam=1.5,
            sigma0=0.2,
            sigma=0.4,
            l0=0.3,
            delta=0.2,
        )

    def test_closed_form_matches_rk4(self):
        times = np.linspace(0.0, self.params.T, 1001)
        for which in (MEAN, DEVIATION):
            exact = riccati_closed_form(self.params, which, times)
            np.testing.assert_allclose(
                riccati_rk4(self.params, which, 1000), exact, atol=1e-10
            )

    def test_terminal_values(self):
        T = self.params.T
        self.assertAlmostEqual(
            riccati_closed_form(self.params, MEAN, T), 0.5 / 0.8
        )
        self.assertAlmostEqual(
            riccati_closed_form(self.params, DEVIATION, T), 0.5
        )

    def test_relaxes_to_fixed_point(self):
        long = self.params.model_copy(update={"T": 40.0})
        solution = continuous_riccati(long, 10)
        self.assertAlmostEqual(solution.P[0], solution.k, places=8)
        self.assertAlmostEqual(solution.p[0], solution.k_dev, places=8)
        self.assertAlmostEqual(solution.k, np.sqrt(1.0 / 2.0))

    def test_scheme_converges_to_ode(self):
        exact = continuous_riccati(self.params, 4000)
        scheme = discrete_riccati(self.params, 4000)
        np.testing.assert_allclose(scheme.P, exact.P, atol=1e-3)
        np.testing.assert_allclose(scheme.p, exact.p, atol=1e-3)
        np.testing.assert_allclose(scheme.q, exact.q, atol=1e-3)

    def test_offset_vanishes_without_flow_level(self):
        params = self.params.model_copy(update={"l0": 0.0})
        times = np.linspace(0.0, 1.0, 5)
        np.testing.assert_array_equal(riccati_offset(params, times), 0.0)
        self.assertEqual(riccati_offset(self.params, times)[-1], 0.0)

    def test_linear_source_free_branch(self):
        params = self.params.model_copy(update={"gamma_f": 0.0})
        value = riccati_closed_form(params, MEAN, 0.0)
        self.assertAlmostEqual(value, 0.625 / (1.0 + 2.0 * 0.625))

    def test_degenerate_parameters(self):
        flat = self.params.model_copy(update={"gamma_l": 0.0})
        with self.assertRaises(DegenerateParameterError):
            riccati_closed_form(flat, MEAN, 0.0)
        scheme = discrete_riccati(flat, 10)
        self.assertTrue(np.isnan(scheme.k))
        with self.assertRaises(DomainError):
            riccati_closed_form(self.params, "other", 0.0)
        with self.assertRaises(DomainError):
            discrete_riccati(self.params, 0)


class TestVarianceRecursions(unittest.TestCase):
    def setUp(self):
        self.params = LQParams(sigma=0.5, s0=0.3, gamma_l=1.0)

    def test_gap_variance_scales_with_population(self):
        one = gap_variance(self.params, 1, steps=50)
        ten = gap_variance(self.params, 10, steps=50)
        np.testing.assert_allclose(ten.v, one.v / 10, rtol=1e-8)
        self.assertAlmostEqual(one.v[0], 0.09)
        with self.assertRaises(DomainError):
            gap_variance(self.params, 0)

    def test_scheme_variance_converges(self):
        exact = gap_variance(self.params, 4, steps=2000)
        scheme = discrete_gap_variance(self.params, 4, 2000)
        np.testing.assert_allclose(scheme.v, exact.v, atol=1e-3)
        exact = clearing_variance(self.params, 4, steps=2000)
        scheme = discrete_clearing_variance(self.params, 4, 2000)
        np.testing.assert_allclose(scheme.v, exact.v, atol=1e-3)
        np.testing.assert_allclose(scheme.P, exact.P, atol=1e-3)

    def test_predicted_gap(self):
        scheme = discrete_gap_variance(self.params, 4, 10)
        np.testing.assert_allclose(
            scheme.predicted_gap, scheme.P**2 * scheme.v
        )


class TestPathSimulation(unittest.TestCase):
    def setUp(self):
        self.params = LQParams(sigma0=0.2, sigma=0.5, s0=0.3, l0=0.1)

    def test_seeded_and_thread_independent(self):
        first = simulate_lq(self.params, 5, 10, 300, seed=11, block_size=64)
        again = simulate_lq(
            self.params, 5, 10, 300, seed=11, block_size=64, threads=3
        )
        np.testing.assert_array_equal(first.phi_ho, again.phi_ho)
        np.testing.assert_array_equal(first.phi_mfg, again.phi_mfg)
        self.assertEqual(first.paths, 300)

    def test_price_gap_matches_variance(self):
        N, steps = 4, 10
        ensemble = simulate_lq(self.params, N, steps, 8000, seed=5)
        gap, stderr = ensemble.squared_price_gap()
        predicted = discrete_gap_variance(self.params, N, steps)
        zscore = np.abs(gap - predicted.predicted_gap) / stderr
        self.assertLess(float(np.max(zscore)), 5.0)

    def test_mean_field_adjoints(self):
        ensemble = simulate_lq(self.params, 4, 5, 20, seed=2, agents=3)
        self.assertEqual(ensemble.mean_field_adjoints().shape, (20, 6, 3, 1))
        bare = simulate_lq(self.params, 4, 5, 20, seed=2)
        with self.assertRaises(DomainError):
            bare.mean_field_adjoints()

    def test_common_noise_is_shared(self):
        params = self.params.model_copy(update={"sigma": 0.0, "s0": 0.0})
        ensemble = simulate_lq(params, 3, 5, 50, seed=9)
        np.testing.assert_allclose(ensemble.phi_ho, ensemble.phi_mfg)

    def test_rejects_other_initial_laws(self):
        with self.assertRaises(UnsupportedFamilyError):
            simulate_lq(
                self.params, 2, 5, 10, seed=0, initial_family="two_point"
            )
        with self.assertRaises(DomainError):
            simulate_lq(self.params, 2, 5, 0, seed=0)


if __name__ == "__main__":
    unittest.main()
