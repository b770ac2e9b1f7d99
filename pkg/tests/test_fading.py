"""Tests for src/fading.py."""

import unittest

import numpy as np
from scipy import stats

from src.errors import ConfigError
from src.fading import FadingParams, db_to_amplitude, db_to_power, power_to_db, rician_sample


class TestFadingParams(unittest.TestCase):
    def test_default_constants(self):
        fp = FadingParams.from_table()
        k = 10**1.5
        self.assertAlmostEqual(fp.unblocked_amplitude**2, k / (1 + k), places=12)
        self.assertAlmostEqual(2 * fp.diffuse_sigma**2, 1 / (1 + k), places=12)
        self.assertAlmostEqual(fp.mean_unblocked_snr, 1.0, places=12)
        self.assertAlmostEqual(10 * np.log10(fp.k_factor), 15.0, places=9)
        self.assertAlmostEqual(fp.threshold, 0.01, places=12)

    def test_validation(self):
        with self.assertRaises(ConfigError):
            FadingParams(unblocked_amplitude=-1.0, diffuse_sigma=0.1)
        with self.assertRaises(ConfigError):
            FadingParams(unblocked_amplitude=1.0, diffuse_sigma=0.0)
        with self.assertRaises(ConfigError):
            FadingParams(unblocked_amplitude=1.0, diffuse_sigma=0.1, slot_seconds=0.0)

    def test_db_helpers(self):
        self.assertAlmostEqual(float(db_to_amplitude(-20.0)), 0.1)
        self.assertAlmostEqual(float(db_to_power(-20.0)), 0.01)
        self.assertAlmostEqual(float(power_to_db(0.01)), -20.0)


class TestRicianSample(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2024)

    def test_tiny_sigma_returns_amplitude(self):
        h = rician_sample(self.rng, 0.8, 1e-12, size=1000)
        np.testing.assert_allclose(h, 0.8, atol=1e-9)

    def test_rayleigh_mean(self):
        sigma = 0.3
        h = rician_sample(self.rng, 0.0, sigma, size=1_000_000)
        self.assertAlmostEqual(h.mean() / (sigma * np.sqrt(np.pi / 2)), 1.0, delta=0.01)

    def test_mean_power(self):
        a, sigma = 0.9, 0.2
        h = rician_sample(self.rng, a, sigma, size=1_000_000)
        self.assertAlmostEqual(np.mean(h * h) / (a * a + 2 * sigma * sigma), 1.0, delta=0.01)

    def test_unblocked_statistics(self):
        fp = FadingParams.from_table()
        h = rician_sample(self.rng, fp.unblocked_amplitude, fp.diffuse_sigma, size=1_000_000)
        power = h * h
        self.assertAlmostEqual(power.mean(), 1.0, delta=0.01)
        # moment-based K-factor estimate
        m2, m4 = power.mean(), np.mean(power * power)
        root = np.sqrt(2 * m2 * m2 - m4)
        k_hat = root / (m2 - root)
        self.assertAlmostEqual(10 * np.log10(k_hat), 15.0, delta=0.5)

    def test_matches_scipy_rice(self):
        fp = FadingParams.from_table()
        h = rician_sample(self.rng, fp.unblocked_amplitude, fp.diffuse_sigma, size=200_000)
        dist = stats.rice(fp.unblocked_amplitude / fp.diffuse_sigma, scale=fp.diffuse_sigma)
        result = stats.kstest(h, dist.cdf)
        self.assertGreater(result.pvalue, 1e-3)

    def test_array_amplitude(self):
        amp = np.array([[0.0, 0.5], [1.0, 0.2]])
        h = rician_sample(self.rng, amp, 0.1)
        self.assertEqual(h.shape, (2, 2))
        self.assertTrue(np.all(h >= 0))

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            rician_sample(self.rng, -0.1, 0.1)
        with self.assertRaises(ConfigError):
            rician_sample(self.rng, 0.5, 0.0)


if __name__ == "__main__":
    unittest.main()
