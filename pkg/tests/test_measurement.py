import math
import unittest

import numpy as np
import scipy.stats
import testutils as u

import measurement as ms
import spinalg as sa
import utils
from spinalg import Orientation, Side


def up_z():
	return sa.PureState([1, 0])


class TestPointerConfig(unittest.TestCase):

	def test_gain(self):
		cfg = ms.PointerConfig(100.0, 10.0, 10000)
		self.assertAlmostEqual(cfg.g, 1.0)
		self.assertTrue(cfg.is_weak)
		self.assertAlmostEqual(ms.PointerConfig(100.0, 1.0, 100, coupling_exponent = 1.0).g, 1.0)
		self.assertAlmostEqual(cfg.noise_sum_std(4), 20.0)

	def test_validation(self):
		with self.assertRaises(ValueError):
			ms.PointerConfig(1.0, 0.0, 10)
		with self.assertRaises(ValueError):
			ms.PointerConfig(-1.0, 1.0, 10)
		with self.assertRaises(ValueError):
			ms.PointerConfig(1.0, 1.0, 0)
		with self.assertRaises(ValueError):
			ms.PointerConfig(1.0, 1.0, 10, coupling_exponent = 0.7)

	def test_outside_weak_regime_is_logged_not_rejected(self):
		with self.assertLogs('measurement', level = 'WARNING'):
			cfg = ms.PointerConfig(10.0, 1.0, 1)
		self.assertFalse(cfg.is_weak)

	def test_strong_limit(self):
		cfg = ms.PointerConfig(2.0, 1.0, 4).strong_limit()
		self.assertAlmostEqual(cfg.g, 1.0)
		self.assertAlmostEqual(cfg.delta, 1e-3)
		with self.assertRaises(ValueError):
			ms.PointerConfig(0.0, 1.0, 4).strong_limit()


class TestReadings(unittest.TestCase):

	def test_binarize(self):
		self.assertEqual(ms.binarize(0.3), ms.Binary.UP)
		self.assertEqual(ms.binarize(-0.3), ms.Binary.DOWN)
		self.assertEqual(ms.binarize(0.0), ms.Binary.UP)
		self.assertEqual(ms.WeakReading(-1.0).binarized, ms.Binary.DOWN)
		self.assertEqual(ms.Binary.DOWN.sign, -1)
		with self.assertRaises(ValueError):
			ms.WeakReading(1.0, row_index = 10)
		with self.assertRaises(ValueError):
			ms.StrongOutcome(0)


class TestStrongMeasurement(unittest.TestCase):

	def test_eigenstate_is_certain(self):
		rng = utils.RandomStream(1, 1, "test")
		for _ in range(20):
			outcome, post = ms.strong_measure(up_z(), sa.spin_operator(Orientation(0)), rng)
			self.assertEqual(outcome.sign, 1)
			self.assertTrue(post.allclose(up_z()))

	def test_unbiased_frequency(self):
		n = 100000
		states = np.tile(up_z().amplitudes, (n, 1))
		rng = np.random.default_rng(11)
		signs, post = ms.strong_measure_batch(states, sa.Operator(sa.SIGMA_X), rng.random(n))
		self.assertTrue(u.within_se(np.mean(signs == 1), 0.5, u.binomial_se(0.5, n), 4))
		np.testing.assert_allclose(np.linalg.norm(post, axis = 1), 1.0)

	def test_sequential_correlation(self):
		n = 100000
		alpha = sa.spin_operator(Orientation.from_degrees(0))
		beta = sa.spin_operator(Orientation.from_degrees(60))
		states = np.tile(sa.eigenpair(alpha, 1).amplitudes, (n, 1))
		rng = np.random.default_rng(12)
		first, states = ms.strong_measure_batch(states, alpha, rng.random(n))
		second, _ = ms.strong_measure_batch(states, beta, rng.random(n))
		self.assertLess(abs(np.mean(first * second) - 0.5), 0.01)

	def test_dimension_mismatch(self):
		with self.assertRaises(sa.DimensionMismatchError):
			ms.strong_measure(sa.singlet_state(), sa.Operator(sa.SIGMA_Z), utils.RandomStream(1, 1, "test"))


class TestWeakMeasurement(unittest.TestCase):

	def test_eigenstate_unchanged(self):
		cfg = ms.PointerConfig(1.0, 1.0, 100)
		rng = utils.RandomStream(2, 1, "test")
		for _ in range(10):
			reading, post = ms.weak_measure(up_z(), sa.spin_operator(Orientation(0)), cfg, rng, row_index = 1)
			self.assertTrue(post.allclose(up_z(), atol = 1e-12))
			self.assertEqual(reading.row_index, 1)
			self.assertTrue(reading.orientation.is_close(Orientation(0)))

	def test_eigenstate_readings_are_gaussian(self):
		n = 10000
		cfg = ms.PointerConfig(50.0, 1.0, 100)
		states = np.tile(up_z().amplitudes, (n, 1))
		rng = np.random.default_rng(13)
		q, _ = ms.weak_measure_batch(states, sa.Operator(sa.SIGMA_Z), cfg, rng.random(n), rng.standard_normal(n))
		self.assertGreater(scipy.stats.kstest(q, "norm", args = (cfg.g, cfg.delta)).pvalue, 0.01)

	def test_no_coupling(self):
		cfg = ms.PointerConfig(0.0, 1.0, 100)
		s = sa.eigenpair(sa.SIGMA_X, 1)
		rng = utils.RandomStream(3, 1, "test")
		for _ in range(10):
			_, post = ms.weak_measure(s, sa.Operator(sa.SIGMA_Z), cfg, rng)
			self.assertTrue(post.allclose(s, atol = 1e-12))

	def test_half_sums_follow_pointer_statistics(self):
		# 100 runs of N = 10^4 readings on up spins, lambda / delta = 50
		n = 10000
		cfg = ms.PointerConfig(50.0, 1.0, n)
		rng = np.random.default_rng(14)
		half = n // 2
		expected = cfg.lam * math.sqrt(n) / 2
		tolerance = 3 * cfg.delta * math.sqrt(n) / math.sqrt(2)
		states = np.tile(up_z().amplitudes, (half, 1))
		inside = 0
		for _ in range(100):
			q, _ = ms.weak_measure_batch(states, sa.Operator(sa.SIGMA_Z), cfg, rng.random(half), rng.standard_normal(half))
			inside += abs(q.sum() - expected) <= tolerance
		self.assertGreaterEqual(inside, 98)

	def test_reading_mixture_matches_analytic_cdf(self):
		n = 10000
		cfg = ms.PointerConfig(30.0, 1.0, 100)
		s = sa.PureState.normalized([2, 1])
		op = sa.Operator(sa.SIGMA_Z)
		rng = np.random.default_rng(15)
		q, _ = ms.weak_measure_batch(np.tile(s.amplitudes, (n, 1)), op, cfg, rng.random(n), rng.standard_normal(n))
		p_plus = sa.born_probability(s, op, 1)
		result = scipy.stats.kstest(q, lambda x: ms.reading_mixture_cdf(x, p_plus, cfg))
		self.assertGreater(result.pvalue, 0.01)

	def test_norm_and_back_action(self):
		rng = np.random.default_rng(16)
		op = sa.spin_operator(Orientation.from_degrees(60))
		s = sa.eigenpair(sa.SIGMA_X, 1)
		n = 5000
		previous = 1.0
		for strength in (0.01, 0.03, 0.1, 0.3):
			cfg = ms.PointerConfig(strength, 1.0, 1)
			q, post = ms.weak_measure_batch(np.tile(s.amplitudes, (n, 1)), op, cfg, rng.random(n), rng.standard_normal(n))
			np.testing.assert_allclose(np.linalg.norm(post, axis = 1), 1.0, atol = 1e-10)
			fid = float(np.mean(np.abs(post @ s.amplitudes.conj()) ** 2))
			if strength <= 0.1:
				self.assertGreaterEqual(fid, 1 - strength ** 2 / 2 - 1e-3)
			self.assertLessEqual(fid, previous + 1e-3)
			previous = fid

	def test_strong_limit_agrees_with_projective(self):
		n = 20000
		cfg = ms.PointerConfig(1.0, 0.01, 1)
		op = sa.spin_operator(Orientation.from_degrees(40))
		s = sa.eigenpair(sa.SIGMA_X, 1)
		rng = np.random.default_rng(17)
		q, post = ms.weak_measure_batch(np.tile(s.amplitudes, (n, 1)), op, cfg, rng.random(n), rng.standard_normal(n))
		signs, _ = ms.strong_measure_batch(post, op, rng.random(n))
		self.assertGreaterEqual(np.mean(np.where(q >= 0, 1, -1) == signs), 0.999)

	def test_pair_measurement(self):
		cfg = ms.PointerConfig(0.01, 1.0, 1)
		rng = utils.RandomStream(4, 1, "test")
		singlet = sa.singlet_state()
		_, post = ms.weak_measure_pair(singlet, sa.spin_operator(Orientation(0.3)), Side.LEFT, cfg, rng)
		self.assertGreaterEqual(sa.fidelity(post, singlet), 0.999)
		with self.assertRaises(sa.DimensionMismatchError):
			ms.weak_measure_pair(up_z(), sa.Operator(sa.SIGMA_Z), Side.LEFT, cfg, rng)

	def test_pair_collapse_anticorrelates(self):
		n = 2000
		cfg = ms.PointerConfig(1.0, 0.001, 1)
		alpha = sa.spin_operator(Orientation.from_degrees(30))
		rng = np.random.default_rng(18)
		states = np.tile(sa.singlet_state().amplitudes, (n, 1))
		q, states = ms.weak_measure_batch(states, sa.embed(alpha, Side.LEFT), cfg, rng.random(n), rng.standard_normal(n))
		right, _ = ms.strong_measure_batch(states, sa.embed(alpha, Side.RIGHT), rng.random(n))
		np.testing.assert_array_equal(np.where(q >= 0, 1, -1), -right)

	def test_singlet_readings_are_symmetric(self):
		n = 20000
		cfg = ms.PointerConfig(0.1, 1.0, 1)
		rng = np.random.default_rng(19)
		states = np.tile(sa.singlet_state().amplitudes, (n, 1))
		q, _ = ms.weak_measure_batch(states, sa.embed(sa.spin_operator(Orientation(1.0)), Side.RIGHT), cfg,
			rng.random(n), rng.standard_normal(n))
		self.assertLess(abs(np.mean(q)), 3 * cfg.delta / math.sqrt(n) + 3 * cfg.g / math.sqrt(n))


if __name__ == '__main__':
	unittest.main()
