import math
import os
import tempfile
import unittest

import numpy as np
import pandas as pd
import testutils as u

import measurement as ms
import protocol
from spinalg import Orientation, Side


def true_signs(coded):
	"""The strong outcomes behind a coded list."""
	return coded.reveal_signs("test reference")


def row_signs(ledger, side, row):
	return np.where(ledger.row(side, row).to_numpy() >= 0, 1, -1)


class Guess:

	def __init__(self, mapping, above_is_up):
		self.mapping = mapping
		self.above_is_up = above_is_up


class TestExperimentConfig(unittest.TestCase):

	def test_validation(self):
		with self.assertRaises(ValueError):
			u.single_config(3, 1)
		with self.assertRaises(ValueError):
			u.single_config(10, 1, triad = (0.0, 60.0, 360.0))
		with self.assertRaises(ValueError):
			u.single_config(10, -1)
		with self.assertRaises(ValueError):
			u.epr_config(10, 1).with_updates(bob_evening_left = None)

	def test_schedule(self):
		cfg = u.single_config(10, 1, triad = (10.0, 50.0, 100.0))
		self.assertEqual([round(cfg.row_orientation(r).degrees) for r in range(1, 10)], [10, 50, 100] * 3)
		self.assertEqual(cfg.label_of(Orientation.from_degrees(50)), "beta")
		self.assertIsNone(cfg.label_of(Orientation.from_degrees(25)))
		self.assertEqual(cfg.sides, (Side.SINGLE,))
		self.assertEqual(u.epr_config(10, 1).sides, (Side.RIGHT, Side.LEFT))

	def test_collapse_first_row_pointer(self):
		cfg = u.epr_config(10, 1, collapse_first_row = True)
		self.assertAlmostEqual(cfg.pointer_for(Side.RIGHT, 1).delta, cfg.pointer.g / 1000)
		self.assertEqual(cfg.pointer_for(Side.LEFT, 1), cfg.pointer)
		self.assertEqual(cfg.pointer_for(Side.RIGHT, 2), cfg.pointer)

	def test_mapping_round_trip(self):
		cfg = u.epr_config(100, 42, right = protocol.FreeAngle((0.0, 90.0)), left = 45.0)
		mapping = cfg.to_mapping()
		self.assertEqual(mapping["bob_evening_right_deg"], "free:0,90")
		self.assertEqual(mapping["alpha_deg"], "0")
		again = protocol.ExperimentConfig.from_mapping(mapping)
		self.assertEqual(again.to_mapping(), mapping)
		self.assertEqual(again.bob_evening_right, protocol.FreeAngle((0.0, 90.0)))

	def test_from_mapping_errors(self):
		mapping = u.single_config(100, 1).to_mapping()
		with self.assertRaises(ValueError):
			protocol.ExperimentConfig.from_mapping(dict(mapping, colour = "red"))
		incomplete = dict(mapping)
		del incomplete["seed"]
		with self.assertRaises(ValueError):
			protocol.ExperimentConfig.from_mapping(incomplete)
		with self.assertRaises(ValueError):
			protocol.ExperimentConfig.from_mapping(dict(mapping, collapse_first_row = "maybe"))

	def test_free_default_choices(self):
		mapping = u.epr_config(100, 5).to_mapping()
		mapping["bob_evening_left_deg"] = "free"
		cfg = protocol.ExperimentConfig.from_mapping(mapping)
		self.assertEqual(cfg.bob_evening_left.choices_deg, (45.0, 135.0))

	def test_free_angle_is_reproducible(self):
		free = protocol.FreeAngle((0.0, 90.0))
		first = free.resolve(9, Side.RIGHT)
		self.assertEqual(first, free.resolve(9, Side.RIGHT))
		self.assertIn(round(first.degrees), (0, 90))
		chosen = {round(free.resolve(seed, Side.RIGHT).degrees) for seed in range(20)}
		self.assertEqual(chosen, {0, 90})


class TestStoneLedger(unittest.TestCase):

	def test_append_only(self):
		ledger = protocol.StoneLedger()
		ledger.append([1, 2], Side.SINGLE, 1, Orientation(0), [0.5, -0.5])
		frame = ledger.to_frame()
		frame.loc[0, "reading"] = 99.0
		self.assertEqual(ledger.to_frame().loc[0, "reading"], 0.5)
		self.assertEqual(list(ledger.to_frame()["binarized"]), ["U", "D"])
		ledger.finalize()
		with self.assertRaises(protocol.ProtocolOrderError):
			ledger.append([1, 2], Side.SINGLE, 2, Orientation(0), [0.1, 0.2])

	def test_append_validation(self):
		ledger = protocol.StoneLedger()
		with self.assertRaises(ValueError):
			ledger.append([1], Side.SINGLE, 10, Orientation(0), [0.1])
		with self.assertRaises(ValueError):
			ledger.append([1, 2], Side.SINGLE, 1, Orientation(0), [0.1])

	def test_csv_round_trip(self):
		run = protocol.run_single_particle(u.single_config(20, 3))
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, "ledger.csv")
			run.ledger.write_csv(path)
			loaded = protocol.StoneLedger.read_csv(path)
		pd.testing.assert_frame_equal(loaded.to_frame(), run.ledger.to_frame(), check_dtype = False)

	def test_malformed_csv_names_the_line(self):
		run = protocol.run_single_particle(u.single_config(4, 3))
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, "ledger.csv")
			run.ledger.write_csv(path)
			with open(path) as f:
				lines = f.read().splitlines()
			lines[2] = lines[2].replace(",S,", ",Q,")
			with open(path, "w") as f:
				f.write("\n".join(lines) + "\n")
			with self.assertRaises(protocol.LedgerFormatError) as cm:
				protocol.StoneLedger.read_csv(path)
			self.assertIn("line 3", str(cm.exception))

	def test_incomplete_ledger_is_rejected(self):
		run = protocol.run_single_particle(u.single_config(4, 3))
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, "ledger.csv")
			run.ledger.write_csv(path)
			with open(path) as f:
				lines = f.read().splitlines()
			with open(path, "w") as f:
				f.write("\n".join(lines[:-1]) + "\n")
			with self.assertRaises(protocol.LedgerFormatError):
				protocol.StoneLedger.read_csv(path)


class TestSingleParticleRun(unittest.TestCase):

	def test_ledger_shape(self):
		cfg = u.single_config(50, 11)
		ledger, morning, evening = protocol.run_single_particle(cfg)
		frame = ledger.to_frame()
		self.assertEqual(len(frame), 9 * 50)
		self.assertTrue((frame.groupby("serial").size() == 9).all())
		self.assertEqual(list(frame.columns), protocol.LEDGER_COLUMNS)
		self.assertTrue(ledger.finalized)
		ledger.validate()
		self.assertEqual(len(morning), 50)
		self.assertEqual(len(evening), 50)

	def test_wrong_kind_is_rejected(self):
		with self.assertRaises(ValueError):
			protocol.run_single_particle(u.epr_config(10, 1))
		with self.assertRaises(ValueError):
			protocol.run_epr(u.single_config(10, 1))

	def test_strong_limit_repeats_outcomes(self):
		cfg = u.single_config(40, 12, morning = 0.0, evening = 120.0)
		cfg = cfg.with_updates(pointer = cfg.pointer.strong_limit())
		run = protocol.run_single_particle(cfg)
		# row 1 repeats the morning measurement, the evening repeats row 9 (gamma)
		np.testing.assert_array_equal(row_signs(run.ledger, Side.SINGLE, 1), true_signs(run.morning))
		np.testing.assert_array_equal(row_signs(run.ledger, Side.SINGLE, 9), true_signs(run.evening))

	def test_weak_rows_sum_near_zero(self):
		n = 4000
		cfg = u.single_config(n, 13, strength = 0.1)
		ledger = protocol.run_single_particle(cfg).ledger
		bound = 4 * math.sqrt(n) * (cfg.pointer.delta + cfg.pointer.g)
		for r in range(1, 10):
			self.assertLess(abs(ledger.row(Side.SINGLE, r).sum()), bound)

	def test_sequential_law(self):
		n = 10000
		for theta in (0.0, 60.0, 90.0):
			cfg = u.single_config(n, 14, strength = 0.01, morning = 0.0, evening = theta)
			run = protocol.run_single_particle(cfg)
			product = true_signs(run.morning) * true_signs(run.evening)
			self.assertLess(abs(np.mean(product) - math.cos(math.radians(theta))), 0.04)

	def test_off_triad_letter(self):
		run = protocol.run_single_particle(u.single_config(10, 15, evening = 25.0))
		self.assertEqual(set(run.evening.records["coded_orientation"]), {protocol.OFF_TRIAD_LETTER})
		self.assertEqual(run.evening.letters_present, [])
		self.assertEqual(len(run.morning.letters_present), 1)

	def test_determinism_across_workers(self):
		cfg = u.single_config(300, 16)
		with tempfile.TemporaryDirectory() as tmp:
			contents = []
			for workers in (1, 4, 8):
				path = os.path.join(tmp, "ledger_{}.csv".format(workers))
				protocol.run_single_particle(cfg, workers = workers, ledger_path = path)
				with open(path, "rb") as f:
					contents.append(f.read())
		self.assertEqual(contents[0], contents[1])
		self.assertEqual(contents[0], contents[2])

	def test_replay_serial(self):
		cfg = u.single_config(30, 17)
		frame = protocol.run_single_particle(cfg).ledger.to_frame()
		expected = frame[frame["serial"] == 17].reset_index(drop = True)
		replayed = protocol.replay_serial(cfg, 17)
		cols = ["serial", "side", "row", "orientation_deg", "binarized"]
		self.assertTrue(u.compare_dts(expected, replayed, cols).empty)
		np.testing.assert_allclose(replayed["reading"], expected["reading"], rtol = 1e-12)
		with self.assertRaises(ValueError):
			protocol.replay_serial(cfg, 31)


class TestCodedList(unittest.TestCase):

	def setUp(self):
		self.cfg = u.single_config(20, 21, morning = 0.0, evening = 60.0)
		self.single_run = protocol.run_single_particle(self.cfg, key_secret = u.KEY_SECRET)
		self.key = protocol.draw_coding_key(u.KEY_SECRET)

	def correct_guess(self):
		return Guess({letter: self.key.label_for(letter) for letter in protocol.LETTERS}, self.key.above_is_up)

	def test_unseal_needs_a_guess(self):
		with self.assertRaises(protocol.ProtocolOrderError):
			self.single_run.morning.unseal()
		self.single_run.morning.register_guess(self.correct_guess())
		with self.assertRaises(protocol.ProtocolOrderError):
			self.single_run.morning.score()

	def test_correct_guess_scores_one(self):
		self.single_run.evening.register_guess(self.correct_guess())
		self.assertEqual(self.single_run.evening.unseal(), self.key)
		self.assertEqual(self.single_run.evening.score(), 1.0)
		wrong_sign = self.correct_guess()
		wrong_sign.above_is_up = not wrong_sign.above_is_up
		self.single_run.evening.register_guess(wrong_sign)
		self.assertEqual(self.single_run.evening.score(), 0.0)

	def test_random_permutation_scores_one_sixth(self):
		import itertools
		scores = []
		for perm in itertools.permutations(protocol.TRIAD_LABELS):
			self.single_run.morning.register_guess(Guess(dict(zip(protocol.LETTERS, perm)), self.key.above_is_up))
			self.single_run.morning.unseal()
			scores.append(self.single_run.morning.score())
		self.assertAlmostEqual(np.mean(scores), 1 / 6)

	def test_key_file_written_at_unseal(self):
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, "key.txt")
			self.single_run.morning.register_guess(self.correct_guess())
			self.single_run.morning.unseal(path)
			with open(path) as f:
				text = f.read()
		self.assertIn("alpha = {}".format(self.key.letters["alpha"]), text)

	def test_coding(self):
		letter = self.key.letters["alpha"]
		self.assertEqual(set(self.single_run.morning.records["coded_orientation"]), {letter})
		self.assertEqual(set(self.single_run.evening.records["coded_orientation"]), {self.key.letters["beta"]})

	def test_csv_round_trip(self):
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, "coded_morning.csv")
			self.single_run.morning.write_csv(path)
			loaded = protocol.CodedList.read_csv(path, Side.SINGLE, self.key, "morning")
			pd.testing.assert_frame_equal(loaded.records, self.single_run.morning.records, check_dtype = False)
			with open(path, "a") as f:
				f.write("21,q,above\n")
			with self.assertRaises(protocol.LedgerFormatError) as cm:
				protocol.CodedList.read_csv(path, Side.SINGLE, self.key)
			self.assertIn("line 22", str(cm.exception))

	def test_reveal_is_logged_and_bars_a_guess(self):
		with self.assertLogs('protocol', level = 'WARNING') as cm:
			signs = self.single_run.evening.reveal_signs("rank check")
		self.assertIn("rank check", cm.output[0])
		above = (self.single_run.evening.records["coded_value"] == protocol.ABOVE).to_numpy()
		np.testing.assert_array_equal(signs == 1, above if self.key.above_is_up else ~above)
		with self.assertRaises(protocol.ProtocolOrderError):
			self.single_run.evening.register_guess(self.correct_guess())

	def test_key_follows_its_secret_not_the_seed(self):
		self.assertNotEqual(protocol.new_key_secret(), protocol.new_key_secret())
		other = u.KEY_SECRET + 1
		run = protocol.run_single_particle(self.cfg, key_secret = other)
		self.single_run.morning.register_guess(self.correct_guess())
		run.morning.register_guess(self.correct_guess())
		self.assertEqual(run.morning.unseal(), protocol.draw_coding_key(other))
		self.assertEqual(self.single_run.morning.unseal(), self.key)
		pd.testing.assert_frame_equal(run.ledger.to_frame(), self.single_run.ledger.to_frame())

	def test_sealed_key_file(self):
		with tempfile.TemporaryDirectory() as tmp:
			path = os.path.join(tmp, "key.sealed")
			protocol.write_sealed_key(path, u.KEY_SECRET)
			self.assertEqual(protocol.read_sealed_key(path), self.key)
			with open(path, "w") as f:
				f.write("secret = not-a-number\n")
			with self.assertRaises(protocol.LedgerFormatError):
				protocol.read_sealed_key(path)


class TestEprRun(unittest.TestCase):

	def test_ledger_shape(self):
		cfg = u.epr_config(30, 31)
		ledger, right, left = protocol.run_epr(cfg)
		frame = ledger.to_frame()
		self.assertEqual(len(frame), 18 * 30)
		self.assertEqual(list(frame[frame["serial"] == 1]["side"]), ["R"] * 9 + ["L"] * 9)
		ledger.validate()
		self.assertEqual(right.side, Side.RIGHT)
		self.assertEqual(left.side, Side.LEFT)

	def test_evening_correlation(self):
		n = 20000
		cfg = u.epr_config(n, 32, strength = 0.01, right = 0.0, left = 45.0)
		run = protocol.run_epr(cfg)
		product = true_signs(run.right) * true_signs(run.left)
		self.assertLess(abs(np.mean(product) + math.cos(math.radians(45))), 0.03)

	def test_collapse_control_anticorrelates(self):
		n = 2000
		cfg = u.epr_config(n, 33, strength = 0.01, right = 90.0, left = 0.0, collapse_first_row = True)
		run = protocol.run_epr(cfg)
		agreement = np.mean(row_signs(run.ledger, Side.RIGHT, 1) == -true_signs(run.left))
		self.assertGreaterEqual(agreement, 0.995)

	def test_no_signaling(self):
		n = 10000
		for left in (0.0, 45.0, 120.0):
			cfg = u.epr_config(n, 34, strength = 0.01, right = 30.0, left = left)
			run = protocol.run_epr(cfg)
			up = np.mean(true_signs(run.right) == 1)
			self.assertTrue(u.within_se(up, 0.5, u.binomial_se(0.5, n), 4))

	def test_free_choice_is_reproducible(self):
		free = protocol.FreeAngle(protocol.DEFAULT_FREE_CHOICES[Side.RIGHT])
		cfg = u.epr_config(10, 35, right = free, left = protocol.FreeAngle(protocol.DEFAULT_FREE_CHOICES[Side.LEFT]))
		first = protocol.run_epr(cfg, key_secret = u.KEY_SECRET)
		second = protocol.run_epr(cfg, key_secret = u.KEY_SECRET)
		self.assertEqual(first.right_orientation, second.right_orientation)
		self.assertEqual(first.left_orientation, second.left_orientation)
		pd.testing.assert_frame_equal(first.right.records, second.right.records)

	def test_singlet_fidelity_after_weak_rows(self):
		triad = [Orientation.from_degrees(d) for d in (0.0, 60.0, 120.0)]
		fidelities = []
		for strength in (0.3, 0.1, 0.03, 0.01):
			pointer = ms.PointerConfig(strength, 1.0, 1)
			fidelities.append(protocol.singlet_fidelity_after_weak_rows(pointer, *triad, trials = 400, seed = 36))
		self.assertGreaterEqual(fidelities[-1], 0.999)
		self.assertEqual(fidelities, sorted(fidelities))


if __name__ == '__main__':
	unittest.main()
