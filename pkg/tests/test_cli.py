import contextlib
import io
import os
import tempfile
import unittest

import testutils as u

import cli
import logs
import protocol
import utils


def run_cli(argv):
	"""Returns (exit code, stdout, stderr)."""
	out, err = io.StringIO(), io.StringIO()
	with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
		code = cli.main(argv)
	return code, out.getvalue(), err.getvalue()


def printed(stdout):
	"""`key = value` lines of the printed summary."""
	values = {}
	for line in stdout.splitlines():
		if " = " in line and not line.startswith("#"):
			k, v = line.split(" = ", 1)
			values[k.strip()] = v.strip()
	return values


SINGLE = ["run-single", "--n", "2000", "--alpha-deg", "0", "--beta-deg", "60", "--gamma-deg", "120",
	"--lambda", "13.4", "--delta", "1", "--bob-morning-deg", "0", "--bob-evening-deg", "60"]


class TestCli(unittest.TestCase):

	def setUp(self):
		self.tmp = tempfile.TemporaryDirectory()
		self.addCleanup(self.tmp.cleanup)

	def path(self, *parts):
		return os.path.join(self.tmp.name, *parts)

	def test_run_single_is_reproducible(self):
		for name in ("a", "b"):
			code, _, _ = run_cli(SINGLE + ["--seed", "42", "--out", self.path(name)])
			self.assertEqual(code, 0)
		contents = []
		for name in ("a", "b"):
			with open(self.path(name, cli.LEDGER_NAME), "rb") as f:
				contents.append(f.read())
		self.assertEqual(contents[0], contents[1])
		self.assertTrue(os.path.exists(self.path("a", cli.MANIFEST_NAME)))
		manifest, cfg = cli.read_manifest(self.path("a", cli.MANIFEST_NAME))
		self.assertEqual(cfg.n_particles, 2000)
		self.assertEqual(manifest["seed"], "42")
		self.assertIn("coded_evening.csv", manifest["files"].split(","))

	def test_config_file_and_overrides(self):
		utils.write_flat_config(self.path("run.cfg"), {"n_particles": 10, "alpha_deg": 0, "beta_deg": 60,
			"gamma_deg": 120, "lambda": 1.0, "delta": 1.0, "seed": 5, "bob_morning_deg": 0, "bob_evening_deg": 60})
		code, _, _ = run_cli(["run-single", "--config", self.path("run.cfg"), "--n", "12", "--out", self.path("o")])
		self.assertEqual(code, 0)
		_, cfg = cli.read_manifest(self.path("o", cli.MANIFEST_NAME))
		self.assertEqual(cfg.n_particles, 12)
		self.assertEqual(cfg.seed, 5)

	def test_invalid_arguments(self):
		code, _, err = run_cli(SINGLE[:2] + ["3"] + SINGLE[3:] + ["--seed", "1", "--out", self.path("o")])
		self.assertEqual(code, 1)
		self.assertIn("error:", err)
		code, _, _ = run_cli(SINGLE + ["--seed", "1"])
		self.assertEqual(code, 2)

	def test_decode_scores_one(self):
		run_cli(SINGLE + ["--seed", "7", "--out", self.path("o")])
		code, out, _ = run_cli(["analyze", "--mode", "decode", "--ledger", self.path("o", cli.LEDGER_NAME),
			"--coded", self.path("o", "coded_morning.csv"), self.path("o", "coded_evening.csv")])
		self.assertEqual(code, 0)
		values = printed(out)
		self.assertEqual(values["score"], "1.0")
		self.assertEqual(values["decided"], "true")
		self.assertTrue(os.path.exists(self.path("o", cli.KEY_NAME)))
		self.assertTrue(os.path.exists(self.path("o", "report_decode.csv")))

	def test_malformed_ledger_fails(self):
		run_cli(SINGLE[:2] + ["20"] + SINGLE[3:] + ["--seed", "8", "--out", self.path("o")])
		ledger = self.path("o", cli.LEDGER_NAME)
		with open(ledger, "a") as f:
			f.write("not,a,ledger,line\n")
		code, _, err = run_cli(["analyze", "--mode", "correlate", "--ledger", ledger,
			"--coded", self.path("o", "coded_morning.csv")])
		self.assertEqual(code, 1)
		self.assertIn("line", err)

	def test_attack_on_small_run(self):
		run_cli(SINGLE[:2] + ["16"] + SINGLE[3:] + ["--seed", "9", "--out", self.path("o")])
		code, out, _ = run_cli(["attack", "--ledger", self.path("o", cli.LEDGER_NAME), "--repetitions", "3"])
		self.assertEqual(code, 0)
		values = printed(out)
		self.assertEqual(values["total_slicings"], "12870")
		self.assertEqual(values["repetitions"], "3")
		self.assertIn("ks_pvalue", values)
		self.assertTrue(os.path.exists(self.path("o", "report_attack_ranks.csv")))

	def test_attack_refuses_large_n(self):
		run_cli(SINGLE + ["--seed", "10", "--out", self.path("o")])
		code, _, err = run_cli(["attack", "--ledger", self.path("o", cli.LEDGER_NAME)])
		self.assertEqual(code, 1)
		self.assertIn("cap", err)

	def test_chsh_from_four_runs(self):
		manifests = []
		for i, (a, b) in enumerate([(0, 45), (0, 135), (90, 45), (90, 135)]):
			out = self.path("run{}".format(i))
			code, _, _ = run_cli(["run-epr", "--n", "200", "--alpha-deg", "0", "--beta-deg", "60", "--gamma-deg", "120",
				"--lambda", "0.1", "--delta", "1", "--seed", str(20 + i), "--bob-right-deg", str(a),
				"--bob-left-deg", str(b), "--out", out])
			self.assertEqual(code, 0)
			manifests.append(os.path.join(out, cli.MANIFEST_NAME))
		code, out, _ = run_cli(["analyze", "--mode", "chsh", "--manifest"] + manifests + ["--out", self.path("chsh")])
		self.assertEqual(code, 0)
		self.assertGreater(float(printed(out)["S"]), 2.0)
		self.assertTrue(os.path.exists(self.path("chsh", "report_chsh.csv")))
		code, _, _ = run_cli(["analyze", "--mode", "chsh", "--manifest"] + manifests[:3])
		self.assertEqual(code, 1)

	def test_key_secret_stays_out_of_the_manifest(self):
		code, _, _ = run_cli(SINGLE + ["--seed", "11", "--key-secret", "987654321", "--out", self.path("o")])
		self.assertEqual(code, 0)
		with open(self.path("o", cli.MANIFEST_NAME)) as f:
			manifest_text = f.read()
		self.assertNotIn("987654321", manifest_text)
		self.assertIn(cli.SEALED_KEY_NAME, manifest_text)
		self.assertEqual(protocol.read_sealed_key(self.path("o", cli.SEALED_KEY_NAME)), protocol.draw_coding_key(987654321))
		code, out, _ = run_cli(["analyze", "--mode", "decode", "--ledger", self.path("o", cli.LEDGER_NAME),
			"--coded", self.path("o", "coded_morning.csv"), self.path("o", "coded_evening.csv")])
		self.assertEqual(code, 0)
		self.assertEqual(printed(out)["score"], "1.0")
		self.assertEqual(utils.read_flat_config(self.path("o", cli.KEY_NAME)),
			protocol.draw_coding_key(987654321).to_mapping())

	def test_analysis_needs_the_sealed_key(self):
		run_cli(SINGLE[:2] + ["20"] + SINGLE[3:] + ["--seed", "12", "--out", self.path("o")])
		os.remove(self.path("o", cli.SEALED_KEY_NAME))
		code, _, _ = run_cli(["analyze", "--mode", "decode", "--ledger", self.path("o", cli.LEDGER_NAME),
			"--coded", self.path("o", "coded_morning.csv")])
		self.assertEqual(code, 1)

	def test_weak_chsh_from_two_runs(self):
		manifests = []
		for i, a in enumerate((0, 90)):
			out = self.path("run{}".format(i))
			code, _, _ = run_cli(["run-epr", "--n", "10000", "--alpha-deg", "45", "--beta-deg", "135", "--gamma-deg", "0",
				"--lambda", "10", "--delta", "1", "--seed", str(30 + i), "--bob-right-deg", str(a),
				"--bob-left-deg", "45", "--out", out])
			self.assertEqual(code, 0)
			manifests.append(os.path.join(out, cli.MANIFEST_NAME))
		code, out, _ = run_cli(["analyze", "--mode", "weak-chsh", "--manifest"] + manifests +
			["--weak-labels", "alpha", "beta", "--out", self.path("weak")])
		self.assertEqual(code, 0)
		values = printed(out)
		self.assertGreater(float(values["S"]), 2.2)
		self.assertEqual(values["decided_run1"], "true")
		self.assertTrue(os.path.exists(self.path("weak", "report_weak_chsh.csv")))
		code, _, _ = run_cli(["analyze", "--mode", "weak-chsh", "--manifest"] + manifests[:1])
		self.assertEqual(code, 1)

	def test_log_dir(self):
		self.addCleanup(logs.set_log_dir, os.path.dirname(logs.log_file_path))
		code, _, _ = run_cli(["--log-dir", self.path("logs")] + SINGLE[:2] + ["3"] + SINGLE[3:] +
			["--seed", "1", "--out", self.path("o")])
		self.assertEqual(code, 1)
		files = os.listdir(self.path("logs"))
		self.assertEqual(len(files), 1)
		with open(self.path("logs", files[0])) as f:
			self.assertIn("n_particles must be an even integer", f.read())


if __name__ == '__main__':
	unittest.main()
