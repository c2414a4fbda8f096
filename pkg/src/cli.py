import argparse
import os
import sys
import time

import numpy as np
import pandas as pd

sys.path.append(os.path.dirname(os.path.realpath(__file__)))

import analysis
import logs
import protocol
import utils
from spinalg import Side

logger = logs.logging.getLogger('cli')

VERSION = "0.1.0"

MANIFEST_NAME = "manifest.txt"
LEDGER_NAME = "ledger.csv"
SUMMARY_NAME = "summary.txt"
KEY_NAME = "key.txt"
SEALED_KEY_NAME = "key.sealed"
CONFIG_PREFIX = "config."

# errors that end a command with exit code 1
EXPECTED_ERRORS = (ValueError, TypeError, RuntimeError, OSError, KeyError)


# argument parsing ---------------------------------------------------------------

def _add_run_arguments(parser):
	parser.add_argument("--config", help = "flat key = value config file; flags override it")
	parser.add_argument("--n", type = int, help = "number of particles (pairs), even")
	parser.add_argument("--alpha-deg", type = float)
	parser.add_argument("--beta-deg", type = float)
	parser.add_argument("--gamma-deg", type = float)
	parser.add_argument("--lambda", dest = "lam", type = float, help = "coupling constant")
	parser.add_argument("--delta", type = float, help = "pointer noise standard deviation")
	parser.add_argument("--coupling-exponent", type = float, choices = [0.5, 1.0])
	parser.add_argument("--seed", type = int)
	parser.add_argument("--key-secret", type = int,
		help = "secret of the coding key; fresh from OS entropy by default, kept only in key.sealed")
	parser.add_argument("--out", required = True, help = "output directory")
	parser.add_argument("--workers", type = int, default = 1)
	parser.add_argument("--collapse-first-row", action = "store_true",
		help = "measure the first weak row with a collapsing pointer")
	parser.add_argument("--strong-limit", action = "store_true",
		help = "replace the pointer by its strong limit (delta = g / 1000) in every row")


def build_parser():
	parser = argparse.ArgumentParser(prog = "weak_epr", description = "Weak-measurement EPR simulator.")
	parser.add_argument("--version", action = "version", version = "%(prog)s " + VERSION)
	parser.add_argument("--log-dir", help = "directory of the log file; defaults to ./logs")
	sub = parser.add_subparsers(dest = "command", required = True)

	single = sub.add_parser("run-single", help = "single-particle experiment")
	_add_run_arguments(single)
	single.add_argument("--bob-morning-deg", type = float)
	single.add_argument("--bob-evening-deg", type = float)
	single.add_argument("--bob-free", action = "store_true", help = "seeded late choice of the evening angle")

	epr = sub.add_parser("run-epr", help = "EPR-pair experiment")
	_add_run_arguments(epr)
	epr.add_argument("--bob-right-deg", type = float)
	epr.add_argument("--bob-left-deg", type = float)
	epr.add_argument("--bob-free", action = "store_true", help = "seeded late choice of both evening angles")

	analyze = sub.add_parser("analyze", help = "analyze a recorded run")
	analyze.add_argument("--mode", required = True, choices = ["decode", "correlate", "infer", "chsh", "weak-chsh"])
	analyze.add_argument("--ledger")
	analyze.add_argument("--coded", nargs = "+", default = [])
	analyze.add_argument("--manifest", nargs = "+",
		help = "run manifest (four manifests for chsh); defaults to the one next to the ledger")
	analyze.add_argument("--out", help = "report directory; defaults to the ledger's directory")
	analyze.add_argument("--true-deg", type = float, help = "infer: report the error against this angle")
	analyze.add_argument("--weak-labels", nargs = 2, default = ["alpha", "beta"], choices = list(protocol.TRIAD_LABELS),
		help = "weak-chsh: triad orientations of the left rows used as b and b'")

	attack = sub.add_parser("attack", help = "exhaustive prediction attack on a recorded run")
	attack.add_argument("--ledger", required = True)
	attack.add_argument("--manifest")
	attack.add_argument("--n-cap", type = int, default = 20)
	attack.add_argument("--repetitions", type = int, default = 1)
	attack.add_argument("--row", type = int, default = protocol.N_ROWS)
	attack.add_argument("--out")
	return parser


# config and manifest ---------------------------------------------------------------

def _config_from_args(args, kind):
	mapping = utils.read_flat_config(args.config) if args.config else {}
	overrides = {
		"n_particles": args.n,
		"alpha_deg": args.alpha_deg,
		"beta_deg": args.beta_deg,
		"gamma_deg": args.gamma_deg,
		"lambda": args.lam,
		"delta": args.delta,
		"coupling_exponent": args.coupling_exponent,
		"seed": args.seed
	}
	if kind == protocol.ExperimentKind.SINGLE_PARTICLE:
		overrides["bob_morning_deg"] = args.bob_morning_deg
		overrides["bob_evening_deg"] = "free" if args.bob_free else args.bob_evening_deg
	else:
		overrides["bob_evening_right_deg"] = "free" if args.bob_free else args.bob_right_deg
		overrides["bob_evening_left_deg"] = "free" if args.bob_free else args.bob_left_deg
	mapping.update({k: str(v) for k, v in overrides.items() if v is not None})
	mapping["experiment_kind"] = kind.value
	if args.collapse_first_row:
		mapping["collapse_first_row"] = "true"
	cfg = protocol.ExperimentConfig.from_mapping(mapping)
	if args.strong_limit:
		cfg = cfg.with_updates(pointer = cfg.pointer.strong_limit())
	return cfg


def write_manifest(out_dir, cfg, files, duration, command):
	"""Written last: its presence marks a complete run directory."""
	mapping = {
		"version": VERSION,
		"command": command,
		"seed": str(cfg.seed),
		"gain": repr(float(cfg.pointer.g)),
		"delta": repr(float(cfg.pointer.delta)),
		"files": ",".join(files),
		"duration_seconds": "{:.3f}".format(duration)
	}
	mapping.update({CONFIG_PREFIX + k: v for k, v in cfg.to_mapping().items()})
	return utils.write_flat_config(os.path.join(out_dir, MANIFEST_NAME), mapping, header = "weak_epr run manifest")


def read_manifest(path):
	"""Returns (manifest mapping, ExperimentConfig)."""
	manifest = utils.read_flat_config(path)
	config = {k[len(CONFIG_PREFIX):]: v for k, v in manifest.items() if k.startswith(CONFIG_PREFIX)}
	return manifest, protocol.ExperimentConfig.from_mapping(config)


def _manifest_path(ledger_path, given):
	if given:
		return given
	return os.path.join(os.path.dirname(os.path.abspath(ledger_path)), MANIFEST_NAME)


def _load_ledger(path, manifest):
	return protocol.StoneLedger.read_csv(path, metadata = {"gain": float(manifest["gain"]),
		"delta": float(manifest["delta"]), "seed": int(manifest["seed"])})


def _load_coded(path, cfg):
	"""Side follows the file name (coded_right / coded_left); the key comes
	sealed from the `key.sealed` file next to the list."""
	name = os.path.basename(path)
	if name.startswith("coded_"):
		name = name[len("coded_"):]
	name = os.path.splitext(name)[0]
	if cfg.experiment_kind == protocol.ExperimentKind.SINGLE_PARTICLE:
		side = Side.SINGLE
	elif name in ("right", "left"):
		side = Side.RIGHT if name == "right" else Side.LEFT
	else:
		raise ValueError("Cannot tell the side of coded list {}; name it coded_right.csv or coded_left.csv".format(path))
	key = protocol.read_sealed_key(os.path.join(os.path.dirname(os.path.abspath(path)), SEALED_KEY_NAME))
	return protocol.CodedList.read_csv(path, side, key, name)


def _write_summary(out_dir, mapping, table = None):
	text = utils.format_flat_config(mapping)
	if table is not None:
		text += "\n" + table.to_string(index = False) + "\n"
	utils.write_atomic(os.path.join(out_dir, SUMMARY_NAME), lambda handle: handle.write(text))
	print(text, end = "")


def _write_report(out_dir, name, frame):
	path = os.path.join(out_dir, name)
	utils.write_atomic(path, lambda handle: frame.to_csv(handle, index = False))
	return name


# commands -----------------------------------------------------------------------

def _slice_tables(ledger, coded_lists):
	tables = []
	for coded in coded_lists:
		table = analysis.sliced_row_table(ledger, analysis.BinaryLine.from_coded(coded))
		table.insert(0, "list", coded.name)
		tables.append(table)
	return pd.concat(tables, ignore_index = True)


def _key_secret(args):
	try:
		if args.key_secret is not None and not (0 <= args.key_secret < protocol.KEY_SECRET_LIMIT):
			raise ValueError("--key-secret must lie in [0, 2**63), was {}".format(args.key_secret))
	except Exception as e:
		logger.exception(e)
		raise
	return protocol.new_key_secret() if args.key_secret is None else args.key_secret


def cmd_run_single(args):
	start = time.monotonic()
	cfg = _config_from_args(args, protocol.ExperimentKind.SINGLE_PARTICLE)
	os.makedirs(args.out, exist_ok = True)
	secret = _key_secret(args)
	run = protocol.run_single_particle(cfg, workers = args.workers, ledger_path = os.path.join(args.out, LEDGER_NAME),
		key_secret = secret)
	protocol.write_sealed_key(os.path.join(args.out, SEALED_KEY_NAME), secret)
	run.morning.write_csv(os.path.join(args.out, "coded_morning.csv"))
	run.evening.write_csv(os.path.join(args.out, "coded_evening.csv"))
	slices = _slice_tables(run.ledger, [run.morning, run.evening])
	files = [LEDGER_NAME, "coded_morning.csv", "coded_evening.csv", SEALED_KEY_NAME,
		_write_report(args.out, "report_slices.csv", slices)]
	summary = {
		"experiment": cfg.experiment_kind.value,
		"n_particles": cfg.n_particles,
		"seed": cfg.seed,
		"g": repr(cfg.pointer.g),
		"delta": repr(cfg.pointer.delta),
		"morning_evening_correlation": "{:.6f}".format(analysis.correlation(
			analysis.BinaryLine.from_coded(run.morning), analysis.BinaryLine.from_coded(run.evening))),
		"evening_deg": "{:.12g}".format(run.evening_orientation.degrees)
	}
	_write_summary(args.out, summary, slices[slices["list"] == "evening"].drop(columns = "list"))
	files.append(SUMMARY_NAME)
	write_manifest(args.out, cfg, files, time.monotonic() - start, "run-single")
	return 0


def cmd_run_epr(args):
	start = time.monotonic()
	cfg = _config_from_args(args, protocol.ExperimentKind.EPR_PAIR)
	os.makedirs(args.out, exist_ok = True)
	secret = _key_secret(args)
	run = protocol.run_epr(cfg, workers = args.workers, ledger_path = os.path.join(args.out, LEDGER_NAME),
		key_secret = secret)
	protocol.write_sealed_key(os.path.join(args.out, SEALED_KEY_NAME), secret)
	run.right.write_csv(os.path.join(args.out, "coded_right.csv"))
	run.left.write_csv(os.path.join(args.out, "coded_left.csv"))
	slices = _slice_tables(run.ledger, [run.right, run.left])
	files = [LEDGER_NAME, "coded_right.csv", "coded_left.csv", SEALED_KEY_NAME,
		_write_report(args.out, "report_slices.csv", slices)]
	summary = {
		"experiment": cfg.experiment_kind.value,
		"n_particles": cfg.n_particles,
		"seed": cfg.seed,
		"g": repr(cfg.pointer.g),
		"delta": repr(cfg.pointer.delta),
		"evening_correlation": "{:.6f}".format(analysis.correlation(
			analysis.BinaryLine.from_coded(run.right), analysis.BinaryLine.from_coded(run.left))),
		"evening_right_deg": "{:.12g}".format(run.right_orientation.degrees),
		"evening_left_deg": "{:.12g}".format(run.left_orientation.degrees)
	}
	_write_summary(args.out, summary, slices[slices["list"] == "right"].drop(columns = "list"))
	files.append(SUMMARY_NAME)
	write_manifest(args.out, cfg, files, time.monotonic() - start, "run-epr")
	return 0


def _analyze_decode(ledger, coded_lists, out_dir):
	decoded = analysis.decode(ledger, coded_lists)
	for coded in coded_lists:
		coded.register_guess(decoded)
	key_path = os.path.join(out_dir, KEY_NAME)
	coded_lists[0].unseal(key_path)
	scores = []
	for coded in coded_lists:
		coded.unseal()
		scores.append(coded.score())
	reports = [_write_report(out_dir, "report_decode.csv", decoded.table)]
	summary = {
		"mode": "decode",
		"decoded": ",".join("{}={}".format(k, v) for k, v in sorted(decoded.mapping.items())),
		"above": "up" if decoded.above_is_up else "down",
		"confidence": "{:.4f}".format(decoded.confidence),
		"decided": str(decoded.decided).lower(),
		"score": "{:.1f}".format(min(scores))
	}
	return summary, reports


def _analyze_correlate(ledger, coded_lists, out_dir):
	slices = _slice_tables(ledger, coded_lists)
	reports = [_write_report(out_dir, "report_slices.csv", slices)]
	summary = {"mode": "correlate"}
	lines = [analysis.BinaryLine.from_coded(c) for c in coded_lists]
	for i in range(len(lines)):
		for j in range(i + 1, len(lines)):
			key = "correlation_{}_{}".format(coded_lists[i].name, coded_lists[j].name)
			summary[key] = "{:.6f}".format(analysis.correlation(lines[i], lines[j]))
	return summary, reports


def _analyze_infer(ledger, coded_lists, out_dir, true_deg):
	decoded = analysis.decode(ledger, coded_lists)
	unknown = [c for c in coded_lists if protocol.OFF_TRIAD_LETTER in set(c.records["coded_orientation"])]
	target = unknown[0] if unknown else coded_lists[-1]
	result = analysis.infer_orientation(ledger, analysis.BinaryLine.from_coded(target), above_is_up = decoded.above_is_up)
	reports = [_write_report(out_dir, "report_infer.csv", result.to_frame())]
	summary = {
		"mode": "infer",
		"list": target.name,
		"estimate_deg": "{:.3f}".format(result.angle_deg),
		"ci_deg": "{:.3f}".format(result.ci_deg),
		"degenerate": str(result.degenerate).lower()
	}
	if true_deg is not None:
		summary["error_deg"] = "{:.3f}".format(utils.angle_difference_deg(result.angle_deg, true_deg))
	return summary, reports


def _analyze_chsh(manifests, out_dir):
	try:
		if not manifests or len(manifests) != 4:
			raise ValueError("chsh needs four manifests ordered (a,b), (a,b'), (a',b), (a',b')")
	except Exception as e:
		logger.exception(e)
		raise
	runs = []
	records = []
	for path in manifests:
		_, cfg = read_manifest(path)
		directory = os.path.dirname(os.path.abspath(path))
		right = _load_coded(os.path.join(directory, "coded_right.csv"), cfg)
		left = _load_coded(os.path.join(directory, "coded_left.csv"), cfg)
		runs.append((right, left))
		records.append({"manifest": path, "right_deg": cfg.to_mapping()["bob_evening_right_deg"],
			"left_deg": cfg.to_mapping()["bob_evening_left_deg"]})
	correlations = analysis.run_correlations(runs)
	s = analysis.chsh_from_correlations(*correlations)
	report = pd.DataFrame(records)
	report["correlation"] = correlations
	reports = [_write_report(out_dir, "report_chsh.csv", report)]
	return {"mode": "chsh", "S": "{:.6f}".format(s)}, reports


def _analyze_weak_chsh(manifests, labels, out_dir):
	"""Right strong lists of two EPR runs (a, a') against the left weak rows."""
	try:
		if not manifests or len(manifests) != 2:
			raise ValueError("weak-chsh needs two EPR manifests, strong right angle a then a'")
	except Exception as e:
		logger.exception(e)
		raise
	runs = []
	summary = {"mode": "weak-chsh", "b": labels[0], "b_prime": labels[1]}
	for i, path in enumerate(manifests):
		manifest, cfg = read_manifest(path)
		directory = os.path.dirname(os.path.abspath(path))
		ledger = _load_ledger(os.path.join(directory, LEDGER_NAME), manifest)
		right = _load_coded(os.path.join(directory, "coded_right.csv"), cfg)
		left = _load_coded(os.path.join(directory, "coded_left.csv"), cfg)
		decoded = analysis.decode(ledger, [right, left])
		try:
			if not decoded.mapping:
				raise ValueError("{}: no coded list lies on the triad, the sign convention cannot be decoded".format(path))
		except Exception as e:
			logger.exception(e)
			raise
		summary["decided_run{}".format(i + 1)] = str(decoded.decided).lower()
		runs.append((ledger, analysis.BinaryLine.from_coded(right), decoded.above_is_up))
	result = analysis.weak_chsh(runs, labels[0], labels[1])
	reports = [_write_report(out_dir, "report_weak_chsh.csv", result.table)]
	summary["S"] = "{:.6f}".format(result.value)
	summary["standard_error"] = "{:.6f}".format(result.standard_error)
	return summary, reports


def cmd_analyze(args):
	if args.mode in ("chsh", "weak-chsh"):
		out_dir = args.out or os.path.dirname(os.path.abspath(args.manifest[0] if args.manifest else "."))
		os.makedirs(out_dir, exist_ok = True)
		if args.mode == "chsh":
			summary, _ = _analyze_chsh(args.manifest, out_dir)
		else:
			summary, _ = _analyze_weak_chsh(args.manifest, args.weak_labels, out_dir)
		print(utils.format_flat_config(summary), end = "")
		return 0
	try:
		if not args.ledger:
			raise ValueError("--ledger is required for mode {}".format(args.mode))
		if not args.coded:
			raise ValueError("--coded is required for mode {}".format(args.mode))
	except Exception as e:
		logger.exception(e)
		raise
	manifest, cfg = read_manifest(_manifest_path(args.ledger, args.manifest[0] if args.manifest else None))
	ledger = _load_ledger(args.ledger, manifest)
	coded_lists = [_load_coded(path, cfg) for path in args.coded]
	out_dir = args.out or os.path.dirname(os.path.abspath(args.ledger))
	os.makedirs(out_dir, exist_ok = True)
	if args.mode == "decode":
		summary, _ = _analyze_decode(ledger, coded_lists, out_dir)
	elif args.mode == "correlate":
		summary, _ = _analyze_correlate(ledger, coded_lists, out_dir)
	else:
		summary, _ = _analyze_infer(ledger, coded_lists, out_dir, args.true_deg)
	print(utils.format_flat_config(summary), end = "")
	return 0


def _true_up(coded):
	"""The strong outcomes the attack ranks against, through the logged oracle."""
	signs = coded.reveal_signs("prediction attack ranks the true slicing")
	return analysis.BinaryLine.from_signs(coded.serials, signs, coded.side)


def _attack_target(cfg, ledger, directory):
	"""The evening list of the side whose rows are attacked, from disk."""
	if cfg.experiment_kind == protocol.ExperimentKind.SINGLE_PARTICLE:
		return Side.SINGLE, _load_coded(os.path.join(directory, "coded_evening.csv"), cfg)
	return Side.RIGHT, _load_coded(os.path.join(directory, "coded_right.csv"), cfg)


def cmd_attack(args):
	manifest, cfg = read_manifest(_manifest_path(args.ledger, args.manifest))
	try:
		if args.repetitions < 1:
			raise ValueError("--repetitions must be >= 1")
		if cfg.n_particles > args.n_cap:
			raise analysis.EnumerationLimitError(
				"N = {} is above the enumeration cap {}: C(N, N/2) slicings cannot be searched exhaustively".format(
				cfg.n_particles, args.n_cap))
	except Exception as e:
		logger.exception(e)
		raise
	ledger = _load_ledger(args.ledger, manifest)
	directory = os.path.dirname(os.path.abspath(args.ledger))
	out_dir = args.out or directory
	os.makedirs(out_dir, exist_ok = True)
	side, coded = _attack_target(cfg, ledger, directory)

	reports = []
	first = analysis.prediction_attack(ledger.row(side, args.row), _true_up(coded), cfg.pointer.delta, args.n_cap)
	reports.append(first)
	for k in range(1, args.repetitions):
		rep_cfg = cfg.with_updates(seed = cfg.seed + k)
		if rep_cfg.experiment_kind == protocol.ExperimentKind.SINGLE_PARTICLE:
			run = protocol.run_single_particle(rep_cfg)
			rep_coded = run.evening
		else:
			run = protocol.run_epr(rep_cfg)
			rep_coded = run.right
		reports.append(analysis.prediction_attack(run.ledger.row(side, args.row), _true_up(rep_coded),
			rep_cfg.pointer.delta, args.n_cap))

	_write_report(out_dir, "report_attack.csv", first.to_frame())
	ranks = pd.DataFrame([dict(repetition = k, seed = cfg.seed + k, **r.summary()) for k, r in enumerate(reports)])
	_write_report(out_dir, "report_attack_ranks.csv", ranks)
	summary = {
		"mode": "attack",
		"row": args.row,
		"total_slicings": first.total_slicings,
		"rank": first.rank,
		"ties_within_delta_shift": first.ties,
		"true_slicing_first": str(first.rank == 1).lower(),
		"repetitions": len(reports),
		"rank_one_fraction": "{:.4f}".format(float(np.mean([r.rank == 1 for r in reports])))
	}
	if len(reports) > 1:
		ks = analysis.rank_uniformity(reports)
		summary["ks_statistic"] = "{:.6f}".format(ks.statistic)
		summary["ks_pvalue"] = "{:.6f}".format(ks.pvalue)
	print(utils.format_flat_config(summary), end = "")
	return 0


COMMANDS = {
	"run-single": cmd_run_single,
	"run-epr": cmd_run_epr,
	"analyze": cmd_analyze,
	"attack": cmd_attack
}


def main(argv = None):
	"""Entry point; returns 0 on success, 1 on a failed run, 2 on a usage error."""
	parser = build_parser()
	try:
		args = parser.parse_args(argv)
	except SystemExit as e:
		return e.code
	if args.log_dir:
		logs.set_log_dir(args.log_dir)
	try:
		return COMMANDS[args.command](args)
	except EXPECTED_ERRORS as e:
		logger.exception(e)
		print("error: {}".format(e), file = sys.stderr)
		return 1


if __name__ == "__main__":
	sys.exit(main())
