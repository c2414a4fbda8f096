import os
import sys
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

sys.path.append(os.path.dirname(os.path.realpath(__file__)))

import logs
import measurement
import spinalg
import utils
from spinalg import Orientation, Side

logger = logs.logging.getLogger('protocol')

RandomStream = utils.RandomStream

N_ROWS = 9
TRIAD_LABELS = ("alpha", "beta", "gamma")
LETTERS = ("x", "y", "z")
# `OFF_TRIAD_LETTER` codes an orientation that is none of alpha, beta, gamma.
OFF_TRIAD_LETTER = "w"
ABOVE = "above"
BELOW = "below"
KEY_SECRET_LIMIT = 2 ** 63

LEDGER_COLUMNS = ["serial", "side", "row", "orientation_deg", "reading", "binarized"]
CODED_COLUMNS = ["serial", "coded_orientation", "coded_value"]

# `DEFAULT_FREE_CHOICES`: CHSH candidate angles (degrees) for late free choices.
DEFAULT_FREE_CHOICES = {
	Side.RIGHT: (0.0, 90.0),
	Side.LEFT: (45.0, 135.0),
	Side.SINGLE: (0.0, 45.0, 90.0, 135.0)
}


class ProtocolOrderError(RuntimeError):
	"""An operation was called out of the order the protocol allows."""


class LedgerFormatError(ValueError):
	"""A ledger or coded-list file does not follow its CSV schema."""


class ExperimentKind(str, Enum):
	SINGLE_PARTICLE = "single"
	EPR_PAIR = "epr"


@dataclass(frozen=True)
class FreeAngle:
	"""A strong-measurement orientation chosen late, from a seeded stream that
	never sees the ledger.

	Args:
		choices_deg (tuple(float)): candidate angles in degrees; an empty tuple
			means any angle in [0, 360)
	"""
	choices_deg: Tuple[float, ...] = ()

	def resolve(self, seed, side):
		stream = RandomStream(seed, 0, "free_choice_" + Side(side).value)
		if not self.choices_deg:
			return Orientation(stream.uniform() * utils.TWO_PI)
		return Orientation.from_degrees(self.choices_deg[int(stream.integers(0, len(self.choices_deg)))])

	def __str__(self):
		if not self.choices_deg:
			return "free"
		return "free:" + ",".join(_format_deg(d) for d in self.choices_deg)


AngleChoice = Union[Orientation, FreeAngle]


def _format_deg(deg):
	return "{:.12g}".format(deg)


def _format_angle(choice):
	if choice is None:
		return ""
	if isinstance(choice, FreeAngle):
		return str(choice)
	return _format_deg(choice.degrees)


def _parse_angle(text, side):
	text = text.strip()
	if text == "":
		return None
	if text.startswith("free"):
		if ":" in text:
			return FreeAngle(tuple(float(x) for x in text.split(":", 1)[1].split(",")))
		return FreeAngle(DEFAULT_FREE_CHOICES[side])
	return Orientation.from_degrees(float(text))


def _parse_bool(text):
	value = text.strip().lower()
	if value in ("1", "true", "yes", "on"):
		return True
	if value in ("0", "false", "no", "off", ""):
		return False
	raise ValueError("Not a boolean: {!r}".format(text))


@dataclass(frozen=True)
class ExperimentConfig:
	"""Everything that defines one run; `seed` fixes every ledger byte.

	Args:
		n_particles (int): N, even and >= 2
		alpha, beta, gamma (Orientation): Alice's three weak orientations
		pointer (PointerConfig): weak-measurement pointer
		seed (int): master seed in [0, 2**64)
		experiment_kind (ExperimentKind): SINGLE_PARTICLE or EPR_PAIR
		bob_morning (Orientation): morning strong orientation (single particle)
		bob_evening (Orientation or FreeAngle): evening strong orientation (single particle)
		bob_evening_right, bob_evening_left (Orientation or FreeAngle): evening
			strong orientations per side (EPR)
		collapse_first_row (bool): the first weak row of the first-measured side
			uses the strong-limit pointer (a collapse control)
	"""
	n_particles: int
	alpha: Orientation
	beta: Orientation
	gamma: Orientation
	pointer: measurement.PointerConfig
	seed: int
	experiment_kind: ExperimentKind
	bob_morning: Optional[Orientation] = None
	bob_evening: Optional[AngleChoice] = None
	bob_evening_right: Optional[AngleChoice] = None
	bob_evening_left: Optional[AngleChoice] = None
	collapse_first_row: bool = False

	def __post_init__(self):
		object.__setattr__(self, "experiment_kind", ExperimentKind(self.experiment_kind))
		try:
			if int(self.n_particles) != self.n_particles or self.n_particles < 2 or self.n_particles % 2 != 0:
				raise ValueError("n_particles must be an even integer >= 2, was {!r}".format(self.n_particles))
			if not (0 <= int(self.seed) < 2 ** 64):
				raise ValueError("seed must lie in [0, 2**64), was {!r}".format(self.seed))
			triad = self.triad
			for i in range(3):
				for j in range(i + 1, 3):
					if triad[i].is_close(triad[j]):
						raise ValueError("alpha, beta and gamma must be pairwise distinct; {} and {} coincide".format(
							TRIAD_LABELS[i], TRIAD_LABELS[j]))
			if self.experiment_kind == ExperimentKind.SINGLE_PARTICLE:
				if self.bob_morning is None or self.bob_evening is None:
					raise ValueError("A single-particle experiment needs bob_morning and bob_evening")
				if not isinstance(self.bob_morning, Orientation):
					raise TypeError("bob_morning must be a fixed Orientation")
			else:
				if self.bob_evening_right is None or self.bob_evening_left is None:
					raise ValueError("An EPR experiment needs bob_evening_right and bob_evening_left")
		except Exception as e:
			logger.exception(e)
			raise
		object.__setattr__(self, "n_particles", int(self.n_particles))
		object.__setattr__(self, "seed", int(self.seed))

	@property
	def triad(self):
		return (self.alpha, self.beta, self.gamma)

	@property
	def sides(self):
		"""Measured sides, in measurement order."""
		if self.experiment_kind == ExperimentKind.SINGLE_PARTICLE:
			return (Side.SINGLE,)
		return (Side.RIGHT, Side.LEFT)

	@property
	def serials(self):
		return np.arange(1, self.n_particles + 1)

	def row_orientation(self, row):
		"""Row r is measured along [alpha, beta, gamma][(r - 1) mod 3]."""
		return self.triad[(row - 1) % 3]

	def label_of(self, orientation):
		""""alpha"/"beta"/"gamma" for a triad orientation, else None."""
		for label, o in zip(TRIAD_LABELS, self.triad):
			if o.is_close(orientation):
				return label
		return None

	def pointer_for(self, side, row):
		if self.collapse_first_row and row == 1 and side == self.sides[0]:
			return self.pointer.strong_limit()
		return self.pointer

	def with_updates(self, **changes):
		values = {f: getattr(self, f) for f in self.__dataclass_fields__}
		values.update(changes)
		return ExperimentConfig(**values)

	def to_mapping(self):
		"""Flat `key -> str` snapshot (angles in degrees)."""
		m = {
			"experiment_kind": self.experiment_kind.value,
			"n_particles": str(self.n_particles),
			"alpha_deg": _format_deg(self.alpha.degrees),
			"beta_deg": _format_deg(self.beta.degrees),
			"gamma_deg": _format_deg(self.gamma.degrees),
			"lambda": repr(float(self.pointer.lam)),
			"delta": repr(float(self.pointer.delta)),
			"coupling_exponent": repr(float(self.pointer.coupling_exponent)),
			"pointer_ensemble_size": str(self.pointer.ensemble_size),
			"seed": str(self.seed),
			"collapse_first_row": str(self.collapse_first_row).lower()
		}
		if self.experiment_kind == ExperimentKind.SINGLE_PARTICLE:
			m["bob_morning_deg"] = _format_angle(self.bob_morning)
			m["bob_evening_deg"] = _format_angle(self.bob_evening)
		else:
			m["bob_evening_right_deg"] = _format_angle(self.bob_evening_right)
			m["bob_evening_left_deg"] = _format_angle(self.bob_evening_left)
		return m

	@classmethod
	def from_mapping(cls, mapping):
		"""Build a config from flat string values (see `to_mapping`).

		Raises:
			ValueError: unknown keys, missing keys or unparsable values
		"""
		known = {"experiment_kind", "n_particles", "alpha_deg", "beta_deg", "gamma_deg", "lambda", "delta",
			"coupling_exponent", "pointer_ensemble_size", "seed", "collapse_first_row", "bob_morning_deg",
			"bob_evening_deg", "bob_evening_right_deg", "bob_evening_left_deg"}
		try:
			unknown = set(mapping) - known
			if unknown:
				raise ValueError("Unknown config keys: {}".format(", ".join(sorted(unknown))))
			missing = {"experiment_kind", "n_particles", "alpha_deg", "beta_deg", "gamma_deg", "lambda", "delta",
				"seed"} - set(k for k, v in mapping.items() if str(v).strip() != "")
			if missing:
				raise ValueError("Missing config keys: {}".format(", ".join(sorted(missing))))
			n = int(mapping["n_particles"])
			ensemble = mapping.get("pointer_ensemble_size", "")
			pointer = measurement.PointerConfig(
				lam = float(mapping["lambda"]),
				delta = float(mapping["delta"]),
				ensemble_size = int(ensemble) if str(ensemble).strip() else n,
				coupling_exponent = float(mapping.get("coupling_exponent", "0.5") or 0.5)
			)
			get = lambda k: str(mapping.get(k, ""))
			return cls(
				n_particles = n,
				alpha = Orientation.from_degrees(float(mapping["alpha_deg"])),
				beta = Orientation.from_degrees(float(mapping["beta_deg"])),
				gamma = Orientation.from_degrees(float(mapping["gamma_deg"])),
				pointer = pointer,
				seed = int(mapping["seed"]),
				experiment_kind = ExperimentKind(str(mapping["experiment_kind"]).strip()),
				bob_morning = _parse_angle(get("bob_morning_deg"), Side.SINGLE),
				bob_evening = _parse_angle(get("bob_evening_deg"), Side.SINGLE),
				bob_evening_right = _parse_angle(get("bob_evening_right_deg"), Side.RIGHT),
				bob_evening_left = _parse_angle(get("bob_evening_left_deg"), Side.LEFT),
				collapse_first_row = _parse_bool(get("collapse_first_row"))
			)
		except Exception as e:
			logger.exception(e)
			raise


def resolve_angle(choice, seed, side):
	"""Fixed orientation of a config angle, drawing the late choice if free."""
	if isinstance(choice, FreeAngle):
		resolved = choice.resolve(seed, side)
		logger.info("Free choice for side {}: {} deg".format(Side(side).value, _format_deg(resolved.degrees)))
		return resolved
	return choice


# stone ledger -----------------------------------------------------------------------

class StoneLedger:
	"""Append-only record of weak readings, keyed by (serial, side, row).

	Readings are appended one measurement step at a time for all serials.
	After `finalize()` nothing can be appended; all accessors return copies,
	so the recorded values cannot be changed through them.

	Args:
		metadata (dict, optional): config snapshot, seed, pointer gain and noise
	"""

	def __init__(self, metadata = None):
		self.metadata = dict(metadata or {})
		self._blocks = []
		self._finalized = False
		self._frame = None

	@property
	def finalized(self):
		return self._finalized

	def append(self, serials, side, row, orientation, readings):
		"""Record one measurement step: row `row` of side `side` for `serials`.

		Raises:
			ProtocolOrderError: the ledger was already finalized
			ValueError: bad row index or length mismatch
		"""
		readings = np.asarray(readings, dtype=float)
		serials = np.asarray(serials, dtype=np.int64)
		try:
			if self._finalized:
				raise ProtocolOrderError("The ledger is engraved; it cannot be appended to")
			if not (1 <= row <= N_ROWS):
				raise ValueError("row must lie in 1..{}, was {}".format(N_ROWS, row))
			if readings.shape != serials.shape:
				raise ValueError("Got {} readings for {} serials".format(readings.shape[0], serials.shape[0]))
		except Exception as e:
			logger.exception(e)
			raise
		block = pd.DataFrame({
			"serial": serials,
			"side": Side(side).value,
			"row": int(row),
			"orientation_deg": round(orientation.degrees, 10),
			"reading": readings,
			"binarized": np.where(readings >= 0.0, measurement.Binary.UP.value, measurement.Binary.DOWN.value),
			"_step": len(self._blocks)
		})
		self._blocks.append(block)
		self._frame = None

	def finalize(self):
		self._finalized = True

	def _table(self):
		if self._frame is None:
			if not self._blocks:
				frame = pd.DataFrame({c: pd.Series(dtype=object) for c in LEDGER_COLUMNS})
			else:
				frame = pd.concat(self._blocks, ignore_index = True)
				frame = frame.sort_values(["serial", "_step"], kind = "mergesort").reset_index(drop = True)
				frame = frame[LEDGER_COLUMNS]
			self._frame = frame
		return self._frame

	def to_frame(self):
		"""Copy of the ledger with columns serial, side, row, orientation_deg, reading, binarized."""
		return self._table().copy()

	def __len__(self):
		return len(self._table())

	@property
	def serials(self):
		return np.unique(self._table()["serial"].to_numpy())

	@property
	def sides(self):
		return [Side(s) for s in pd.unique(self._table()["side"])]

	def row(self, side, row):
		"""Readings of one row as a Series indexed by serial (sorted)."""
		t = self._table()
		sub = t[(t["side"] == Side(side).value) & (t["row"] == int(row))]
		return pd.Series(sub["reading"].to_numpy(), index = sub["serial"].to_numpy(), name = "{}{}".format(Side(side).value, row))

	def row_orientation_deg(self, side, row):
		t = self._table()
		sub = t[(t["side"] == Side(side).value) & (t["row"] == int(row))]
		return float(sub["orientation_deg"].iloc[0])

	def rows_of(self, label):
		"""Row indices measured along triad orientation `label`."""
		offset = TRIAD_LABELS.index(label)
		return [r for r in range(1, N_ROWS + 1) if (r - 1) % 3 == offset]

	def validate(self):
		"""Check the schedule invariants: 9 rows per (serial, side), and rows
		r, r+3, r+6 share one orientation.

		Raises:
			LedgerFormatError: an invariant is violated
		"""
		t = self._table()
		try:
			counts = t.groupby(["serial", "side"])["row"].agg(["count", "nunique"])
			if not ((counts["count"] == N_ROWS) & (counts["nunique"] == N_ROWS)).all():
				bad = counts[(counts["count"] != N_ROWS) | (counts["nunique"] != N_ROWS)].index[0]
				raise LedgerFormatError("Serial {} side {} does not have exactly {} distinct rows".format(bad[0], bad[1], N_ROWS))
			per_row = t.groupby("row")["orientation_deg"].nunique()
			if (per_row > 1).any():
				raise LedgerFormatError("Row {} mixes orientations".format(per_row[per_row > 1].index[0]))
			first = t.groupby("row")["orientation_deg"].first()
			for r in range(1, N_ROWS + 1 - 3):
				if r in first.index and r + 3 in first.index and first[r] != first[r + 3]:
					raise LedgerFormatError("Rows {} and {} should share an orientation".format(r, r + 3))
		except Exception as e:
			logger.exception(e)
			raise

	def write_csv(self, path):
		"""Atomically write the ledger CSV (full-precision readings)."""
		frame = self._table()
		logger.info("Write ledger with {} entries to {}".format(len(frame), path))
		return utils.write_atomic(path, lambda handle: frame.to_csv(handle, index = False))

	@classmethod
	def read_csv(cls, path, metadata = None):
		"""Load a ledger CSV; the result is finalized.

		Raises:
			LedgerFormatError: the message names the offending line of the file
		"""
		try:
			raw = pd.read_csv(path, dtype = str, keep_default_na = False)
		except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
			logger.exception(e)
			raise LedgerFormatError("{}: {}".format(path, e)) from e
		try:
			if list(raw.columns) != LEDGER_COLUMNS:
				raise LedgerFormatError("{} line 1: expected header {}".format(path, ",".join(LEDGER_COLUMNS)))
			serial = pd.to_numeric(raw["serial"], errors = "coerce")
			row = pd.to_numeric(raw["row"], errors = "coerce")
			orientation = pd.to_numeric(raw["orientation_deg"], errors = "coerce")
			reading = pd.to_numeric(raw["reading"], errors = "coerce")
			ok = (serial.notna() & (serial >= 1) & (serial == serial.round())
				& row.isin(range(1, N_ROWS + 1))
				& orientation.notna() & reading.notna() & np.isfinite(reading)
				& raw["side"].isin([s.value for s in Side])
				& raw["binarized"].isin([b.value for b in measurement.Binary]))
			ok &= (raw["binarized"] == measurement.Binary.UP.value) == (reading >= 0.0)
			if not ok.all():
				first_bad = int(np.flatnonzero(~ok.to_numpy())[0])
				# header is line 1
				raise LedgerFormatError("{} line {}: malformed ledger entry {!r}".format(
					path, first_bad + 2, ",".join(raw.iloc[first_bad].tolist())))
		except Exception as e:
			logger.exception(e)
			raise
		ledger = cls(metadata)
		frame = pd.DataFrame({
			"serial": serial.astype(np.int64),
			"side": raw["side"],
			"row": row.astype(int),
			"orientation_deg": orientation.astype(float),
			"reading": reading.astype(float),
			"binarized": raw["binarized"],
			"_step": np.arange(len(raw))
		})
		ledger._blocks.append(frame)
		ledger.finalize()
		ledger.validate()
		return ledger


# coded lists ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CodingKey:
	"""Bob's code: triad label -> letter, and whether "above" means up."""
	letters: dict
	above_is_up: bool

	def letter_for(self, label):
		return self.letters.get(label, OFF_TRIAD_LETTER) if label else OFF_TRIAD_LETTER

	def label_for(self, letter):
		for label, l in self.letters.items():
			if l == letter:
				return label
		return None

	def to_mapping(self):
		m = {label: letter for label, letter in self.letters.items()}
		m["above"] = "up" if self.above_is_up else "down"
		return m


def new_key_secret():
	"""Fresh secret for a coding key, from OS entropy and unrelated to any run seed."""
	return int(np.random.SeedSequence().entropy % KEY_SECRET_LIMIT)


def draw_coding_key(secret):
	"""The coding key belonging to `secret` (stream stage "coding").

	The secret never enters the manifest, so the run seed alone does not
	reproduce the key.
	"""
	stream = RandomStream(secret, 0, "coding")
	perm = stream.permutation(3)
	above_is_up = bool(stream.uniform() < 0.5)
	return CodingKey({label: LETTERS[int(i)] for label, i in zip(TRIAD_LABELS, perm)}, above_is_up)


def write_sealed_key(path, secret):
	"""Store the key secret in its own file next to the coded lists."""
	return utils.write_flat_config(path, {"secret": str(int(secret))},
		header = "sealed coding key: open only through CodedList.unseal")


def read_sealed_key(path):
	"""Load the key behind a sealed key file; hand it straight to `CodedList`.

	Raises:
		LedgerFormatError: the file holds no valid secret
	"""
	mapping = utils.read_flat_config(path)
	try:
		secret = mapping.get("secret", "")
		if not secret.isdigit() or int(secret) >= KEY_SECRET_LIMIT:
			raise LedgerFormatError("{}: no valid key secret".format(path))
	except Exception as e:
		logger.exception(e)
		raise
	return draw_coding_key(int(secret))


class CodedList:
	"""Bob's strong outcomes in code: per serial a letter and above/below.

	The key stays sealed until a decoded guess has been registered.

	Args:
		records (DataFrame): columns serial, coded_orientation, coded_value
		side (Side): which particle the outcomes belong to
		key (CodingKey): the sealed key
		name (str, optional): "morning", "evening", "right" or "left"
	"""

	def __init__(self, records, side, key, name = None):
		self._records = records[CODED_COLUMNS].reset_index(drop = True).copy()
		self.side = Side(side)
		self.name = name or self.side.value
		self._key = key
		self._guess = None
		self._unsealed = False
		self._revealed = False

	def __len__(self):
		return len(self._records)

	@property
	def records(self):
		return self._records.copy()

	@property
	def serials(self):
		return self._records["serial"].to_numpy()

	@property
	def letters_present(self):
		return sorted(set(self._records["coded_orientation"]) - {OFF_TRIAD_LETTER})

	def above(self):
		"""Boolean Series (indexed by serial): True where the code says above."""
		return pd.Series((self._records["coded_value"] == ABOVE).to_numpy(), index = self.serials)

	@property
	def guess(self):
		return self._guess

	def register_guess(self, guess):
		"""Declare the decoded key; `guess` needs `mapping` (letter -> label)
		and `above_is_up`.

		Raises:
			ProtocolOrderError: the outcomes were already revealed
		"""
		try:
			if self._revealed:
				raise ProtocolOrderError("Coded list {} was revealed; a guess can no longer be scored".format(self.name))
		except Exception as e:
			logger.exception(e)
			raise
		self._guess = guess

	def reveal_signs(self, reason):
		"""Oracle access to the true strong outcomes without a decoded guess.

		Every call is logged with its `reason`, and the list accepts no guess
		afterwards.

		Args:
			reason (str): who needs the truth and why

		Returns:
			ndarray(int): +1 for up, -1 for down, in serial order
		"""
		logger.warning("Coded list {} revealed without a decoded guess: {}".format(self.name, reason))
		self._revealed = True
		above = (self._records["coded_value"] == ABOVE).to_numpy()
		up = above if self._key.above_is_up else ~above
		return np.where(up, 1, -1)

	def unseal(self, key_path = None):
		"""Reveal the key, optionally writing it as a flat text map.

		Raises:
			ProtocolOrderError: no guess has been registered yet
		"""
		try:
			if self._guess is None:
				raise ProtocolOrderError("Register a decoded guess before unsealing the key")
		except Exception as e:
			logger.exception(e)
			raise
		self._unsealed = True
		if key_path:
			utils.write_flat_config(key_path, self._key.to_mapping(), header = "coding key: triad label -> letter")
		return self._key

	def score(self):
		"""1.0 when the registered guess agrees with the key on every guessed
		letter and on the sign convention, else 0.0.

		Raises:
			ProtocolOrderError: called before `unseal`
		"""
		try:
			if not self._unsealed:
				raise ProtocolOrderError("The key is still sealed")
		except Exception as e:
			logger.exception(e)
			raise
		if bool(self._guess.above_is_up) != self._key.above_is_up:
			return 0.0
		for letter, label in self._guess.mapping.items():
			if self._key.label_for(letter) != label:
				return 0.0
		return 1.0

	def write_csv(self, path):
		return utils.write_atomic(path, lambda handle: self._records.to_csv(handle, index = False))

	@classmethod
	def read_csv(cls, path, side, key, name = None):
		"""Load a coded list; the key comes from the run's sealed key file
		(`read_sealed_key`) and is sealed again.

		Raises:
			LedgerFormatError: the message names the offending line
		"""
		try:
			raw = pd.read_csv(path, dtype = str, keep_default_na = False)
		except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
			logger.exception(e)
			raise LedgerFormatError("{}: {}".format(path, e)) from e
		try:
			if list(raw.columns) != CODED_COLUMNS:
				raise LedgerFormatError("{} line 1: expected header {}".format(path, ",".join(CODED_COLUMNS)))
			serial = pd.to_numeric(raw["serial"], errors = "coerce")
			ok = (serial.notna() & (serial >= 1)
				& raw["coded_orientation"].isin(list(LETTERS) + [OFF_TRIAD_LETTER])
				& raw["coded_value"].isin([ABOVE, BELOW]))
			if not ok.all():
				first_bad = int(np.flatnonzero(~ok.to_numpy())[0])
				raise LedgerFormatError("{} line {}: malformed coded entry {!r}".format(
					path, first_bad + 2, ",".join(raw.iloc[first_bad].tolist())))
			if serial.duplicated().any():
				raise LedgerFormatError("{}: duplicated serial {}".format(path, int(serial[serial.duplicated()].iloc[0])))
		except Exception as e:
			logger.exception(e)
			raise
		raw["serial"] = serial.astype(np.int64)
		return cls(raw, side, key, name)


def seal(serials, signs, orientation, cfg, key, side, name = None):
	"""Code strong outcomes with `key`: the orientation becomes a letter
	(`w` outside the triad) and each sign becomes above/below."""
	letter = key.letter_for(cfg.label_of(orientation))
	up = np.asarray(signs) > 0
	above = up if key.above_is_up else ~up
	records = pd.DataFrame({
		"serial": np.asarray(serials, dtype=np.int64),
		"coded_orientation": letter,
		"coded_value": np.where(above, ABOVE, BELOW)
	})
	return CodedList(records, side, key, name)


# runs ------------------------------------------------------------------------------------

@dataclass
class SingleParticleRun:
	ledger: StoneLedger
	morning: CodedList
	evening: CodedList
	morning_orientation: Orientation
	evening_orientation: Orientation
	config: ExperimentConfig

	def __iter__(self):
		return iter((self.ledger, self.morning, self.evening))


@dataclass
class EprRun:
	ledger: StoneLedger
	right: CodedList
	left: CodedList
	right_orientation: Orientation
	left_orientation: Orientation
	config: ExperimentConfig

	def __iter__(self):
		return iter((self.ledger, self.right, self.left))


def _metadata(cfg):
	return {"config": cfg.to_mapping(), "seed": cfg.seed, "gain": cfg.pointer.g, "delta": cfg.pointer.delta}


def _noon(cfg, serials, states, ledger, workers):
	"""Alice's weak rows (alpha, beta, gamma) x 3 on every side, threading the
	back-action of each reading into the next."""
	steps = N_ROWS * len(cfg.sides)
	u, z = utils.draw_block(cfg.seed, serials, "noon", steps, steps, workers)
	step = 0
	for side in cfg.sides:
		for row in range(1, N_ROWS + 1):
			orientation = cfg.row_orientation(row)
			op = spinalg.spin_operator(orientation)
			if side != Side.SINGLE:
				op = spinalg.embed(op, side)
			readings, states = measurement.weak_measure_batch(states, op, cfg.pointer_for(side, row), u[:, step], z[:, step])
			ledger.append(serials, side, row, orientation, readings)
			step += 1
	return states


def _engrave(ledger, ledger_path):
	ledger.finalize()
	if ledger_path:
		ledger.write_csv(ledger_path)


def _simulate_single(cfg, serials, workers = 1, ledger_path = None):
	ledger = StoneLedger(_metadata(cfg))
	n = len(serials)
	# unpolarized source: a random sigma_z eigenstate per particle
	u_source, _ = utils.draw_block(cfg.seed, serials, "source", 1, 0, workers)
	states = np.zeros((n, 2), dtype=complex)
	up = u_source[:, 0] < 0.5
	states[up, 0] = 1.0
	states[~up, 1] = 1.0

	u_morning, _ = utils.draw_block(cfg.seed, serials, "morning", 1, 0, workers)
	morning_signs, states = measurement.strong_measure_batch(states, spinalg.spin_operator(cfg.bob_morning), u_morning[:, 0])

	states = _noon(cfg, serials, states, ledger, workers)
	_engrave(ledger, ledger_path)

	evening = resolve_angle(cfg.bob_evening, cfg.seed, Side.SINGLE)
	u_evening, _ = utils.draw_block(cfg.seed, serials, "evening", 1, 0, workers)
	evening_signs, states = measurement.strong_measure_batch(states, spinalg.spin_operator(evening), u_evening[:, 0])
	return ledger, morning_signs, evening, evening_signs


def _simulate_epr(cfg, serials, workers = 1, ledger_path = None):
	ledger = StoneLedger(_metadata(cfg))
	states = np.tile(spinalg.singlet_state().amplitudes, (len(serials), 1))
	states = _noon(cfg, serials, states, ledger, workers)
	_engrave(ledger, ledger_path)

	right = resolve_angle(cfg.bob_evening_right, cfg.seed, Side.RIGHT)
	left = resolve_angle(cfg.bob_evening_left, cfg.seed, Side.LEFT)
	u_evening, _ = utils.draw_block(cfg.seed, serials, "evening", 2, 0, workers)
	right_signs, states = measurement.strong_measure_batch(
		states, spinalg.embed(spinalg.spin_operator(right), Side.RIGHT), u_evening[:, 0])
	left_signs, states = measurement.strong_measure_batch(
		states, spinalg.embed(spinalg.spin_operator(left), Side.LEFT), u_evening[:, 1])
	return ledger, right, right_signs, left, left_signs


def _check_kind(cfg, kind):
	try:
		if cfg.experiment_kind != kind:
			raise ValueError("Config is for a {} experiment, not {}".format(cfg.experiment_kind.value, kind.value))
	except Exception as e:
		logger.exception(e)
		raise


def run_single_particle(cfg, workers = 1, ledger_path = None, key_secret = None):
	"""Morning strong, noon weak (9 rows), evening strong, then coded lists.

	Args:
		cfg (ExperimentConfig): SINGLE_PARTICLE config
		workers (int, optional): threads drawing the random streams. Defaults to 1.
		ledger_path (str, optional): where to engrave the ledger CSV before the
			evening measurements
		key_secret (int, optional): secret of the coding key. Defaults to a fresh
			`new_key_secret()`.

	Returns:
		SingleParticleRun: iterable as (ledger, morning, evening)
	"""
	_check_kind(cfg, ExperimentKind.SINGLE_PARTICLE)
	logger.info("Start single-particle run: N={}, seed={}, g={}, delta={}".format(
		cfg.n_particles, cfg.seed, cfg.pointer.g, cfg.pointer.delta))
	serials = cfg.serials
	ledger, morning_signs, evening, evening_signs = _simulate_single(cfg, serials, workers, ledger_path)
	key = draw_coding_key(new_key_secret() if key_secret is None else key_secret)
	morning = seal(serials, morning_signs, cfg.bob_morning, cfg, key, Side.SINGLE, "morning")
	evening_list = seal(serials, evening_signs, evening, cfg, key, Side.SINGLE, "evening")
	return SingleParticleRun(ledger, morning, evening_list, cfg.bob_morning, evening, cfg)


def run_epr(cfg, workers = 1, ledger_path = None, key_secret = None):
	"""Singlet pairs: 9 weak rows on Right, then 9 on Left, then one strong
	measurement per side, outcomes coded.

	Args:
		cfg (ExperimentConfig): EPR_PAIR config
		workers (int, optional): threads drawing the random streams. Defaults to 1.
		ledger_path (str, optional): where to engrave the ledger CSV before the
			evening measurements
		key_secret (int, optional): secret of the coding key. Defaults to a fresh
			`new_key_secret()`.

	Returns:
		EprRun: iterable as (ledger, right, left)
	"""
	_check_kind(cfg, ExperimentKind.EPR_PAIR)
	logger.info("Start EPR run: N={}, seed={}, g={}, delta={}".format(
		cfg.n_particles, cfg.seed, cfg.pointer.g, cfg.pointer.delta))
	serials = cfg.serials
	ledger, right, right_signs, left, left_signs = _simulate_epr(cfg, serials, workers, ledger_path)
	key = draw_coding_key(new_key_secret() if key_secret is None else key_secret)
	right_list = seal(serials, right_signs, right, cfg, key, Side.RIGHT, "right")
	left_list = seal(serials, left_signs, left, cfg, key, Side.LEFT, "left")
	return EprRun(ledger, right_list, left_list, right, left, cfg)


def replay_serial(cfg, serial):
	"""Re-simulate one serial from its own streams; returns its ledger entries."""
	try:
		if not (1 <= serial <= cfg.n_particles):
			raise ValueError("serial must lie in 1..{}, was {}".format(cfg.n_particles, serial))
	except Exception as e:
		logger.exception(e)
		raise
	serials = np.array([serial])
	if cfg.experiment_kind == ExperimentKind.SINGLE_PARTICLE:
		ledger = _simulate_single(cfg, serials)[0]
	else:
		ledger = _simulate_epr(cfg, serials)[0]
	return ledger.to_frame()


def singlet_fidelity_after_weak_rows(pointer, alpha, beta, gamma, trials, seed):
	"""Mean fidelity with the singlet after all 18 weak measurements of a pair.

	Args:
		pointer (PointerConfig): weak pointer
		alpha, beta, gamma (Orientation): weak orientations
		trials (int): number of pairs
		seed (int): master seed

	Returns:
		float: mean |<singlet|state>|^2
	"""
	cfg = ExperimentConfig(n_particles = trials + trials % 2, alpha = alpha, beta = beta, gamma = gamma,
		pointer = pointer, seed = seed, experiment_kind = ExperimentKind.EPR_PAIR,
		bob_evening_right = alpha, bob_evening_left = alpha)
	serials = np.arange(1, trials + 1)
	singlet = spinalg.singlet_state().amplitudes
	states = np.tile(singlet, (trials, 1))
	states = _noon(cfg, serials, states, StoneLedger(), 1)
	return float(np.mean(np.abs(states @ singlet.conj()) ** 2))
