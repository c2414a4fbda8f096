import functools
import itertools
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
import scipy.optimize
import scipy.stats

sys.path.append(os.path.dirname(os.path.realpath(__file__)))

import logs
import protocol
import tsvf
import utils
from spinalg import Side

logger = logs.logging.getLogger('analysis')

# `DECISION_THRESHOLD`: decode confidences (in null standard deviations) below
# this are reported as undecided.
DECISION_THRESHOLD = 3.0
# `ATTACK_HARD_CAP`: C(24, 12) slicings is the most the attack will hold in memory.
ATTACK_HARD_CAP = 24
SCAN_STEP_DEG = 0.1
# `RANK_TOLERANCE` is relative to the size of the true deviation.
RANK_TOLERANCE = 1e-12


class EnumerationLimitError(ValueError):
	"""The exhaustive attack was asked to enumerate too many slicings."""


# binary lines and slices ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BinaryLine:
	"""Above/below assignment of every serial, drawn from a strong-outcome list.

	Args:
		serials (ndarray(int)): serial numbers, each once
		above (ndarray(bool)): True where the serial lies above the line
		side (Side, optional): particle the strong outcomes belong to
	"""
	serials: np.ndarray
	above: np.ndarray
	side: Optional[Side] = None

	def __post_init__(self):
		serials = np.asarray(self.serials, dtype=np.int64)
		above = np.asarray(self.above, dtype=bool)
		try:
			if serials.shape != above.shape or serials.ndim != 1:
				raise ValueError("serials and above must be 1-D arrays of the same length")
			if len(np.unique(serials)) != len(serials):
				raise ValueError("A binary line must cover every serial exactly once")
		except Exception as e:
			logger.exception(e)
			raise
		object.__setattr__(self, "serials", serials)
		object.__setattr__(self, "above", above)

	@classmethod
	def from_coded(cls, coded):
		return cls(coded.serials, coded.above().to_numpy(), coded.side)

	@classmethod
	def from_signs(cls, serials, signs, side = None):
		"""Above for +1, below for -1."""
		return cls(serials, np.asarray(signs) > 0, side)

	def __len__(self):
		return len(self.serials)

	def signs(self, above_is_up = True):
		"""+1/-1 per serial in the up/down convention given."""
		up = self.above if above_is_up else ~self.above
		return np.where(up, 1, -1)

	def to_series(self):
		return pd.Series(self.above, index = self.serials)

	def shuffled(self, seed):
		"""The same above/below counts assigned to serials in a seeded random order."""
		stream = utils.RandomStream(seed, 0, "shuffle_line")
		return BinaryLine(self.serials, self.above[stream.permutation(len(self.above))], self.side)


@dataclass(frozen=True)
class SliceStats:
	subset_size: int
	sum: float
	mean: float
	z_score: float

	@classmethod
	def of(cls, values, delta):
		n = len(values)
		if n == 0:
			return cls(0, 0.0, 0.0, 0.0)
		total = float(np.sum(values))
		return cls(n, total, total / n, total / (delta * math.sqrt(n)))


def _aligned_above(row, line):
	"""Above mask in the order of `row.index`.

	Raises:
		ValueError: the row and the line do not cover the same serials
	"""
	try:
		if len(row) != len(line) or not np.isin(row.index.to_numpy(), line.serials).all():
			raise ValueError("Serial mismatch between the ledger row ({} serials) and the binary line ({} serials)".format(
				len(row), len(line)))
	except Exception as e:
		logger.exception(e)
		raise
	return line.to_series().reindex(row.index).to_numpy(dtype=bool)


def slice_row(row, line, delta = None):
	"""Split one ledger row by a binary line and re-sum each half.

	Args:
		row (Series): readings indexed by serial (see `StoneLedger.row`)
		line (BinaryLine): above/below assignment of the same serials
		delta (float, optional): pointer noise for the z-scores. Defaults to the
			sample standard deviation of the row.

	Raises:
		ValueError: serial mismatch

	Returns:
		tuple(SliceStats, SliceStats): above half, below half
	"""
	above = _aligned_above(row, line)
	values = row.to_numpy(dtype=float)
	if delta is None:
		delta = float(np.std(values, ddof = 1)) if len(values) > 1 else 1.0
	return SliceStats.of(values[above], delta), SliceStats.of(values[~above], delta)


def _ledger_delta(ledger, delta):
	if delta is not None:
		return delta
	return ledger.metadata.get("delta")


def _row_delta(row, delta):
	if delta is not None:
		return delta
	return float(np.std(row.to_numpy(dtype=float), ddof = 1))


def _line_side(ledger, line, side):
	if side is not None:
		return Side(side)
	if line.side is not None:
		return line.side
	return ledger.sides[0]


def sliced_row_table(ledger, line, side = None, delta = None):
	"""Sliced sums of all 9 rows of one side: the table Alice reads off.

	Returns:
		DataFrame: one line per row with counts, sums, means and z-scores of
			both halves
	"""
	side = _line_side(ledger, line, side)
	delta = _ledger_delta(ledger, delta)
	records = []
	for r in range(1, protocol.N_ROWS + 1):
		row = ledger.row(side, r)
		above, below = slice_row(row, line, _row_delta(row, delta))
		records.append({
			"side": side.value,
			"row": r,
			"orientation_deg": ledger.row_orientation_deg(side, r),
			"n_above": above.subset_size,
			"sum_above": above.sum,
			"mean_above": above.mean,
			"z_above": above.z_score,
			"n_below": below.subset_size,
			"sum_below": below.sum,
			"mean_below": below.mean,
			"z_below": below.z_score
		})
	return pd.DataFrame(records)


def sliced_weak_mean(ledger, side, rows, line, gain = None, select_above = True):
	"""Mean weak reading (in units of g) over the serials on one side of a line.

	Args:
		ledger (StoneLedger): weak readings
		side (Side): particle whose rows are averaged
		rows (list(int)): row indices to pool
		line (BinaryLine): post- (or pre-) selecting strong outcomes
		gain (float, optional): g. Defaults to the ledger metadata.
		select_above (bool, optional): keep the above (True) or below half

	Returns:
		MonteCarloEstimate: conditional mean / g, number of selected readings, standard error
	"""
	gain = _gain(ledger, gain)
	values = []
	for r in rows:
		row = ledger.row(side, r)
		above = _aligned_above(row, line)
		keep = above if select_above else ~above
		values.append(row.to_numpy(dtype=float)[keep] / gain)
	values = np.concatenate(values)
	n = len(values)
	if n < 2:
		logger.warning("Only {} readings selected".format(n))
		return tsvf.MonteCarloEstimate(float("nan"), n, float("nan"))
	return tsvf.MonteCarloEstimate(float(np.mean(values)), n, float(np.std(values, ddof = 1) / math.sqrt(n)))


def row_agreement(ledger, line, label, side = None, delta = None, tolerance = 3.0):
	"""Pairwise comparison of the above-half means of the three rows measured
	along one triad orientation.

	Returns:
		DataFrame: columns row_a, row_b, difference, sigma, agree
	"""
	side = _line_side(ledger, line, side)
	delta = _ledger_delta(ledger, delta)
	stats = {}
	for r in ledger.rows_of(label):
		row = ledger.row(side, r)
		stats[r] = slice_row(row, line, _row_delta(row, delta))[0]
	records = []
	for a, b in itertools.combinations(sorted(stats), 2):
		row_delta = delta if delta is not None else _row_delta(ledger.row(side, a), None)
		sigma = row_delta * math.sqrt(1.0 / max(stats[a].subset_size, 1) + 1.0 / max(stats[b].subset_size, 1))
		difference = stats[a].mean - stats[b].mean
		records.append({"row_a": a, "row_b": b, "difference": difference, "sigma": sigma,
			"agree": abs(difference) <= tolerance * sigma})
	return pd.DataFrame(records)


# decoding ---------------------------------------------------------------------

@dataclass
class DecodedKey:
	"""Best hypothesis for the coding key.

	`mapping` covers the letters present in the decoded lists (all three when
	two or more are present, since the key is a permutation).
	"""
	mapping: dict
	above_is_up: bool
	confidence: float
	table: pd.DataFrame = field(repr = False)

	@property
	def decided(self):
		return self.confidence >= DECISION_THRESHOLD


def _row_contrast(ledger, side, rows, line, delta):
	"""Sum over `rows` of z_above - z_below."""
	total = 0.0
	for r in rows:
		row = ledger.row(side, r)
		above, below = slice_row(row, line, _row_delta(row, delta))
		total += above.z_score - below.z_score
	return total


def decode(ledger, coded_lists, delta = None):
	"""Recover the coding key by slicing the ledger with every coded list.

	Every hypothesis (6 permutations x 2 sign conventions) gets a total:
	for each list, the rows its letter would stand for are sliced by the list
	and z_above - z_below is summed, with the sign flipped when "above" is
	hypothesised to mean down. The best total wins; the confidence is its gap to
	the best differing assignment, in units of the null standard deviation
	sqrt(6 * lists).

	Args:
		ledger (StoneLedger): weak readings
		coded_lists (CodedList or list(CodedList)): lists sharing one key
		delta (float, optional): pointer noise. Defaults to the ledger metadata
			or to each row's sample standard deviation.

	Returns:
		DecodedKey
	"""
	if isinstance(coded_lists, protocol.CodedList):
		coded_lists = [coded_lists]
	delta = _ledger_delta(ledger, delta)
	usable = [c for c in coded_lists if c.letters_present]
	present = sorted(set(l for c in usable for l in c.letters_present))
	if not usable:
		logger.warning("No coded list refers to a triad orientation; nothing to decode")
		return DecodedKey({}, True, 0.0, pd.DataFrame())

	contrasts = {}
	for i, coded in enumerate(usable):
		line = BinaryLine.from_coded(coded)
		side = coded.side if coded.side in ledger.sides else ledger.sides[0]
		for label in protocol.TRIAD_LABELS:
			contrasts[(i, label)] = _row_contrast(ledger, side, ledger.rows_of(label), line, delta)

	records = []
	for perm in itertools.permutations(protocol.TRIAD_LABELS):
		mapping = dict(zip(protocol.LETTERS, perm))
		for above_is_up in (True, False):
			sign = 1.0 if above_is_up else -1.0
			total = sum(sign * contrasts[(i, mapping[c.letters_present[0]])] for i, c in enumerate(usable))
			records.append({
				"assignment": ",".join("{}={}".format(l, mapping[l]) for l in present),
				"mapping": ",".join("{}={}".format(l, mapping[l]) for l in protocol.LETTERS),
				"above": "up" if above_is_up else "down",
				"total": total
			})
	table = pd.DataFrame(records).sort_values("total", ascending = False, kind = "mergesort").reset_index(drop = True)
	distinct = table.drop_duplicates(["assignment", "above"])
	best = distinct.iloc[0]
	second_total = distinct.iloc[1]["total"]
	confidence = float((best["total"] - second_total) / math.sqrt(6.0 * len(usable)))

	full = dict(pair.split("=") for pair in best["mapping"].split(","))
	if len(present) >= 2:
		mapping = full
	else:
		mapping = {l: full[l] for l in present}
	decoded = DecodedKey(mapping, best["above"] == "up", confidence, table)
	if decoded.decided:
		logger.info("Decoded key {} (above = {}), confidence {:.2f}".format(mapping, best["above"], confidence))
	else:
		logger.warning("Decoding undecided: confidence {:.2f} below {}".format(confidence, DECISION_THRESHOLD))
	return decoded


# correlations -------------------------------------------------------------------

def _as_signs(values):
	if isinstance(values, BinaryLine):
		return values.signs().astype(float)
	arr = np.asarray(values)
	if arr.dtype == bool:
		return np.where(arr, 1.0, -1.0)
	if arr.dtype.kind in ("U", "S", "O"):
		return np.where(np.char.upper(arr.astype(str)) == "U", 1.0, -1.0)
	return np.where(arr.astype(float) >= 0.0, 1.0, -1.0)


def correlation(a, b):
	"""Mean of per-serial sign products of two binarized rows or lines.

	Accepts +1/-1 values, booleans, "U"/"D" strings or `BinaryLine`s.

	Raises:
		ValueError: length mismatch or empty input

	Returns:
		float: value in [-1, 1]
	"""
	sa = _as_signs(a)
	sb = _as_signs(b)
	try:
		if sa.shape != sb.shape:
			raise ValueError("Cannot correlate sequences of length {} and {}".format(len(sa), len(sb)))
		if len(sa) == 0:
			raise ValueError("Cannot correlate empty sequences")
	except Exception as e:
		logger.exception(e)
		raise
	return float(np.clip(np.mean(sa * sb), -1.0, 1.0))


def chsh_from_correlations(e_ab, e_abp, e_apb, e_apbp):
	"""|E(a,b) - E(a,b') + E(a',b) + E(a',b')|."""
	return abs(e_ab - e_abp + e_apb + e_apbp)


def run_correlations(runs):
	"""Evening correlations of runs given as (right, left) pairs of coded lists,
	lines or sign arrays. The product of the two signs does not depend on the
	above/below convention, so no decoding is needed.

	Raises:
		ValueError: runs of different size
	"""
	correlations = []
	sizes = set()
	for right, left in runs:
		right_line = BinaryLine.from_coded(right) if isinstance(right, protocol.CodedList) else right
		left_line = BinaryLine.from_coded(left) if isinstance(left, protocol.CodedList) else left
		sizes.add(len(right_line))
		correlations.append(correlation(right_line, left_line))
	try:
		if len(sizes) > 1:
			raise ValueError("CHSH runs must share N; got sizes {}".format(sorted(sizes)))
	except Exception as e:
		logger.exception(e)
		raise
	return correlations


def chsh(runs):
	"""CHSH value of four EPR runs ordered (a,b), (a,b'), (a',b), (a',b').

	Args:
		runs (list): four (right, left) pairs of coded lists, `BinaryLine`s or
			sign arrays; `a` is the right angle, `b` the left angle

	Raises:
		ValueError: not four runs, or runs of different size

	Returns:
		float: S
	"""
	runs = list(runs)
	try:
		if len(runs) != 4:
			raise ValueError("CHSH needs exactly 4 runs, got {}".format(len(runs)))
	except Exception as e:
		logger.exception(e)
		raise
	return chsh_from_correlations(*run_correlations(runs))


# orientation inference ----------------------------------------------------------

@dataclass
class InferenceResult:
	angle_deg: float
	ci_deg: float
	correlations: dict
	standard_error: float
	residual: float
	degenerate: bool

	def to_frame(self):
		records = [{"quantity": "c_" + label, "value": c} for label, c in self.correlations.items()]
		records += [
			{"quantity": "angle_deg", "value": self.angle_deg},
			{"quantity": "ci_deg", "value": self.ci_deg},
			{"quantity": "standard_error", "value": self.standard_error},
			{"quantity": "residual", "value": self.residual},
			{"quantity": "degenerate", "value": float(self.degenerate)}
		]
		return pd.DataFrame(records)


def _gain(ledger, gain):
	if gain is None:
		gain = ledger.metadata.get("gain")
	try:
		if not gain:
			raise ValueError("The pointer gain g is needed; pass it or load the ledger with its manifest")
	except Exception as e:
		logger.exception(e)
		raise
	return float(gain)


def _signed_products(ledger, side, rows, line, above_is_up, gain):
	"""q * s / g over the given rows of `side`, s = +1/-1 from `line`."""
	products = []
	for r in rows:
		row = ledger.row(side, r)
		up = _aligned_above(row, line)
		if not above_is_up:
			up = ~up
		products.append(row.to_numpy(dtype=float) * np.where(up, 1.0, -1.0) / gain)
	return np.concatenate(products)


def infer_orientation(ledger, line, above_is_up = True, side = None, gain = None):
	"""Estimate the orientation of a strong measurement from the weak rows.

	For each triad orientation o the sliced correlation c_o = mean(q * s) / g is
	pooled over its three rows, s being the +1/-1 strong outcome. The angle phi
	minimizing sum_o (c_o - cos(theta_o,phi))^2 is found by a 0.1 degree scan
	followed by a bounded local refinement.

	Args:
		ledger (StoneLedger): weak readings
		line (BinaryLine): strong outcomes of the unknown orientation
		above_is_up (bool, optional): decoded sign convention of `line`
		side (Side, optional): particle measured. Defaults to the line's side.
		gain (float, optional): g. Defaults to the ledger metadata.

	Returns:
		InferenceResult: a degenerate result has a 180 degree interval
	"""
	side = _line_side(ledger, line, side)
	gain = _gain(ledger, gain)
	correlations = {}
	orientations = {}
	spreads = []
	for label in protocol.TRIAD_LABELS:
		rows = ledger.rows_of(label)
		products = _signed_products(ledger, side, rows, line, above_is_up, gain)
		correlations[label] = float(np.mean(products))
		spreads.append(float(np.std(products, ddof = 1) / math.sqrt(len(products))))
		orientations[label] = math.radians(ledger.row_orientation_deg(side, rows[0]))
	se = max(spreads)
	c = np.array([correlations[l] for l in protocol.TRIAD_LABELS])
	o = np.array([orientations[l] for l in protocol.TRIAD_LABELS])

	def residual(phi):
		return float(np.sum((c - np.cos(o - phi)) ** 2))

	grid = np.radians(np.arange(0.0, 360.0, SCAN_STEP_DEG))
	scan = np.sum((c[None, :] - np.cos(o[None, :] - grid[:, None])) ** 2, axis = 1)
	start = float(grid[int(np.argmin(scan))])
	step = math.radians(SCAN_STEP_DEG)
	refined = scipy.optimize.minimize_scalar(residual, bounds = (start - step, start + step), method = "bounded")
	phi = utils.canonical_angle(refined.x)
	degenerate = bool(np.max(np.abs(c)) < 3.0 * se)
	if degenerate:
		logger.warning("Orientation inference is degenerate: all sliced correlations are within 3 standard errors of 0")
		ci = 180.0
	else:
		slope = math.sqrt(max(float(np.sum(np.sin(o - phi) ** 2)), 1e-12))
		ci = math.degrees(1.96 * se / slope)
	return InferenceResult(math.degrees(phi), ci, correlations, se, residual(phi), degenerate)


# Bell correlations of the weak data ----------------------------------------------

@dataclass
class WeakChsh:
	value: float
	standard_error: float
	table: pd.DataFrame = field(repr = False)


def weak_correlation(ledger, line, label, above_is_up = True, gain = None):
	"""Correlation between one particle's weak rows and its partner's strong outcomes.

	The three rows measured along triad orientation `label` on the side
	opposite to `line` are pooled, and mean(q * s) / g estimates the pair
	correlation E(theta) = -cos(theta) of that orientation with the strong one.

	Args:
		ledger (StoneLedger): EPR weak readings
		line (BinaryLine): strong outcomes of the right or the left particle
		label (str): "alpha", "beta" or "gamma"
		above_is_up (bool, optional): decoded sign convention of `line`
		gain (float, optional): g. Defaults to the ledger metadata.

	Raises:
		ValueError: the line belongs to no particle of an EPR ledger

	Returns:
		MonteCarloEstimate: correlation, pooled readings, standard error
	"""
	try:
		if line.side not in (Side.RIGHT, Side.LEFT):
			raise ValueError("The strong line must belong to the right or the left particle, not {}".format(line.side))
		if set(ledger.sides) != {Side.RIGHT, Side.LEFT}:
			raise ValueError("Weak correlations across particles need an EPR ledger")
	except Exception as e:
		logger.exception(e)
		raise
	weak_side = Side.LEFT if line.side == Side.RIGHT else Side.RIGHT
	products = _signed_products(ledger, weak_side, ledger.rows_of(label), line, above_is_up, _gain(ledger, gain))
	n = len(products)
	return tsvf.MonteCarloEstimate(float(np.mean(products)), n, float(np.std(products, ddof = 1) / math.sqrt(n)))


def weak_chsh(runs, b_label, bp_label):
	"""CHSH value with the weak readings standing in for one party's outcomes.

	Two EPR runs measure the right particle strongly along a and a'. The
	left weak rows along the triad orientations `b_label` and `bp_label` play
	b and b', so S = |E(a,b) - E(a,b') + E(a',b) + E(a',b')| uses no strong
	left outcome at all.

	Args:
		runs (list): two tuples (ledger, right line, above_is_up), for a then a'
		b_label, bp_label (str): triad labels of the left rows used as b and b'

	Raises:
		ValueError: not two runs, or b and b' the same orientation

	Returns:
		WeakChsh: S, its standard error and the four correlations
	"""
	runs = list(runs)
	try:
		if len(runs) != 2:
			raise ValueError("Weak CHSH needs 2 runs (strong right angle a, then a'), got {}".format(len(runs)))
		if b_label == bp_label:
			raise ValueError("b and b' must be different triad orientations")
	except Exception as e:
		logger.exception(e)
		raise
	records = []
	for i, (ledger, line, above_is_up) in enumerate(runs):
		for label in (b_label, bp_label):
			estimate = weak_correlation(ledger, line, label, above_is_up)
			records.append({
				"run": i + 1,
				"weak_label": label,
				"weak_deg": ledger.row_orientation_deg(Side.LEFT, ledger.rows_of(label)[0]),
				"correlation": estimate.value,
				"standard_error": estimate.standard_error
			})
	table = pd.DataFrame(records)
	s = chsh_from_correlations(*table["correlation"])
	se = float(math.sqrt(np.sum(table["standard_error"] ** 2)))
	logger.info("Weak CHSH S = {:.4f} +- {:.4f}".format(s, se))
	return WeakChsh(s, se, table)


# prediction attack --------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _balanced_slicings(n):
	"""Index matrix of all C(n, n/2) above-halves, one slicing per line."""
	half = n // 2
	flat = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(n), half)),
		dtype=np.int64, count = math.comb(n, half) * half)
	flat = flat.reshape(-1, half)
	flat.setflags(write = False)
	return flat


@dataclass
class AttackReport:
	n: int
	total_slicings: int
	deviations: np.ndarray = field(repr = False)
	masks: np.ndarray = field(repr = False)
	true_deviation: float
	rank: int
	ties: int
	tie_window: float

	@property
	def maximum(self):
		return float(np.max(self.deviations))

	@property
	def normalized_rank(self):
		"""(rank - 1/2) / total, uniform on (0, 1) when the data carry no
		information about the true slicing."""
		return (self.rank - 0.5) / self.total_slicings

	def to_frame(self):
		"""Per-slicing statistics: bitmask of the above half and its deviation."""
		return pd.DataFrame({"slicing": np.arange(1, self.total_slicings + 1), "above_mask": self.masks,
			"deviation": self.deviations})

	def summary(self):
		return {"n": self.n, "total_slicings": self.total_slicings, "true_deviation": self.true_deviation,
			"max_deviation": self.maximum, "rank": self.rank, "ties_within_delta_shift": self.ties}


def _attack_inputs(readings, true_line):
	if isinstance(readings, (pd.Series, np.ndarray)) and np.ndim(readings) == 1:
		readings = [readings]
	rows = list(readings)
	if isinstance(true_line, BinaryLine):
		if isinstance(rows[0], pd.Series):
			up = _aligned_above(rows[0], true_line)
		else:
			up = true_line.above
	else:
		up = np.asarray(true_line, dtype=bool)
	x = np.vstack([np.asarray(r, dtype=float) for r in rows])
	return x, up


def prediction_attack(readings, true_line, delta, n_cap = 20):
	"""Exhaustive search over the balanced slicings of the present data.

	Every slicing of the N serials into two halves of N/2 is scored with the
	deviation z_above - z_below of the summed rows; the slicing Bob will
	actually induce is then ranked against them.

	Args:
		readings (Series, ndarray or list of them): one or more weak rows over the same serials
		true_line (BinaryLine or ndarray(bool)): the future strong outcomes, True for up
		delta (float): pointer noise of a single reading
		n_cap (int, optional): largest N to enumerate. Defaults to 20.

	Raises:
		EnumerationLimitError: N above the cap, or odd N

	Returns:
		AttackReport
	"""
	x, up = _attack_inputs(readings, true_line)
	k, n = x.shape
	try:
		if n > min(n_cap, ATTACK_HARD_CAP):
			raise EnumerationLimitError("Refusing to enumerate C({0}, {1}) slicings: N = {0} exceeds the cap {2}".format(
				n, n // 2, min(n_cap, ATTACK_HARD_CAP)))
		if n < 2 or n % 2 != 0:
			raise EnumerationLimitError("Balanced slicings need an even N >= 2, got {}".format(n))
		if up.shape != (n,):
			raise ValueError("The true line covers {} serials, the readings {}".format(up.shape[0], n))
	except Exception as e:
		logger.exception(e)
		raise
	total = math.comb(n, n // 2)
	summed = x.sum(axis = 0)
	scale = delta * math.sqrt(k)
	half = n // 2
	idx = _balanced_slicings(n)
	above_sum = summed[idx].sum(axis = 1)
	below_sum = summed.sum() - above_sum
	deviations = (above_sum - below_sum) / (scale * math.sqrt(half))

	def z(values):
		return float(values.sum() / (scale * math.sqrt(len(values)))) if len(values) else 0.0

	true_deviation = z(summed[up]) - z(summed[~up])
	rank = 1 + int(np.sum(deviations > true_deviation + RANK_TOLERANCE * max(1.0, abs(true_deviation))))
	# one reading shifted by delta moves exactly one half-z
	window = 1.0 / (math.sqrt(k) * math.sqrt(half))
	ties = int(np.sum(deviations >= deviations.max() - window))
	masks = np.sum(np.left_shift(np.int64(1), idx), axis = 1)
	logger.info("Attack over {} slicings: true rank {}, {} slicings within a delta shift of the maximum".format(
		total, rank, ties))
	return AttackReport(n, total, deviations, masks, true_deviation, rank, ties, window)


def rank_uniformity(reports):
	"""Kolmogorov-Smirnov test of the normalized true ranks against U(0, 1).

	Returns:
		KstestResult: statistic and p-value
	"""
	ranks = np.array([r.normalized_rank for r in reports])
	return scipy.stats.kstest(ranks, "uniform")
