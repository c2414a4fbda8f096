import math
import os
import sys
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.stats

sys.path.append(os.path.dirname(os.path.realpath(__file__)))

import logs
import spinalg

logger = logs.logging.getLogger('measurement')

# `WEAKNESS_RATIO`: the pointer is called weak when delta >= WEAKNESS_RATIO * g.
WEAKNESS_RATIO = 10.0
# `STRONG_LIMIT_RATIO`: delta = g / STRONG_LIMIT_RATIO in `PointerConfig.strong_limit`.
STRONG_LIMIT_RATIO = 1000.0


class Binary(str, Enum):
	UP = "U"
	DOWN = "D"

	@property
	def sign(self):
		return 1 if self is Binary.UP else -1


def binarize(value):
	"""Up for positive readings, down for negative ones; exactly 0 is up."""
	return Binary.UP if value >= 0.0 else Binary.DOWN


@dataclass(frozen=True)
class PointerConfig:
	"""Weak-coupling parameters of the measuring device.

	The pointer moves by g = lam / ensemble_size ** coupling_exponent for an up
	spin (and -g for down) and carries Gaussian noise of standard deviation
	`delta`. The exponent is 0.5 for the ensemble experiments and 1.0 for the
	single-apparatus case.

	Args:
		lam (float): coupling constant lambda, >= 0 (0 disables the coupling)
		delta (float): pointer noise standard deviation, > 0
		ensemble_size (int): N >= 1
		coupling_exponent (float, optional): 0.5 or 1.0. Defaults to 0.5.
	"""
	lam: float
	delta: float
	ensemble_size: int
	coupling_exponent: float = 0.5

	def __post_init__(self):
		try:
			if not (self.delta > 0.0 and math.isfinite(self.delta)):
				raise ValueError("delta must be positive, was {!r}".format(self.delta))
			if not (self.lam >= 0.0 and math.isfinite(self.lam)):
				raise ValueError("lambda must be non-negative, was {!r}".format(self.lam))
			if int(self.ensemble_size) != self.ensemble_size or self.ensemble_size < 1:
				raise ValueError("ensemble_size must be a positive integer, was {!r}".format(self.ensemble_size))
			if self.coupling_exponent not in (0.5, 1.0):
				raise ValueError("coupling_exponent must be 0.5 or 1.0, was {!r}".format(self.coupling_exponent))
		except Exception as e:
			logger.exception(e)
			raise
		object.__setattr__(self, "ensemble_size", int(self.ensemble_size))
		if self.lam == 0.0:
			logger.warning("Pointer coupling is disabled (lambda = 0)")
		elif not self.is_weak:
			logger.warning("Pointer is outside the weak regime: delta = {} < {} * g = {}".format(
				self.delta, WEAKNESS_RATIO, WEAKNESS_RATIO * self.g))

	@property
	def g(self):
		"""Effective pointer shift per measured spin."""
		return self.lam / self.ensemble_size ** self.coupling_exponent

	@property
	def is_weak(self):
		return self.delta >= WEAKNESS_RATIO * self.g

	@property
	def strength(self):
		"""g / delta."""
		return self.g / self.delta

	def noise_sum_std(self, k):
		"""Standard deviation of the pointer noise summed over k readings."""
		return self.delta * math.sqrt(k)

	def strong_limit(self):
		"""Same coupling with the noise shrunk to g / 1000: a collapsing pointer."""
		try:
			if self.g == 0.0:
				raise ValueError("A pointer without coupling has no strong limit")
		except Exception as e:
			logger.exception(e)
			raise
		return PointerConfig(self.lam, self.g / STRONG_LIMIT_RATIO, self.ensemble_size, self.coupling_exponent)


@dataclass(frozen=True)
class WeakReading:
	value: float
	orientation: Optional[spinalg.Orientation] = None
	row_index: Optional[int] = None
	binarized: Binary = field(init = False)

	def __post_init__(self):
		try:
			if self.row_index is not None and not (1 <= self.row_index <= 9):
				raise ValueError("row_index must lie in 1..9, was {}".format(self.row_index))
		except Exception as e:
			logger.exception(e)
			raise
		object.__setattr__(self, "binarized", binarize(self.value))


@dataclass(frozen=True)
class StrongOutcome:
	sign: int
	orientation: Optional[spinalg.Orientation] = None

	def __post_init__(self):
		spinalg.check_sign(self.sign)


# batched kernels ----------------------------------------------------------------
# `states` is an (n, d) complex array, one state per row. Row vectors are
# projected with `states @ P.T`.

def _split(states, op):
	plus = states @ spinalg.eigenprojector(op, 1).T
	minus = states - plus
	p_plus = np.clip(np.sum(np.abs(plus) ** 2, axis = 1), 0.0, 1.0)
	return plus, minus, p_plus


def _normalize_rows(v):
	return v / np.linalg.norm(v, axis = 1, keepdims = True)


def strong_measure_batch(states, op, u):
	"""Projective measurement of many states at once.

	Args:
		states (ndarray): (n, d) states
		op (Operator): +1/-1 valued operator of dimension d
		u (ndarray): (n,) uniforms in [0, 1); outcome +1 iff u < p_plus

	Returns:
		tuple(ndarray, ndarray): signs (n,) of +1/-1 and the collapsed (n, d) states
	"""
	plus, minus, p_plus = _split(states, op)
	signs = np.where(u < p_plus, 1, -1)
	post = np.where((signs > 0)[:, None], plus, minus)
	return signs, _normalize_rows(post)


def weak_measure_batch(states, op, cfg, u, z):
	"""Gaussian-pointer measurement of many states at once.

	The eigenvalue branch is picked with its Born probability (u < p_plus means
	+1) and the reading is q = branch * g + delta * z, which samples the
	two-Gaussian mixture. The state is then updated with the Kraus operator
	M(q) = sum_s exp(-(q - s g)^2 / (4 delta^2)) P_s and renormalized.

	Args:
		states (ndarray): (n, d) states
		op (Operator): +1/-1 valued operator
		cfg (PointerConfig): pointer
		u (ndarray): (n,) uniforms
		z (ndarray): (n,) standard normals

	Returns:
		tuple(ndarray, ndarray): readings (n,) and updated (n, d) states
	"""
	g = cfg.g
	delta = cfg.delta
	plus, minus, p_plus = _split(states, op)
	branch = np.where(u < p_plus, 1.0, -1.0)
	q = branch * g + delta * z
	log_w_plus = -((q - g) ** 2) / (4.0 * delta ** 2)
	log_w_minus = -((q + g) ** 2) / (4.0 * delta ** 2)
	top = np.maximum(log_w_plus, log_w_minus)
	post = np.exp(log_w_plus - top)[:, None] * plus + np.exp(log_w_minus - top)[:, None] * minus
	norms = np.linalg.norm(post, axis = 1)
	# both weighted branches can vanish only when the sampled branch had
	# negligible amplitude and the other weight underflowed
	bad = norms == 0.0
	if bad.any():
		post[bad] = np.where((branch[bad] > 0)[:, None], plus[bad], minus[bad])
		norms[bad] = np.linalg.norm(post[bad], axis = 1)
	return q, post / norms[:, None]


# single-state operations ---------------------------------------------------------

def _check_measurable(s, op):
	spinalg.check_dimensions(s, op)
	try:
		if not op.is_involution():
			raise ValueError("Only +1/-1 valued operators can be measured")
	except Exception as e:
		logger.exception(e)
		raise


def strong_measure(s, op, rng):
	"""Projective measurement with collapse.

	Args:
		s (PureState): state
		op (Operator): +1/-1 valued operator
		rng (RandomStream or numpy Generator): source of one uniform

	Returns:
		tuple(StrongOutcome, PureState)
	"""
	_check_measurable(s, op)
	u = np.array([rng.uniform()])
	signs, post = strong_measure_batch(s.amplitudes[None, :], op, u)
	return StrongOutcome(int(signs[0]), op.orientation), spinalg.PureState.normalized(post[0])


def weak_measure(s, op, cfg, rng, row_index = None):
	"""Weak measurement with the Gaussian pointer and its back-action.

	Draws one uniform (branch) and then one standard normal (noise) from `rng`.

	Args:
		s (PureState): state
		op (Operator): +1/-1 valued operator
		cfg (PointerConfig): pointer
		rng (RandomStream or numpy Generator): randomness
		row_index (int, optional): ledger row 1..9 the reading belongs to

	Returns:
		tuple(WeakReading, PureState)
	"""
	_check_measurable(s, op)
	u = np.array([rng.uniform()])
	z = np.array([rng.normal()])
	q, post = weak_measure_batch(s.amplitudes[None, :], op, cfg, u, z)
	return WeakReading(float(q[0]), op.orientation, row_index), spinalg.PureState.normalized(post[0])


def weak_measure_pair(s, op2, side, cfg, rng, row_index = None):
	"""Weak measurement of one particle of a pair; back-action on the joint state.

	Args:
		s (PureState): dim-4 pair state
		op2 (Operator): 2x2 single-spin operator
		side (Side): LEFT or RIGHT
		cfg (PointerConfig): pointer
		rng (RandomStream or numpy Generator): randomness
		row_index (int, optional): ledger row

	Returns:
		tuple(WeakReading, PureState)
	"""
	try:
		if s.dim != 4:
			raise spinalg.DimensionMismatchError("weak_measure_pair expects a pair state, got dimension {}".format(s.dim))
	except Exception as e:
		logger.exception(e)
		raise
	return weak_measure(s, spinalg.embed(op2, side), cfg, rng, row_index)


def reading_mixture_cdf(q, p_plus, cfg):
	"""Analytic CDF of a single reading: p+ N(+g, delta^2) + p- N(-g, delta^2)."""
	q = np.asarray(q, dtype=float)
	return (p_plus * scipy.stats.norm.cdf(q, loc = cfg.g, scale = cfg.delta)
		+ (1.0 - p_plus) * scipy.stats.norm.cdf(q, loc = -cfg.g, scale = cfg.delta))
