import math
import os
import sys
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg

sys.path.append(os.path.dirname(os.path.realpath(__file__)))

import logs
import measurement
import spinalg

logger = logs.logging.getLogger('tsvf')

# `DEGENERACY_THRESHOLD`: |<Phi|psi>| below this makes a two-state vector degenerate.
DEGENERACY_THRESHOLD = 1e-9
# `SELECTION_THRESHOLD`: ABL denominators below this are treated as zero.
SELECTION_THRESHOLD = 1e-18
UNITARY_TOLERANCE = 1e-10


class DegenerateSelectionError(ValueError):
	"""Pre- and post-selection are jointly incompatible with the request."""


class Direction(str, Enum):
	FORWARD = "forward"
	BACKWARD = "backward"


@dataclass(frozen=True, eq=False)
class TwoStateVector:
	"""The state between two measurements: |psi(t')> from the past and
	<Phi(t'')| from the future.

	`backward` holds the ket |Phi>, whose bra is the backward-evolving vector.
	"""
	forward: spinalg.PureState
	backward: spinalg.PureState
	overlap: complex = field(init = False)

	def __post_init__(self):
		try:
			if self.forward.dim != self.backward.dim:
				raise spinalg.DimensionMismatchError("Forward and backward states differ in dimension: {} vs {}".format(
					self.forward.dim, self.backward.dim))
		except Exception as e:
			logger.exception(e)
			raise
		object.__setattr__(self, "overlap", complex(np.vdot(self.backward.amplitudes, self.forward.amplitudes)))

	@property
	def dim(self):
		return self.forward.dim

	@property
	def degenerate(self):
		return abs(self.overlap) < DEGENERACY_THRESHOLD


@dataclass(frozen=True, eq=False)
class UnitaryEvolution:
	"""A unitary propagator. `matrix=None` is the identity in any dimension."""
	matrix: Optional[np.ndarray] = None

	def __post_init__(self):
		if self.matrix is None:
			return
		m = np.array(self.matrix, dtype=complex)
		try:
			if m.shape not in ((2, 2), (4, 4)):
				raise ValueError("Evolution must be 2x2 or 4x4, got shape {}".format(m.shape))
			if not np.allclose(m @ m.conj().T, np.eye(m.shape[0]), atol = UNITARY_TOLERANCE, rtol = 0.0):
				raise ValueError("Evolution matrix is not unitary")
		except Exception as e:
			logger.exception(e)
			raise
		m.setflags(write = False)
		object.__setattr__(self, "matrix", m)

	@classmethod
	def from_hamiltonian(cls, hamiltonian, duration):
		"""exp(-i H t) for a constant Hamiltonian, in units where hbar = 1.

		Args:
			hamiltonian (Operator or ndarray): Hermitian generator
			duration (float): elapsed time t
		"""
		h = hamiltonian if isinstance(hamiltonian, spinalg.Operator) else spinalg.Operator(hamiltonian)
		return cls(scipy.linalg.expm(-1j * duration * h.matrix))

	@property
	def is_identity(self):
		return self.matrix is None

	def dagger(self):
		return self if self.matrix is None else UnitaryEvolution(self.matrix.conj().T)

	def apply(self, state):
		if self.matrix is None:
			return state
		try:
			if self.matrix.shape[0] != state.dim:
				raise spinalg.DimensionMismatchError("Evolution of dimension {} cannot act on a state of dimension {}".format(
					self.matrix.shape[0], state.dim))
		except Exception as e:
			logger.exception(e)
			raise
		return spinalg.PureState.normalized(self.matrix @ state.amplitudes)


@dataclass(frozen=True)
class MonteCarloEstimate:
	value: float
	selected: int
	standard_error: float


# deterministic calculus ---------------------------------------------------------

def evolve(tsv, u, direction):
	"""Evolve one of the two vectors.

	Forward applies U to |psi>; backward applies U^dagger to the ket |Phi>,
	which is the bra evolution <Phi| U.

	Args:
		tsv (TwoStateVector): two-state vector
		u (UnitaryEvolution): propagator
		direction (Direction): FORWARD or BACKWARD

	Returns:
		TwoStateVector
	"""
	direction = Direction(direction)
	if direction == Direction.FORWARD:
		return TwoStateVector(u.apply(tsv.forward), tsv.backward)
	return TwoStateVector(tsv.forward, u.dagger().apply(tsv.backward))


def two_state_at(pre, post, before = None, after = None):
	"""Two-state vector at an intermediate time t.

	Args:
		pre (PureState): pre-selected state at t'
		post (PureState): post-selected state at t''
		before (UnitaryEvolution, optional): propagator from t' to t
		after (UnitaryEvolution, optional): propagator from t to t''
	"""
	tsv = TwoStateVector(pre, post)
	tsv = evolve(tsv, before or UnitaryEvolution(), Direction.FORWARD)
	return evolve(tsv, after or UnitaryEvolution(), Direction.BACKWARD)


def _branch_weights(tsv, op):
	op = spinalg.as_operator(op)
	spinalg.check_dimensions(tsv.forward, op)
	weights = {}
	for sign in (1, -1):
		projected = spinalg.eigenprojector(op, sign) @ tsv.forward.amplitudes
		weights[sign] = abs(np.vdot(tsv.backward.amplitudes, projected)) ** 2
	return weights


def selection_probability(tsv, op):
	"""Probability of the post-selection given that `op` was measured strongly
	in between: the denominator of the ABL rule."""
	weights = _branch_weights(tsv, op)
	return float(weights[1] + weights[-1])


def abl_probability(tsv, op, sign):
	"""Probability of outcome `sign` of an intermediate measurement of `op`,
	given both the pre- and the post-selected state (ABL rule).

	Raises:
		DegenerateSelectionError: the post-selection cannot occur whatever
			the intermediate outcome

	Returns:
		float: probability; the two signs sum to 1
	"""
	spinalg.check_sign(sign)
	weights = _branch_weights(tsv, op)
	denominator = weights[1] + weights[-1]
	try:
		if denominator < SELECTION_THRESHOLD:
			raise DegenerateSelectionError("Pre- and post-selection are incompatible with measuring this observable")
	except Exception as e:
		logger.exception(e)
		raise
	return float(weights[sign] / denominator)


def weak_value(tsv, op):
	"""<Phi|op|psi> / <Phi|psi>.

	Raises:
		DegenerateSelectionError: |<Phi|psi>| < 1e-9

	Returns:
		complex: the weak value; the pointer position reflects its real part
	"""
	op = spinalg.as_operator(op)
	spinalg.check_dimensions(tsv.forward, op)
	try:
		if tsv.degenerate:
			raise DegenerateSelectionError("Weak value undefined: overlap {:.3g} is below {}".format(
				abs(tsv.overlap), DEGENERACY_THRESHOLD))
	except Exception as e:
		logger.exception(e)
		raise
	numerator = np.vdot(tsv.backward.amplitudes, op.matrix @ tsv.forward.amplitudes)
	return complex(numerator / tsv.overlap)


# Monte Carlo bridges ---------------------------------------------------------------

def _check_trials(trials):
	try:
		if int(trials) != trials or trials < 1:
			raise ValueError("trials must be a positive integer, was {!r}".format(trials))
	except Exception as e:
		logger.exception(e)
		raise


def ensemble_weak_average(state, op, cfg, trials, rng):
	"""Mean pointer reading over `trials` fresh copies of `state`, in units of g.

	Converges to <state|op|state> as the number of trials grows.

	Raises:
		ValueError: trials < 1 or a pointer without coupling
	"""
	_check_trials(trials)
	try:
		if cfg.g == 0.0:
			raise ValueError("Cannot express readings in units of g when g = 0")
	except Exception as e:
		logger.exception(e)
		raise
	spinalg.check_dimensions(state, op)
	states = np.tile(state.amplitudes, (trials, 1))
	u = rng.uniform(size = trials)
	z = rng.normal(size = trials)
	q, _ = measurement.weak_measure_batch(states, op, cfg, u, z)
	return float(np.mean(q) / cfg.g)


def abl_frequency(pre, op, post_op, post_sign, trials, rng):
	"""Frequency of outcome +1 of a strong `op` measurement among the runs whose
	later strong `post_op` measurement gave `post_sign`.

	Returns:
		MonteCarloEstimate: conditional frequency, number of post-selected runs
			and the binomial standard error
	"""
	_check_trials(trials)
	spinalg.check_dimensions(pre, op)
	states = np.tile(pre.amplitudes, (trials, 1))
	signs, states = measurement.strong_measure_batch(states, op, rng.uniform(size = trials))
	post_signs, _ = measurement.strong_measure_batch(states, post_op, rng.uniform(size = trials))
	selected = post_signs == post_sign
	n = int(selected.sum())
	if n == 0:
		logger.warning("No run survived the post-selection")
		return MonteCarloEstimate(float("nan"), 0, float("nan"))
	f = float(np.mean(signs[selected] == 1))
	return MonteCarloEstimate(f, n, math.sqrt(max(f * (1.0 - f), 1e-300) / n))


def postselected_weak_average(pre, op, post_op, post_sign, cfg, trials, rng):
	"""Mean weak reading of `op` (in units of g) among runs post-selected on a
	strong `post_op` outcome `post_sign`; tends to Re of the weak value.

	Returns:
		MonteCarloEstimate
	"""
	_check_trials(trials)
	spinalg.check_dimensions(pre, op)
	states = np.tile(pre.amplitudes, (trials, 1))
	q, states = measurement.weak_measure_batch(states, op, cfg, rng.uniform(size = trials), rng.normal(size = trials))
	post_signs, _ = measurement.strong_measure_batch(states, post_op, rng.uniform(size = trials))
	selected = post_signs == post_sign
	n = int(selected.sum())
	if n < 2:
		logger.warning("Too few runs survived the post-selection: {}".format(n))
		return MonteCarloEstimate(float("nan"), n, float("nan"))
	values = q[selected] / cfg.g
	return MonteCarloEstimate(float(np.mean(values)), n, float(np.std(values, ddof = 1) / math.sqrt(n)))
