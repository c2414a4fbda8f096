import math
import os
import sys
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

sys.path.append(os.path.dirname(os.path.realpath(__file__)))

import logs
import utils

logger = logs.logging.getLogger('spinalg')

# tolerances -------------------------------------------------------------------
NORM_TOLERANCE = 1e-12
HERMITIAN_TOLERANCE = 1e-12
INVOLUTION_TOLERANCE = 1e-10

# Pauli matrices in the basis (|up_z>, |down_z>).
IDENTITY_2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class DimensionMismatchError(ValueError):
	"""A state and an operator (or two states) live in different spaces."""


class Side(str, Enum):
	"""Which particle a record or an operator refers to."""
	LEFT = "L"
	RIGHT = "R"
	SINGLE = "S"


# types ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PureState:
	"""Normalized amplitude vector of one spin (dim 2) or a spin pair (dim 4).

	Two-particle amplitudes are ordered `|left, right>` with `up` first,
	i.e. (uu, ud, du, dd). The array is stored read-only.
	"""
	amplitudes: np.ndarray

	def __post_init__(self):
		amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
		try:
			if amps.shape[0] not in (2, 4):
				raise ValueError("A state must have 2 or 4 amplitudes, got {}".format(amps.shape[0]))
			norm_sq = float(np.real(np.vdot(amps, amps)))
			if abs(norm_sq - 1.0) > NORM_TOLERANCE:
				raise ValueError("State is not normalized: squared norm {!r}".format(norm_sq))
		except Exception as e:
			logger.exception(e)
			raise
		amps.setflags(write = False)
		object.__setattr__(self, "amplitudes", amps)

	@classmethod
	def normalized(cls, amplitudes):
		"""Build a state from unnormalized amplitudes."""
		amps = np.array(amplitudes, dtype=complex).reshape(-1)
		norm = np.linalg.norm(amps)
		try:
			if norm == 0.0:
				raise ValueError("Cannot normalize the zero vector")
		except Exception as e:
			logger.exception(e)
			raise
		return cls(amps / norm)

	@property
	def dim(self):
		return self.amplitudes.shape[0]

	def allclose(self, other, atol = 1e-10):
		return self.dim == other.dim and np.allclose(self.amplitudes, other.amplitudes, atol = atol)

	def __repr__(self):
		return "PureState({})".format(np.array2string(self.amplitudes, precision = 4))


@dataclass(frozen=True)
class Orientation:
	"""A spin direction in the fixed z-x measurement plane, as one angle.

	The angle is measured from +z towards +x, in radians, and canonicalized to
	[0, 2pi).
	"""
	angle: float

	def __post_init__(self):
		object.__setattr__(self, "angle", utils.canonical_angle(self.angle))

	@classmethod
	def from_degrees(cls, degrees):
		return cls(math.radians(degrees))

	@property
	def degrees(self):
		return math.degrees(self.angle)

	def is_close(self, other, atol = 1e-9):
		d = abs(utils.canonical_angle(self.angle - other.angle))
		return min(d, utils.TWO_PI - d) <= atol


def relative_angle(a, b):
	"""theta_ab, the angle from orientation `a` to orientation `b` in (-pi, pi]."""
	d = utils.canonical_angle(b.angle - a.angle)
	return d - utils.TWO_PI if d > math.pi else d


@dataclass(frozen=True, eq=False)
class Operator:
	"""Hermitian 2x2 or 4x4 observable.

	`orientation` and `side` are bookkeeping only: they let readings carry
	the direction they were measured along.
	"""
	matrix: np.ndarray
	orientation: Optional[Orientation] = None
	side: Optional[Side] = None

	def __post_init__(self):
		m = np.array(self.matrix, dtype=complex)
		try:
			if m.shape not in ((2, 2), (4, 4)):
				raise ValueError("Operator must be 2x2 or 4x4, got shape {}".format(m.shape))
			if not np.allclose(m, m.conj().T, atol = HERMITIAN_TOLERANCE, rtol = 0.0):
				raise ValueError("Operator is not Hermitian")
		except Exception as e:
			logger.exception(e)
			raise
		m.setflags(write = False)
		object.__setattr__(self, "matrix", m)

	@property
	def dim(self):
		return self.matrix.shape[0]

	def is_involution(self, atol = INVOLUTION_TOLERANCE):
		"""True when op @ op is the identity, i.e. the eigenvalues are +1/-1."""
		return np.allclose(self.matrix @ self.matrix, np.eye(self.dim), atol = atol, rtol = 0.0)


# helpers ----------------------------------------------------------------------

def check_dimensions(state, op):
	try:
		if state.dim != op.dim:
			raise DimensionMismatchError(
				"State of dimension {} cannot be used with an operator of dimension {}".format(state.dim, op.dim))
	except Exception as e:
		logger.exception(e)
		raise


def check_sign(sign):
	try:
		if sign not in (1, -1):
			raise ValueError("sign must be +1 or -1, was {!r}".format(sign))
	except Exception as e:
		logger.exception(e)
		raise


def as_operator(op):
	return op if isinstance(op, Operator) else Operator(op)


# operations -------------------------------------------------------------------

def spin_operator(o):
	"""sigma_o = cos(angle) sigma_z + sin(angle) sigma_x.

	Args:
		o (Orientation): direction in the z-x plane

	Returns:
		Operator: Hermitian, traceless, eigenvalues +1 and -1
	"""
	return Operator(math.cos(o.angle) * SIGMA_Z + math.sin(o.angle) * SIGMA_X, orientation = o)


def eigenprojector(op, sign):
	"""Projector onto the `sign` eigenspace of a +1/-1 valued operator.

	For such operators the projector is (I + sign * op) / 2; this also covers
	the doubly degenerate eigenspaces of embedded pair operators.

	Raises:
		ValueError: operator is not +1/-1 valued
	"""
	op = as_operator(op)
	check_sign(sign)
	try:
		if not op.is_involution():
			raise ValueError("Operator does not have eigenvalues +1/-1 only")
	except Exception as e:
		logger.exception(e)
		raise
	return 0.5 * (np.eye(op.dim) + sign * op.matrix)


def eigenpair(op, sign):
	"""Normalized eigenvector of a 2x2 spin operator for eigenvalue `sign`.

	The global phase is fixed by making the first nonzero amplitude real and
	positive, so that repeated calls give identical vectors.

	Args:
		op (Operator or ndarray): 2x2 Hermitian operator
		sign (int): +1 or -1

	Raises:
		ValueError: non-Hermitian input, wrong shape, or no eigenvalue `sign`

	Returns:
		PureState
	"""
	op = as_operator(op)
	check_sign(sign)
	try:
		if op.dim != 2:
			raise ValueError("eigenpair expects a 2x2 operator, got dimension {}".format(op.dim))
	except Exception as e:
		logger.exception(e)
		raise
	values, vectors = np.linalg.eigh(op.matrix)
	idx = int(np.argmin(np.abs(values - sign)))
	try:
		if abs(values[idx] - sign) > 1e-9:
			raise ValueError("Operator has no eigenvalue {}; eigenvalues are {}".format(sign, values))
	except Exception as e:
		logger.exception(e)
		raise
	vec = vectors[:, idx]
	first = vec[np.argmax(np.abs(vec) > 1e-12)]
	vec = vec * (np.conj(first) / abs(first))
	return PureState.normalized(vec)


def singlet_state():
	"""(|up,down> - |down,up>) / sqrt(2)."""
	h = 1.0 / math.sqrt(2.0)
	return PureState(np.array([0.0, h, -h, 0.0], dtype=complex))


def product_state(left, right):
	"""|left> (x) |right> for two single-spin states."""
	try:
		if left.dim != 2 or right.dim != 2:
			raise DimensionMismatchError("product_state expects two single-spin states")
	except Exception as e:
		logger.exception(e)
		raise
	return PureState.normalized(np.kron(left.amplitudes, right.amplitudes))


def embed(op, side):
	"""Lift a single-spin operator onto the pair: op (x) I for the left
	particle, I (x) op for the right one.

	Args:
		op (Operator): 2x2 operator
		side (Side): LEFT or RIGHT

	Returns:
		Operator: 4x4, carrying the orientation of `op`
	"""
	op = as_operator(op)
	side = Side(side)
	try:
		if op.dim != 2:
			raise DimensionMismatchError("embed expects a 2x2 operator, got dimension {}".format(op.dim))
		if side == Side.SINGLE:
			raise ValueError("embed needs side LEFT or RIGHT")
	except Exception as e:
		logger.exception(e)
		raise
	if side == Side.LEFT:
		matrix = np.kron(op.matrix, IDENTITY_2)
	else:
		matrix = np.kron(IDENTITY_2, op.matrix)
	return Operator(matrix, orientation = op.orientation, side = side)


def born_probability(s, op, sign):
	"""||P_sign s||^2 for a +1/-1 valued operator.

	Raises:
		DimensionMismatchError: state and operator dimensions differ

	Returns:
		float: probability in [0, 1]
	"""
	op = as_operator(op)
	check_dimensions(s, op)
	v = eigenprojector(op, sign) @ s.amplitudes
	return float(min(1.0, max(0.0, np.real(np.vdot(v, v)))))


def expectation(s, op):
	"""<s|op|s> as a real number.

	Raises:
		DimensionMismatchError: state and operator dimensions differ
	"""
	op = as_operator(op)
	check_dimensions(s, op)
	value = np.vdot(s.amplitudes, op.matrix @ s.amplitudes)
	if abs(value.imag) > 1e-10:
		logger.warning("expectation has an imaginary part of {}".format(value.imag))
	return float(value.real)


def fidelity(a, b):
	"""|<a|b>|^2.

	Raises:
		DimensionMismatchError: states of different dimension
	"""
	try:
		if a.dim != b.dim:
			raise DimensionMismatchError("Cannot compare states of dimension {} and {}".format(a.dim, b.dim))
	except Exception as e:
		logger.exception(e)
		raise
	return float(min(1.0, abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2))
