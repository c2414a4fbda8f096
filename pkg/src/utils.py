import concurrent.futures
import configparser
import functools
import math
import os
import sys
import tempfile
import zlib

import numpy as np

sys.path.append(os.path.dirname(os.path.realpath(__file__)))

import logs

logger = logs.logging.getLogger('utils')

TWO_PI = 2.0 * math.pi


def canonical_angle(x):
	"""Map an angle in radians onto [0, 2pi).

	Args:
		x (float): angle in radians

	Returns:
		float: the same direction expressed in [0, 2pi)
	"""
	y = math.fmod(float(x), TWO_PI)
	if y < 0.0:
		y += TWO_PI
	# fmod of a tiny negative number can round up to exactly 2pi
	if y >= TWO_PI:
		y = 0.0
	return y


def angle_difference_deg(a_deg, b_deg):
	"""Signed smallest difference `a - b` in degrees, in (-180, 180]."""
	d = math.fmod(a_deg - b_deg, 360.0)
	if d <= -180.0:
		d += 360.0
	elif d > 180.0:
		d -= 360.0
	return d


# random streams ---------------------------------------------------------------

@functools.lru_cache(maxsize=512)
def _stage_key(master_seed, stage):
	"""Philox key for one (master seed, stage tag) combination.

	The stage tag is hashed with crc32 so that keys do not depend on Python's
	per-process string hashing.
	"""
	stage_code = zlib.crc32(stage.encode("utf-8"))
	seq = np.random.SeedSequence([int(master_seed), stage_code])
	return tuple(int(k) for k in seq.generate_state(2, dtype=np.uint64))


class RandomStream:
	"""Counter-based random stream identified by `(master_seed, serial, stage)`.

	The Philox key is derived from the master seed and the stage tag; the
	serial number occupies the third counter word. Two streams with the same
	identity produce identical draws no matter when or on which thread they
	are created.

	Args:
		master_seed (int): non-negative seed below 2**64
		serial (int): non-negative serial number (pair or particle)
		stage (str): stage tag such as "morning", "noon", "evening"
	"""

	def __init__(self, master_seed, serial, stage):
		try:
			if not (0 <= int(master_seed) < 2 ** 64):
				raise ValueError("master_seed must lie in [0, 2**64), was {}".format(master_seed))
			if not (0 <= int(serial) < 2 ** 64):
				raise ValueError("serial must lie in [0, 2**64), was {}".format(serial))
			if not isinstance(stage, str) or not stage:
				raise TypeError("stage must be a non-empty string")
		except Exception as e:
			logger.exception(e)
			raise
		self.master_seed = int(master_seed)
		self.serial = int(serial)
		self.stage = stage
		bit_generator = np.random.Philox(
			key = np.array(_stage_key(self.master_seed, stage), dtype=np.uint64),
			counter = np.array([0, 0, self.serial, 0], dtype=np.uint64)
		)
		self.generator = np.random.Generator(bit_generator)

	def uniform(self, size = None):
		return self.generator.random(size)

	def normal(self, size = None):
		return self.generator.standard_normal(size)

	def integers(self, low, high = None, size = None):
		return self.generator.integers(low, high, size)

	def permutation(self, x):
		return self.generator.permutation(x)

	def __repr__(self):
		return "RandomStream(master_seed={}, serial={}, stage={!r})".format(self.master_seed, self.serial, self.stage)


def draw_block(master_seed, serials, stage, n_uniform, n_normal = 0, workers = 1):
	"""Draw per-serial random numbers for one stage of a run.

	Each serial gets its own `RandomStream(master_seed, serial, stage)`; its
	uniforms are drawn first, then its standard normals. Work is split over
	`workers` threads in contiguous chunks and re-assembled in serial order,
	so the result never depends on `workers`.

	Args:
		master_seed (int): run seed
		serials (array-like(int)): serial numbers
		stage (str): stage tag
		n_uniform (int): uniforms per serial
		n_normal (int, optional): standard normals per serial. Defaults to 0.
		workers (int, optional): worker threads. Defaults to 1.

	Returns:
		tuple(ndarray, ndarray): arrays of shape `(len(serials), n_uniform)` and
			`(len(serials), n_normal)`
	"""
	try:
		if workers < 1:
			raise ValueError("workers must be >= 1, was {}".format(workers))
	except Exception as e:
		logger.exception(e)
		raise
	serials = np.asarray(serials, dtype=np.int64)

	def draw_chunk(chunk):
		u = np.empty((len(chunk), n_uniform))
		z = np.empty((len(chunk), n_normal))
		for i, serial in enumerate(chunk):
			stream = RandomStream(master_seed, int(serial), stage)
			u[i] = stream.uniform(n_uniform)
			z[i] = stream.normal(n_normal)
		return u, z

	if workers == 1 or len(serials) < 2:
		return draw_chunk(serials)
	chunks = [c for c in np.array_split(serials, workers) if len(c) > 0]
	with concurrent.futures.ThreadPoolExecutor(max_workers = workers) as pool:
		parts = list(pool.map(draw_chunk, chunks))
	return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# files ------------------------------------------------------------------------

def write_atomic(path, write_fn):
	"""Write a text file so that it either appears complete or not at all.

	`write_fn` receives an open text handle for a temporary file in the target
	directory; the temporary file is renamed over `path` only after `write_fn`
	returns.

	Args:
		path (str): destination path
		write_fn (callable): writes the content into the given handle
	"""
	directory = os.path.dirname(os.path.abspath(path))
	os.makedirs(directory, exist_ok = True)
	fd, tmp_path = tempfile.mkstemp(dir = directory, prefix = ".tmp_", suffix = "_" + os.path.basename(path))
	try:
		with os.fdopen(fd, "w", newline = "") as handle:
			write_fn(handle)
		os.replace(tmp_path, path)
	except Exception as e:
		if os.path.exists(tmp_path):
			os.remove(tmp_path)
		logger.exception(e)
		raise
	return path


def read_flat_config(path):
	"""Read a flat `key = value` text file.

	Lines starting with `#` are comments. There are no sections; the stdlib
	parser is given an implicit one.

	Args:
		path (str): file path

	Returns:
		dict: keys (str) -> values (str)
	"""
	parser = configparser.ConfigParser(interpolation = None, inline_comment_prefixes = ("#",))
	parser.optionxform = str
	try:
		with open(path, "r") as f:
			parser.read_string("[flat]\n" + f.read(), source = path)
	except configparser.Error as e:
		logger.exception(e)
		raise ValueError("Could not parse {}: {}".format(path, e)) from e
	return dict(parser["flat"])


def format_flat_config(mapping, header = None):
	"""Render a mapping as flat `key = value` lines (insertion order kept)."""
	lines = []
	if header:
		lines += ["# " + h for h in header.splitlines()]
	lines += ["{} = {}".format(k, v) for k, v in mapping.items()]
	return "\n".join(lines) + "\n"


def write_flat_config(path, mapping, header = None):
	"""Atomically write `mapping` as a flat `key = value` file."""
	text = format_flat_config(mapping, header)
	return write_atomic(path, lambda handle: handle.write(text))
