"""Reproducible random streams and Brownian increment grids.

Every random quantity used by the estimators is drawn from its own stream,
addressed by ``(master_seed, level, sample, purpose)``.  The address is hashed
(splitmix64 finaliser chain) into the 256-bit state of a xoshiro256++
generator, so a stream's output never depends on which other streams were
drawn before it, or on which thread drew it.  Normal variates come from a
256-layer ziggurat.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numba as nb
import numpy as np

__all__ = [
    "DEFAULT_SEED",
    "IncrementGrid",
    "Purpose",
    "Stream",
    "StreamId",
    "batch_brownian_paths",
    "batch_increments",
    "batch_normals",
    "coarsen",
    "derive_seed",
    "derive_stream",
    "resolve_seed",
    "sample_increments",
    "sample_initial",
]

DEFAULT_SEED = 42
_U64 = (1 << 64) - 1

_u = np.uint64
_GOLDEN = _u(0x9E3779B97F4A7C15)
_MASK52 = _u(0x000FFFFFFFFFFFFF)
_SALT_PURPOSE = _u(0xD6E8FEB86659FD93)
_SALT_LEVEL = _u(0xA0761D6478BD642F)
_SALT_SAMPLE = _u(0xE7037ED1A0B428DB)


class Purpose(enum.IntEnum):
    INITIAL = 0
    BROWNIAN = 1
    REFERENCE = 2


@dataclass(frozen=True)
class StreamId:
    """Address of one random stream: level ``l``, sample ``k`` (1-based), purpose."""

    level: int
    sample: int
    purpose: Purpose

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"level must be nonnegative, got {self.level}")
        if self.sample < 1:
            raise ValueError(f"sample must be a positive integer, got {self.sample}")
        object.__setattr__(self, "purpose", Purpose(self.purpose))


@dataclass(frozen=True)
class IncrementGrid:
    """Brownian increments on a uniform grid; ``increments`` has shape (steps, m)."""

    steps: int
    dt: float
    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        if inc.ndim != 2 or inc.shape[0] != self.steps:
            raise ValueError(
                f"increments must have shape ({self.steps}, m), got {np.shape(self.increments)}"
            )
        if self.steps < 1 or not self.dt > 0:
            raise ValueError("steps must be >= 1 and dt > 0")
        object.__setattr__(self, "increments", inc)

    @property
    def m(self) -> int:
        return self.increments.shape[1]

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    def brownian_path(self) -> np.ndarray:
        """Values W_0 = 0, W_dt, ..., W_T as an array of shape (steps + 1, m)."""
        path = np.zeros((self.steps + 1, self.m))
        np.cumsum(self.increments, axis=0, out=path[1:])
        return path


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(inline="always")
def _mix(z):
    z = (z ^ (z >> _u(30))) * _u(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _u(27))) * _u(0x94D049BB133111EB)
    return z ^ (z >> _u(31))


@nb.njit(inline="always")
def _rotl(x, k):
    return (x << _u(k)) | (x >> _u(64 - k))


@nb.njit(inline="always")
def _next(s0, s1, s2, s3):
    r = _rotl(s0 + s3, 23) + s0
    t = s1 << _u(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    return r, s0, s1, s2, s3


@nb.njit(inline="always")
def _unit(r):
    # open interval (0, 1)
    return (np.float64(r >> _u(11)) + 0.5) * (1.0 / 9007199254740992.0)


@nb.njit(inline="always")
def _seed_state(seed, level, sample, purpose):
    h = _mix(seed + _GOLDEN)
    h = _mix(h ^ _mix(purpose + _SALT_PURPOSE))
    h = _mix(h ^ _mix(level + _SALT_LEVEL))
    h = _mix(h ^ _mix(sample + _SALT_SAMPLE))
    s0 = _mix(h + _GOLDEN)
    s1 = _mix(h + _u(2) * _GOLDEN)
    s2 = _mix(h + _u(3) * _GOLDEN)
    s3 = _mix(h + _u(4) * _GOLDEN)
    if (s0 | s1 | s2 | s3) == _u(0):
        s0 = _GOLDEN
    return s0, s1, s2, s3


@nb.njit(inline="always")
def _gauss(s0, s1, s2, s3, ki, wi, fi, r_tail):
    while True:
        r, s0, s1, s2, s3 = _next(s0, s1, s2, s3)
        idx = np.intp(r & _u(0xFF))
        r = r >> _u(8)
        neg = (r & _u(1)) != _u(0)
        rabs = (r >> _u(1)) & _MASK52
        x = np.float64(rabs) * wi[idx]
        if neg:
            x = -x
        if rabs < ki[idx]:
            return x, s0, s1, s2, s3
        if idx == 0:
            while True:
                a, s0, s1, s2, s3 = _next(s0, s1, s2, s3)
                b, s0, s1, s2, s3 = _next(s0, s1, s2, s3)
                xx = -math.log(_unit(a)) / r_tail
                yy = -math.log(_unit(b))
                if yy + yy > xx * xx:
                    x = r_tail + xx
                    if neg:
                        x = -x
                    return x, s0, s1, s2, s3
        else:
            a, s0, s1, s2, s3 = _next(s0, s1, s2, s3)
            if (fi[idx - 1] - fi[idx]) * _unit(a) + fi[idx] < math.exp(-0.5 * x * x):
                return x, s0, s1, s2, s3


@nb.njit(cache=True, nogil=True)
def _fill_normals(state, out, ki, wi, fi, r_tail):
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    for i in range(out.shape[0]):
        out[i], s0, s1, s2, s3 = _gauss(s0, s1, s2, s3, ki, wi, fi, r_tail)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


@nb.njit(cache=True, nogil=True)
def _fill_uniforms(state, out):
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    for i in range(out.shape[0]):
        r, s0, s1, s2, s3 = _next(s0, s1, s2, s3)
        out[i] = _unit(r)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


@nb.njit(cache=True, nogil=True)
def _init_state(seed, level, sample, purpose, state):
    s0, s1, s2, s3 = _seed_state(seed, level, sample, purpose)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


@nb.njit(cache=True, nogil=True)
def _batch_normals(seed, level, samples, purpose, out, ki, wi, fi, r_tail):
    for p in range(samples.shape[0]):
        s0, s1, s2, s3 = _seed_state(seed, level, _u(samples[p]), purpose)
        for i in range(out.shape[1]):
            out[p, i], s0, s1, s2, s3 = _gauss(s0, s1, s2, s3, ki, wi, fi, r_tail)


@nb.njit(cache=True, nogil=True)
def _batch_walks(seed, level, samples, purpose, scale, out, ki, wi, fi, r_tail):
    # running sums of scale * z, i.e. a Brownian path sampled on the grid
    for p in range(samples.shape[0]):
        s0, s1, s2, s3 = _seed_state(seed, level, _u(samples[p]), purpose)
        w = 0.0
        for i in range(out.shape[1]):
            z, s0, s1, s2, s3 = _gauss(s0, s1, s2, s3, ki, wi, fi, r_tail)
            w += scale * z
            out[p, i] = w


def _ziggurat_tables():
    # Marsaglia-Tsang layout with 256 strips and 52-bit abscissae.
    r = 3.6541528853610087963519472518
    v = 0.00492867323399
    m = 2.0**52
    ki = np.zeros(256, dtype=np.uint64)
    wi = np.zeros(256)
    fi = np.zeros(256)
    dn = tn = r
    q = v / math.exp(-0.5 * dn * dn)
    ki[0] = int((dn / q) * m)
    ki[1] = 0
    wi[0] = q / m
    wi[255] = dn / m
    fi[0] = 1.0
    fi[255] = math.exp(-0.5 * dn * dn)
    for i in range(254, 0, -1):
        dn = math.sqrt(-2.0 * math.log(v / dn + math.exp(-0.5 * dn * dn)))
        ki[i + 1] = int((dn / tn) * m)
        tn = dn
        fi[i] = math.exp(-0.5 * dn * dn)
        wi[i] = dn / m
    return ki, wi, fi, r


_KI, _WI, _FI, _R_TAIL = _ziggurat_tables()


# ---------------------------------------------------------------------------
# Python surface


def _as_seed(seed: int) -> np.uint64:
    return np.uint64(int(seed) & _U64)


def resolve_seed(seed: int | None = None) -> int:
    """Explicit seed, else ``$MLMC_SEED``, else 42."""
    if seed is not None:
        return int(seed) & _U64
    env = os.environ.get("MLMC_SEED")
    if env:
        return int(env, 0) & _U64
    return DEFAULT_SEED


def derive_seed(master_seed: int, index: int) -> int:
    """Child seed for replicate ``index``; a pure function of both arguments."""
    state = np.zeros(4, dtype=np.uint64)
    _init_state(_as_seed(master_seed), np.uint64(0), np.uint64(int(index) & _U64),
                np.uint64(0xFFFF), state)
    return int(state[0])


class Stream:
    """A single-threaded generator whose output is fixed by ``(master_seed, id)``."""

    def __init__(self, master_seed: int, stream_id: StreamId):
        self.master_seed = int(master_seed) & _U64
        self.id = stream_id
        self._state = np.zeros(4, dtype=np.uint64)
        _init_state(
            _as_seed(master_seed),
            np.uint64(stream_id.level),
            np.uint64(stream_id.sample),
            np.uint64(int(stream_id.purpose)),
            self._state,
        )

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(int(n))
        _fill_normals(self._state, out, _KI, _WI, _FI, _R_TAIL)
        return out

    def uniforms(self, n: int) -> np.ndarray:
        out = np.empty(int(n))
        _fill_uniforms(self._state, out)
        return out

    def __repr__(self):
        return f"Stream(master_seed={self.master_seed}, id={self.id})"


def derive_stream(master_seed: int, stream_id: StreamId) -> Stream:
    return Stream(master_seed, stream_id)


def _samples_array(samples) -> np.ndarray:
    ks = np.ascontiguousarray(samples, dtype=np.int64)
    if ks.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    if ks.size and ks.min() < 1:
        raise ValueError("sample indices are 1-based")
    return ks


def batch_normals(master_seed: int, level: int, samples: Sequence[int],
                  purpose: Purpose, count: int) -> np.ndarray:
    """First ``count`` normals of each stream ``(level, k, purpose)``; shape (K, count).

    Row ``i`` equals ``derive_stream(master_seed, StreamId(level, samples[i],
    purpose)).normals(count)``.
    """
    ks = _samples_array(samples)
    out = np.empty((ks.size, int(count)))
    _batch_normals(_as_seed(master_seed), np.uint64(level), ks, np.uint64(int(purpose)),
                   out, _KI, _WI, _FI, _R_TAIL)
    return out


def batch_increments(master_seed: int, level: int, samples: Sequence[int],
                     steps: int, dt: float, m: int) -> np.ndarray:
    """Brownian increments for several samples; shape (K, steps, m)."""
    z = batch_normals(master_seed, level, samples, Purpose.BROWNIAN, steps * m)
    z *= math.sqrt(dt)
    return z.reshape(-1, steps, m)


def batch_brownian_paths(master_seed: int, level: int, samples: Sequence[int],
                         purpose: Purpose, steps: int, dt: float) -> np.ndarray:
    """Scalar Brownian paths W_dt..W_T (W_0 omitted); shape (K, steps).

    Bit-identical to the cumulative sum of the corresponding increment grid.
    """
    ks = _samples_array(samples)
    out = np.empty((ks.size, int(steps)))
    _batch_walks(_as_seed(master_seed), np.uint64(level), ks, np.uint64(int(purpose)),
                 math.sqrt(dt), out, _KI, _WI, _FI, _R_TAIL)
    return out


def sample_initial(problem, gen: Stream) -> np.ndarray:
    """Draw an initial value from ``problem.initial_law``."""
    law = problem.initial_law
    if law.kind == "point_mass":
        return np.array(law.point, dtype=float, copy=True)
    return law.sigma_bar * gen.normals(problem.d)


def sample_increments(gen: Stream, steps: int, dt: float, m: int) -> IncrementGrid:
    if steps < 1 or not dt > 0:
        raise ValueError("steps must be >= 1 and dt > 0")
    z = gen.normals(steps * m)
    z *= math.sqrt(dt)
    return IncrementGrid(steps, dt, z.reshape(steps, m))


def coarsen(fine: IncrementGrid) -> IncrementGrid:
    """Pairwise sums of consecutive fine increments."""
    if fine.steps % 2:
        raise ValueError(f"cannot coarsen a grid with an odd number of steps ({fine.steps})")
    inc = fine.increments[0::2] + fine.increments[1::2]
    return IncrementGrid(fine.steps // 2, 2.0 * fine.dt, inc)
