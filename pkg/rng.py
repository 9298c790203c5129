"""Seeded, splittable random source.

Draws come from numpy's Philox4x64 counter-based bit generator keyed by a
hash of ``(seed, stream_id, derivation path)``.  A normal deviate is the
inverse normal CDF (``scipy.special.ndtri``) of a 53-bit uniform on the open
interval (0, 1).  The method is fixed so regressions stay bit-stable: raw
output ``i`` of a stream always maps to the same deviate, whoever reads it.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtri

logger = logging.getLogger(__name__)

_U64 = 2**64
_UNIT = 2.0**-53
_RAW_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter increment


def _philox_key(seed: int, stream_id: int, path: Tuple[int, ...]) -> int:
    state = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id, *path)).generate_state(2, np.uint64)
    return int(state[0]) | (int(state[1]) << 64)


class SeededRng:
    """A single-owner stream.  Use :meth:`derive_substream` to hand work to other threads."""

    def __init__(self, seed: int, stream_id: int = 0, _path: Tuple[int, ...] = ()):
        if not (0 <= seed < _U64 and 0 <= stream_id < _U64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.path = tuple(int(p) for p in _path)
        self._key = _philox_key(self.seed, self.stream_id, self.path)
        self._position = 0

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream_id={self.stream_id}, path={self.path}, position={self._position})"

    # ---------- counter-addressed access ----------

    def raw_at(self, offset: int, count: int) -> np.ndarray:
        """Raw 64-bit outputs ``[offset, offset + count)`` of this stream; does not advance it."""
        if offset < 0 or count < 0:
            raise ValueError("offset and count must be non-negative")
        skip = offset % _RAW_PER_BLOCK
        bitgen = np.random.Philox(counter=offset // _RAW_PER_BLOCK, key=self._key)
        return bitgen.random_raw(skip + count)[skip:]

    def normals_at(self, offset: int, count: int) -> np.ndarray:
        """Standard normal deviates for raw positions ``[offset, offset + count)``."""
        raw = self.raw_at(offset, count)
        uniforms = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _UNIT
        return ndtri(uniforms)

    # ---------- sequential access ----------

    def standard_normal(self, size: Optional[int] = None):
        """Next deviate (or ``size`` deviates) from the stream, advancing it."""
        count = 1 if size is None else int(size)
        draws = self.normals_at(self._position, count)
        self._position += count
        return float(draws[0]) if size is None else draws

    def derive_substream(self, step_index: int, particle_index: int) -> "SeededRng":
        return derive_substream(self, step_index, particle_index)


def standard_normal(rng: SeededRng) -> float:
    return rng.standard_normal()


def wiener_increment(rng: SeededRng, n: int, dt: float) -> np.ndarray:
    """One n-dimensional Brownian increment, N(0, dt I)."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return np.sqrt(dt) * rng.standard_normal(n)


def derive_substream(rng: SeededRng, step_index: int, particle_index: int) -> SeededRng:
    """Independent stream keyed by ``(seed, stream_id, path, step_index, particle_index)``.

    Depends only on the parent's identity, never on how far it has been read.
    """
    return SeededRng(rng.seed, rng.stream_id, (*rng.path, int(step_index), int(particle_index)))


def particle_normals(rng: SeededRng, n: int, first: int, count: int) -> np.ndarray:
    """Standard normals for particles ``[first, first + count)``, shape ``(count, n)``.

    Particle ``p`` always reads counter block ``[p*n, (p+1)*n)`` of ``rng``, so any
    partition of the ensemble across workers reproduces the serial draws.
    """
    return rng.normals_at(first * n, count * n).reshape(count, n)
