"""Reproducible Brownian increments with exact coarsening.

Each ``(seed, path_id)`` pair keys its own Philox stream, and normal number
``i`` of a path is derived from counter block ``i // 4``. A path can
therefore be regenerated in any chunking and on any worker with identical
bits.

Increments are rounded to a binary quantum far below their standard
deviation (``2**-30`` relative). Sums of quantized numbers are exact in
double precision, so a coarse increment does not depend on the order in which
fine increments are added. That makes coarsening composable bit for bit
(``coarsen(coarsen(L, a), b) == coarsen(L, a*b)``), which plain floating
point summation does not guarantee.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

DRIVING = 0
HISTORY = 1

_MASK64 = (1 << 64) - 1
_QUANTUM_BITS = 30
_HEADER = struct.Struct("<QQdQQ")


class RatioMismatch(ValueError):
    pass


def quantum(delta: float) -> float:
    """Rounding unit used for increments with variance ``delta``."""
    return math.ldexp(1.0, math.ceil(math.log2(math.sqrt(delta))) - _QUANTUM_BITS)


def _check_u64(value, what):
    value = int(value)
    if not 0 <= value <= _MASK64:
        raise ValueError(f"{what} must fit in an unsigned 64-bit integer, got {value}")
    return value


def standard_normals(seed: int, path_id: int, start: int, count: int, stream: int = DRIVING) -> np.ndarray:
    """Normals ``start .. start + count - 1`` of the stream for ``(seed, path_id)``."""
    seed = _check_u64(seed, "seed")
    path_id = _check_u64(path_id, "path_id")
    if count <= 0:
        return np.empty(0)
    block, offset = divmod(int(start), 4)
    n_blocks = -(-(offset + count) // 4)
    bitgen = np.random.Philox(key=(path_id << 64) | seed, counter=block + (int(stream) << 192))
    words = bitgen.random_raw(4 * n_blocks)[offset:offset + count]
    uniform = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(uniform)


def increments(seed: int, path_id: int, delta: float, start_step: int, n_steps: int, dim: int,
               stream: int = DRIVING) -> np.ndarray:
    """Quantized ``N(0, delta)`` increments for steps ``start_step ..``, shape ``(n_steps, dim)``."""
    normals = standard_normals(seed, path_id, start_step * dim, n_steps * dim, stream)
    unit = quantum(delta)
    return np.rint(normals * (math.sqrt(delta) / unit)).reshape(n_steps, dim) * unit


@dataclass(frozen=True, eq=False)
class BrownianLattice:
    """Brownian increments on a uniform grid of step ``delta``.

    ``increments[j]`` is ``W(t_{j+1}) - W(t_j)`` where ``t_j = (start + j) * delta``
    in the lattice's own time frame.
    """

    delta: float
    increments: np.ndarray
    seed: int
    path_id: int
    stream: int = DRIVING
    start: int = 0

    def __post_init__(self):
        arr = np.array(self.increments, dtype=float, copy=True)
        if arr.ndim != 2:
            raise ValueError("increments must be a 2-d array (n_steps, m)")
        arr.setflags(write=False)
        object.__setattr__(self, "increments", arr)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @property
    def delta_fine(self) -> float:
        return self.delta

    def values(self) -> np.ndarray:
        """Cumulative path with ``W = 0`` at the first lattice point, shape ``(n_steps + 1, m)``."""
        out = np.zeros((self.n_steps + 1, self.dim))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def window(self, first: int, stop: int) -> "BrownianLattice":
        if not 0 <= first <= stop <= self.n_steps:
            raise IndexError(f"window [{first}, {stop}) outside lattice of {self.n_steps} steps")
        return BrownianLattice(self.delta, self.increments[first:stop], self.seed, self.path_id,
                               self.stream, self.start + first)

    def __eq__(self, other):
        if not isinstance(other, BrownianLattice):
            return NotImplemented
        return (self.delta == other.delta and self.seed == other.seed and self.path_id == other.path_id
                and np.array_equal(self.increments, other.increments))

    __hash__ = None

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(self.seed, self.path_id, self.delta, self.n_steps, self.dim)
        return header + self.increments.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "BrownianLattice":
        seed, path_id, delta, n_steps, dim = _HEADER.unpack_from(blob)
        payload = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
        if payload.size != n_steps * dim:
            raise ValueError("payload size does not match header")
        return cls(delta, payload.reshape(n_steps, dim), seed, path_id)

    def dump(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "BrownianLattice":
        return cls.from_bytes(Path(path).read_bytes())


def generate(seed: int, path_id: int, delta_fine: float, n_steps: int, m: int = 1, *,
             stream: int = DRIVING, start: int = 0) -> BrownianLattice:
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not delta_fine > 0:
        raise ValueError("delta_fine must be positive")
    inc = increments(seed, path_id, delta_fine, start, n_steps, m, stream)
    return BrownianLattice(float(delta_fine), inc, int(seed), int(path_id), stream, start)


def coarsen(lattice: BrownianLattice, ratio: int) -> BrownianLattice:
    """Sum consecutive blocks of ``ratio`` increments."""
    if int(ratio) != ratio or ratio < 1:
        raise RatioMismatch(f"ratio must be a positive integer, got {ratio}")
    ratio = int(ratio)
    if lattice.n_steps % ratio or lattice.start % ratio:
        raise RatioMismatch(f"ratio {ratio} does not divide {lattice.n_steps} steps")
    if ratio == 1:
        return lattice
    summed = sum_blocks(lattice.increments, ratio)
    return BrownianLattice(lattice.delta * ratio, summed, lattice.seed, lattice.path_id,
                           lattice.stream, lattice.start // ratio)


def sum_blocks(fine: np.ndarray, ratio: int) -> np.ndarray:
    """Block sums along axis 0 (ascending index, exact for quantized input)."""
    shape = (fine.shape[0] // ratio, ratio) + fine.shape[1:]
    blocks = fine.reshape(shape)
    out = blocks[:, 0].copy()
    for j in range(1, ratio):
        out += blocks[:, j]
    return out


def audit(lattice: BrownianLattice) -> dict:
    """Simple moment diagnostics: mean z-score and variance ratio."""
    flat = lattice.increments.ravel()
    count = flat.size
    mean = float(flat.mean())
    stderr = math.sqrt(lattice.delta / count)
    return {"n": count, "mean": mean, "mean_z": mean / stderr,
            "variance_ratio": float(flat.var()) / lattice.delta}
