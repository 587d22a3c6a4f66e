"""Seeded Brownian increments on a dyadic grid with exact coarsening.

Every normal variate is a pure function of ``(seed, replicate, index,
component)``: the replicate's Philox key is ``(seed, replicate)`` and the
variate for ``(index, component)`` sits at stream position ``index*m +
component``. Uniforms are built from the top 53 bits of each raw word and
mapped through the inverse normal CDF.

Coarser levels are built as a binary tree: an entry at level ``j-1`` is the
sum of its two children at level ``j``, always added left child first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

MAX_LEVEL = 26
_MASK64 = (1 << 64) - 1
_BELOW_ONE = 1.0 - 2.0 ** -53


def counter_normals(seed: int, replicate: int, start: int, count: int) -> np.ndarray:
    """Standard normals at stream positions ``start .. start+count-1``."""
    bitgen = np.random.Philox(key=[seed & _MASK64, replicate & _MASK64])
    blocks, skip = divmod(start, 4)
    if blocks:
        bitgen.advance(blocks)
    # (raw >> 11) * 2^-53, shifted by half a step so that 0 never occurs
    u = np.random.Generator(bitgen).random(count + skip)[skip:]
    u += 2.0 ** -54
    np.minimum(u, _BELOW_ONE, out=u)
    return ndtri(u, out=u)


def generate_increments(t_end: float, finest_level: int, m: int, seed: int,
                        replicates) -> np.ndarray:
    """Finest-level increments for several replicates, shape (n, 2**finest_level, m)."""
    if finest_level > MAX_LEVEL:
        raise ValueError("ladder too deep")
    if finest_level < 0 or t_end <= 0 or m < 1:
        raise ValueError("need finest_level >= 0, t_end > 0, m >= 1")
    replicates = list(replicates)
    n_steps = 2 ** finest_level
    scale = np.sqrt(t_end / n_steps)
    out = np.empty((len(replicates), n_steps, m))
    for i, rep in enumerate(replicates):
        out[i] = counter_normals(seed, rep, 0, n_steps * m).reshape(n_steps, m)
    out *= scale
    return out


def coarsen_increments(increments: np.ndarray, finest_level: int, level: int) -> np.ndarray:
    """Aggregate ``(..., 2**finest_level, m)`` increments to ``level`` by pairwise tree sums."""
    if not 0 <= level <= finest_level:
        raise ValueError(f"level {level} outside [0, {finest_level}]")
    out = increments
    for _ in range(finest_level - level):
        out = out[..., 0::2, :] + out[..., 1::2, :]
    return out


def brownian_path(increments: np.ndarray) -> np.ndarray:
    """B at every finest grid time (left-to-right running sum), with B(0) = 0 prepended."""
    shape = increments.shape[:-2] + (1, increments.shape[-1])
    return np.concatenate([np.zeros(shape), np.cumsum(increments, axis=-2)], axis=-2)


@dataclass(frozen=True)
class DyadicPathLadder:
    """One replicate's Brownian path stored at the finest dyadic resolution."""

    t_end: float
    finest_level: int
    m: int
    seed: int
    replicate: int
    increments: np.ndarray

    @property
    def n_steps(self) -> int:
        return 2 ** self.finest_level

    @property
    def delta_min(self) -> float:
        return self.t_end / self.n_steps

    def level_of(self, delta: float) -> int:
        """Ladder level whose step is exactly ``delta``."""
        for j in range(self.finest_level + 1):
            if self.t_end / 2 ** j == delta:
                return j
        raise ValueError("step not dyadic")

    def coarsen(self, level: int) -> np.ndarray:
        return coarsen_increments(self.increments, self.finest_level, level)

    def path(self) -> np.ndarray:
        return brownian_path(self.increments)

    def snap(self, t: float) -> int:
        """Index of the finest grid point nearest to ``t``."""
        if not 0 <= t <= self.t_end:
            raise ValueError(f"time {t} outside [0, {self.t_end}]")
        return int(round(t / self.delta_min))

    def bridge_value(self, t: float) -> np.ndarray:
        k = self.snap(t)
        if k == 0:
            return np.zeros(self.m)
        return np.cumsum(self.increments[:k], axis=0)[-1]


def generate(t_end: float, finest_level: int, m: int, seed: int, replicate: int) -> DyadicPathLadder:
    increments = generate_increments(t_end, finest_level, m, seed, [replicate])[0]
    increments.setflags(write=False)
    return DyadicPathLadder(t_end, finest_level, m, seed, replicate, increments)


def coarsen(ladder: DyadicPathLadder, level: int) -> np.ndarray:
    return ladder.coarsen(level)


def bridge_value(ladder: DyadicPathLadder, t: float) -> np.ndarray:
    return ladder.bridge_value(t)
