"""Problem definitions, norms and the structural-condition parameters.

Coefficient callbacks are vectorised numpy functions: ``drift`` maps an array
of shape ``(..., d)`` to ``(..., d)`` and ``diffusion`` maps ``(..., d)`` to
``(..., d, m)``. A single state is just the ``(d,)`` case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Coefficient = Callable[[np.ndarray], np.ndarray]
Profile = Callable[[float], float]


def euclidean_norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state")
    return float(np.sqrt(np.sum(x * x)))


def trace_norm(a) -> float:
    """sqrt(trace(A^T A)), i.e. the Frobenius norm."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite matrix")
    return float(np.sqrt(np.sum(a * a)))


def batch_norm(x: np.ndarray, axes: int = 1) -> np.ndarray:
    """Norm over the trailing ``axes`` dimensions (1 for vectors, 2 for matrices)."""
    sq = x * x
    for _ in range(axes):
        sq = sq.sum(axis=-1)
    return np.sqrt(sq)


@dataclass(frozen=True)
class SdeProblem:
    d: int
    m: int
    drift: Coefficient
    diffusion: Coefficient
    x0: np.ndarray
    lipschitz_profile: Profile
    name: str = "custom"
    f0_norm: float = field(init=False)
    g0_norm: float = field(init=False)

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ValueError("dimensions must be positive")
        x0 = np.asarray(self.x0, dtype=np.float64).reshape(self.d)
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        zero = np.zeros(self.d)
        f0 = np.asarray(self.drift(zero), dtype=np.float64)
        g0 = np.asarray(self.diffusion(zero), dtype=np.float64)
        if f0.shape != (self.d,) or g0.shape != (self.d, self.m):
            raise ValueError(
                f"coefficient shapes {f0.shape}, {g0.shape} do not match d={self.d}, m={self.m}"
            )
        object.__setattr__(self, "f0_norm", euclidean_norm(f0))
        object.__setattr__(self, "g0_norm", trace_norm(g0))

    def lipschitz(self, radius: float) -> float:
        return float(self.lipschitz_profile(radius))


@dataclass(frozen=True)
class ConditionSet:
    """Exponents and constants of the monotonicity, Khasminskii and diffusion-growth conditions.

    ``q`` is restricted to the open regime ``2 < q < p``; ``r``/``Kbar`` are only
    needed for the sup-over-time results and may be left as ``None``.
    """

    p: float
    q: float
    K: float
    H: float
    r: Optional[float] = None
    Kbar: Optional[float] = None

    def __post_init__(self):
        if not (2 < self.q < self.p <= 6):
            raise ValueError(f"need 2 < q < p <= 6, got q={self.q}, p={self.p}")
        if self.K <= 0 or self.H <= 0:
            raise ValueError("K and H must be positive")
        if (self.r is None) != (self.Kbar is None):
            raise ValueError("r and Kbar must be given together")
        if self.r is not None:
            if not (2 <= self.r < self.p):
                raise ValueError(f"need 2 <= r < p, got r={self.r}")
            if self.q > self.p + 2 - self.r:
                raise ValueError("need q <= p + 2 - r")
            if self.Kbar <= 0:
                raise ValueError("Kbar must be positive")

    @property
    def p_bar(self) -> float:
        """Exponent of the uniform-in-time moment bound, 2 + p - r."""
        return self.p if self.r is None else 2 + self.p - self.r


@dataclass(frozen=True)
class MarginReport:
    """Worst sampled ratio of a functional against its declared bound (<= 1 means consistent)."""

    name: str
    worst_ratio: float
    worst_point: tuple
    samples: int
    bound: float = float("nan")

    def passed(self, rtol: float = 1e-9) -> bool:
        return bool(self.worst_ratio <= 1 + rtol)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "worst_ratio": self.worst_ratio,
            "worst_point": [list(map(float, np.ravel(p))) for p in self.worst_point],
            "samples": self.samples,
            "bound": self.bound,
            "passed": self.passed(),
        }


def sample_ball(rng: np.random.Generator, n: int, d: int, radius: float,
                inner: float = 0.0) -> np.ndarray:
    """Uniform samples from the shell inner <= |x| <= radius in R^d."""
    direction = rng.standard_normal((n, d))
    nrm = batch_norm(direction)
    nrm[nrm == 0] = 1.0
    direction /= nrm[:, None]
    lo, hi = inner ** d, radius ** d
    rad = (lo + (hi - lo) * rng.random(n)) ** (1.0 / d)
    return direction * rad[:, None]


def _distinct_pairs(rng, n, d, radius, min_sep=1e-14):
    """Pairs in the ball: half far apart, half close together to probe the local slope."""
    x = sample_ball(rng, n, d, radius)
    y = sample_ball(rng, n, d, radius)
    half = n // 2
    scale = 10.0 ** rng.uniform(-8, -1, size=half)
    y[:half] = x[:half] + sample_ball(rng, half, d, 1.0) * (radius * scale)[:, None]
    over = batch_norm(y[:half]) > radius
    y[:half][over] *= (radius / batch_norm(y[:half][over]))[:, None]
    while True:
        bad = batch_norm(x - y) < min_sep
        if not bad.any():
            return x, y
        y[bad] = sample_ball(rng, int(bad.sum()), d, radius)


def check_local_lipschitz(problem: SdeProblem, R: float, samples: int,
                          rng_seed: int) -> tuple[MarginReport, MarginReport]:
    """Worst |f(x)-f(y)| / (L_R |x-y|) and the same for g over pairs in the ball of radius R."""
    if R <= 0 or samples < 1:
        raise ValueError("need R > 0 and samples >= 1")
    rng = np.random.default_rng(rng_seed)
    x, y = _distinct_pairs(rng, samples, problem.d, R)
    lip = problem.lipschitz(R)
    dist = batch_norm(x - y)
    reports = []
    for name, fn, axes in (("drift", problem.drift, 1), ("diffusion", problem.diffusion, 2)):
        ratio = batch_norm(fn(x) - fn(y), axes) / (lip * dist)
        i = int(np.argmax(ratio))
        reports.append(MarginReport(f"local_lipschitz_{name}", float(ratio[i]),
                                    (x[i], y[i]), samples, lip))
    return reports[0], reports[1]
