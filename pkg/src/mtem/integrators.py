"""Explicit one-step schemes on a shared Brownian ladder.

``MTEM`` uses the radially rescaled truncation, ``TEM`` the bounded (clamped)
truncation and ``EM`` the raw coefficients. All three share ``run_batch``,
which advances many replicates at once; the single-path ``run`` is the
one-replicate case of the same code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .brownian import DyadicPathLadder
from .core import SdeProblem, batch_norm
from .truncation import TruncationPolicy, _broadcast, _project

SCHEMES = ("MTEM", "EM", "TEM")
OVERFLOW_GUARD = 1e154


def _check_scheme(scheme: str, h_delta: Optional[float]):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme != "EM" and h_delta is None:
        raise ValueError(f"scheme {scheme} needs a truncation radius")


def coefficients(problem: SdeProblem, scheme: str, h_delta: Optional[float], x: np.ndarray):
    """Drift and diffusion as used by ``scheme`` at states ``x``."""
    if scheme == "EM":
        return problem.drift(x), problem.diffusion(x)
    y, scale, _ = _project(h_delta, x)
    f = np.asarray(problem.drift(y), dtype=np.float64)
    g = np.asarray(problem.diffusion(y), dtype=np.float64)
    if scheme == "TEM":
        return f, g
    return f * _broadcast(scale, f), g * _broadcast(scale, g)


def _noise(g: np.ndarray, dB: np.ndarray) -> np.ndarray:
    if g.shape[-1] == 1:
        return g[..., 0] * dB[..., :1]
    return np.einsum("...ij,...j->...i", g, dB)


def scheme_step(problem: SdeProblem, scheme: str, h_delta: Optional[float],
                x: np.ndarray, delta: float, dB: np.ndarray) -> np.ndarray:
    f, g = coefficients(problem, scheme, h_delta, x)
    return x + f * delta + _noise(g, dB)


def mtem_step(x, delta: float, h_delta: float, dB, problem: SdeProblem) -> np.ndarray:
    """x + f_D(x) delta + g_D(x) dB."""
    x = np.asarray(x, dtype=np.float64).reshape(problem.d)
    dB = np.asarray(dB, dtype=np.float64).reshape(problem.m)
    return scheme_step(problem, "MTEM", h_delta, x, delta, dB)


def run_batch(problem: SdeProblem, scheme: str, delta: float, h_delta: Optional[float],
              increments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Iterate the scheme for every replicate row of ``increments`` (shape (n, N, m)).

    Returns ``(states, diverged_at)``: states has shape (n, N+1, d) with NaN from
    the first non-finite or overflowing state on, and ``diverged_at`` holds that
    index (-1 when the path stayed finite).
    """
    _check_scheme(scheme, h_delta)
    n, n_steps, _ = increments.shape
    states = np.empty((n, n_steps + 1, problem.d))
    states[:, 0] = problem.x0
    diverged_at = np.full(n, -1, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    x = states[:, 0].copy()
    with np.errstate(all="ignore"):
        for k in range(n_steps):
            x = scheme_step(problem, scheme, h_delta, x, delta, increments[:, k])
            states[:, k + 1] = x
            bad = alive & ~(batch_norm(x) <= OVERFLOW_GUARD)
            if bad.any():
                diverged_at[bad] = k + 1
                alive &= ~bad
                x[bad] = 0.0
    for i in np.flatnonzero(diverged_at >= 0):
        states[i, diverged_at[i]:] = np.nan
    return states, diverged_at


@dataclass(frozen=True)
class GridSolution:
    """Discrete trajectory X_0..X_N on the grid of step ``delta``.

    When the path diverged, ``states`` stops just before ``diverged_at``.
    """

    scheme: str
    delta: float
    h_delta: Optional[float]
    states: np.ndarray
    diverged_at: Optional[int]
    t_end: float
    problem: SdeProblem = field(repr=False, compare=False)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.delta))

    def _cell(self, t: float) -> int:
        if not 0 <= t <= self.t_end:
            raise ValueError(f"time {t} outside [0, {self.t_end}]")
        k = self.n_steps if t == self.t_end else int(t // self.delta)
        if k >= len(self.states):
            raise ValueError("trajectory diverged")
        return k


def run(problem: SdeProblem, policy: Optional[TruncationPolicy], scheme: str, delta: float,
        ladder: DyadicPathLadder) -> GridSolution:
    level = ladder.level_of(delta)
    h_delta = None if scheme == "EM" or policy is None else policy.h(delta)
    states, div = run_batch(problem, scheme, delta, h_delta, ladder.coarsen(level)[None])
    diverged_at = int(div[0]) if div[0] >= 0 else None
    kept = states[0] if diverged_at is None else states[0, :diverged_at]
    return GridSolution(scheme, delta, h_delta, kept, diverged_at, ladder.t_end, problem)


def step_process_value(sol: GridSolution, t: float) -> np.ndarray:
    """Piecewise-constant readout: X_k on [k delta, (k+1) delta), X_N at t = T."""
    return sol.states[sol._cell(t)]


def continuous_value(sol: GridSolution, ladder: DyadicPathLadder, t: float) -> np.ndarray:
    """Frozen-coefficient interpolant X_k + F(X_k)(t - k delta) + G(X_k)(B(t) - B(k delta)).

    ``t`` is snapped to the ladder's finest grid; at grid times of ``sol`` the
    value is X_k itself.
    """
    i = ladder.snap(t)
    ratio = 2 ** (ladder.finest_level - ladder.level_of(sol.delta))
    k = i // ratio
    if i == ladder.n_steps:
        k = sol.n_steps
    if k >= len(sol.states):
        raise ValueError("trajectory diverged")
    offset = i - k * ratio
    if offset == 0:
        return sol.states[k]
    x = sol.states[k]
    f, g = coefficients(sol.problem, sol.scheme, sol.h_delta, x)
    dB = np.cumsum(ladder.increments[k * ratio:i], axis=0)[-1]
    return x + f * (offset * ladder.delta_min) + _noise(g, dB)


def interpolate_on_fine_grid(problem: SdeProblem, scheme: str, h_delta: Optional[float],
                             states: np.ndarray, fine_increments: np.ndarray,
                             delta_min: float) -> tuple[np.ndarray, np.ndarray]:
    """Both continuous-time readouts at every finest grid time, batched.

    ``states`` is (n, N+1, d) at the coarse step; ``fine_increments`` is
    (n, N*r, m). Returns ``(continuous, step)`` each of shape (n, N*r+1, d);
    the final point is X_N for both.
    """
    n, n1, d = states.shape
    n_coarse = n1 - 1
    m = fine_increments.shape[-1]
    r = fine_increments.shape[1] // n_coarse
    x = states[:, :-1]
    with np.errstate(all="ignore"):
        f, g = coefficients(problem, scheme, h_delta, x)
        cells = fine_increments.reshape(n, n_coarse, r, m)
        db = np.zeros_like(cells)
        if r > 1:
            db[:, :, 1:] = np.cumsum(cells[:, :, :-1], axis=2)
        tau = (np.arange(r) * delta_min)[None, None, :, None]
        cont = x[:, :, None, :] + f[:, :, None, :] * tau + _noise(g[:, :, None], db)
    cont = np.concatenate([cont.reshape(n, n_coarse * r, d), states[:, -1:]], axis=1)
    step = np.concatenate([np.repeat(x, r, axis=1), states[:, -1:]], axis=1)
    return cont, step
