"""Radially rescaled coefficient truncation and the truncation radius h(delta).

Outside the ball of radius ``h`` the modified map evaluates the coefficient on
the sphere and scales it by ``|x|/h``, so it keeps linear growth instead of
being clamped (as in the bounded baseline ``truncate_mao``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (ConditionSet, MarginReport, Profile, SdeProblem, batch_norm,
                   sample_ball)

BRACKET = (1e-6, 1e12)
MAX_BISECTIONS = 200


def _project(h_delta: float, x: np.ndarray):
    """Return (point on or inside the sphere, scale factor, inside mask)."""
    x = np.asarray(x, dtype=np.float64)
    nrm = batch_norm(x)
    inside = nrm <= h_delta
    safe = np.where(inside, 1.0, nrm)
    y = np.where(inside[..., None], x, x * (h_delta / safe)[..., None])
    scale = np.where(inside, 1.0, nrm / h_delta)
    return y, scale, inside


def _broadcast(scale: np.ndarray, value: np.ndarray) -> np.ndarray:
    return scale.reshape(scale.shape + (1,) * (value.ndim - scale.ndim))


def truncate_modified(fn: Callable, h_delta: float, x) -> np.ndarray:
    """fn(x) on |x| <= h, (|x|/h) * fn(h x/|x|) outside.

    Works for drift (vector output) and diffusion (matrix output) alike. Inside
    the ball the result is bitwise ``fn(x)``.
    """
    y, scale, _ = _project(h_delta, x)
    value = np.asarray(fn(y), dtype=np.float64)
    return value * _broadcast(scale, value)


def truncate_mao(fn: Callable, h_delta: float, x) -> np.ndarray:
    """Bounded baseline: fn evaluated at the argument clamped to the ball."""
    y, _, _ = _project(h_delta, x)
    return np.asarray(fn(y), dtype=np.float64)


@dataclass(frozen=True)
class TruncationPolicy:
    """Truncation radius ``h`` on ``(0, delta_star]``.

    ``radius`` is the raw map; ``h`` validates the argument and memoises.
    """

    radius: Callable[[float], float]
    delta_star: float
    description: str
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def h(self, delta: float) -> float:
        if not (0 < delta <= self.delta_star):
            raise ValueError(f"step {delta} outside (0, {self.delta_star}]")
        try:
            return self._cache[delta]
        except KeyError:
            value = float(self.radius(delta))
            self._cache[delta] = value
            return value

    def lipschitz_at(self, problem: SdeProblem, delta: float) -> float:
        return problem.lipschitz(self.h(delta))


def constant_policy(radius: float, delta_star: float = 1.0) -> TruncationPolicy:
    """Fixed radius for every step; an oracle device that never shrinks with the step."""
    return TruncationPolicy(lambda _: radius, delta_star, f"constant h = {radius:g}")


def _log_l(profile: Profile, exponent: float, log_r: float) -> float:
    try:
        lip = float(profile(math.exp(log_r)))
    except OverflowError:
        return -math.inf
    if lip <= 0:
        raise ValueError("Lipschitz profile must be positive")
    return -(exponent * log_r + 4.0 * math.log(lip)) if math.isfinite(lip) else -math.inf


def invert_profile(profile: Profile, delta: float, exponent: float = 1.0) -> float:
    """Solve 1/(R^exponent L_R^4) = delta for R by bisection in log R."""
    target = math.log(delta)
    lo, hi = math.log(BRACKET[0]), math.log(BRACKET[1])
    f_lo, f_hi = _log_l(profile, exponent, lo) - target, _log_l(profile, exponent, hi) - target
    if not (f_lo >= 0 >= f_hi):
        raise ValueError("profile not invertible on range")
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = _log_l(profile, exponent, mid) - target
        if f_mid == 0:
            return math.exp(mid)
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return math.exp(lo if abs(f_lo) <= abs(f_hi) else hi)


def build_h_from_profile(profile: Profile, delta_star: float, exponent: float = 1.0,
                         description: Optional[str] = None) -> TruncationPolicy:
    """h as the inverse of l(R) = 1 / (R^exponent * L_R^4).

    At R = h(delta) this gives L_{h}^4 * delta = h^{-exponent}, which tends to 0
    as delta -> 0 for any exponent > 0. ``exponent=1`` is the generic
    construction; the exponential example uses ``1 - eps``.
    """
    if not exponent > 0:
        raise ValueError("exponent must be positive")
    if description is None:
        description = f"inverse of l(R)=1/(R^{exponent:g}*L_R^4)"
    # fail early when delta_star itself is out of reach
    invert_profile(profile, delta_star, exponent)
    return TruncationPolicy(lambda delta: invert_profile(profile, delta, exponent),
                            delta_star, description)


def condition_2_3_trend(problem: SdeProblem, policy: TruncationPolicy,
                        levels: int = 20) -> np.ndarray:
    """L_{h(delta)}^4 * delta along delta = delta_star * 2^-j, j = 0..levels."""
    out = []
    for j in range(levels + 1):
        delta = policy.delta_star * 2.0 ** -j
        out.append(policy.lipschitz_at(problem, delta) ** 4 * delta)
    return np.array(out)


def admissibility_margin(h_delta: float, lip_h: float, delta: float, p: float, q: float) -> float:
    """h / (L^{2q} delta^{q/2})^{-1/(p-q)}; >= 1 when the step is admissible."""
    log_bound = -(2 * q * math.log(lip_h) + 0.5 * q * math.log(delta)) / (p - q)
    return math.exp(math.log(h_delta) - log_bound)


@dataclass(frozen=True)
class AdmissibilityRecord:
    delta: float
    h_delta: float
    lip_h: float
    coeff_at_zero_ok: bool
    coeff_at_zero_margin: float
    lipschitz_ok: bool
    radius_ok: bool
    radius_margin: float
    l4_delta: float
    l4_delta_ok: bool

    @property
    def lemma_hypotheses(self) -> bool:
        return self.coeff_at_zero_ok and self.lipschitz_ok

    @property
    def theorem_covered(self) -> bool:
        return self.lemma_hypotheses and self.radius_ok and self.l4_delta_ok

    def as_dict(self) -> dict:
        return {
            "delta": self.delta, "h_delta": self.h_delta, "L_h_delta": self.lip_h,
            "coeff_at_zero_ok": self.coeff_at_zero_ok,
            "coeff_at_zero_margin": self.coeff_at_zero_margin,
            "lipschitz_ok": self.lipschitz_ok, "radius_ok": self.radius_ok,
            "radius_margin": self.radius_margin, "L4_delta": self.l4_delta,
            "L4_delta_ok": self.l4_delta_ok, "theorem_covered": self.theorem_covered,
        }


def check_step_admissible(problem: SdeProblem, policy: TruncationPolicy,
                          cond: ConditionSet, delta: float, rtol: float = 1e-9) -> AdmissibilityRecord:
    """Diagnose whether ``delta`` satisfies the hypotheses behind the rate results.

    The zero-point check uses max(|f(0)|, |g(0)|): the global Lipschitz bound
    for g needs the same hypothesis as the one for f.
    """
    h_delta = policy.h(delta)
    lip = problem.lipschitz(h_delta)
    at_zero = max(problem.f0_norm, problem.g0_norm)
    zero_margin = math.inf if at_zero == 0 else h_delta / at_zero
    radius_margin = admissibility_margin(h_delta, lip, delta, cond.p, cond.q)
    l4 = lip ** 4 * delta
    return AdmissibilityRecord(
        delta=delta, h_delta=h_delta, lip_h=lip,
        coeff_at_zero_ok=at_zero <= h_delta, coeff_at_zero_margin=zero_margin,
        lipschitz_ok=lip >= 1, radius_ok=radius_margin >= 1 - rtol,
        radius_margin=radius_margin, l4_delta=l4, l4_delta_ok=l4 <= 1,
    )


def _lemma_pairs(rng: np.random.Generator, n: int, d: int, h_delta: float):
    """Pairs covering inside/inside, outside/outside and straddling geometries."""
    k = n // 4
    x = np.empty((n, d))
    y = np.empty((n, d))
    x[:k], y[:k] = sample_ball(rng, k, d, h_delta), sample_ball(rng, k, d, h_delta)
    x[k:2 * k] = sample_ball(rng, k, d, 3 * h_delta, h_delta)
    y[k:2 * k] = sample_ball(rng, k, d, 3 * h_delta, h_delta)
    x[2 * k:3 * k] = sample_ball(rng, k, d, h_delta)
    y[2 * k:3 * k] = sample_ball(rng, k, d, 3 * h_delta, h_delta)
    # near-sphere pairs straddling the boundary at small separation
    rest = n - 3 * k
    u = sample_ball(rng, rest, d, 1.0, 1.0)
    sep = h_delta * 10.0 ** rng.uniform(-9, -1, size=rest)
    x[3 * k:] = u * (h_delta - sep * rng.random(rest))[:, None]
    y[3 * k:] = x[3 * k:] + sample_ball(rng, rest, d, 1.0) * (2 * sep)[:, None]
    while True:
        bad = batch_norm(x - y) < 1e-14
        if not bad.any():
            return x, y
        y[bad] = sample_ball(rng, int(bad.sum()), d, 3 * h_delta)


def check_truncated_lipschitz(problem: SdeProblem, policy: TruncationPolicy, delta: float,
                              samples: int, rng_seed: int) -> tuple[MarginReport, MarginReport]:
    """Worst |F(x) - F(y)| / (4 L_{h} |x - y|) for F the truncated drift and diffusion."""
    h_delta = policy.h(delta)
    lip = problem.lipschitz(h_delta)
    rng = np.random.default_rng(rng_seed)
    x, y = _lemma_pairs(rng, samples, problem.d, h_delta)
    dist = batch_norm(x - y)
    out = []
    for name, fn, axes in (("drift", problem.drift, 1), ("diffusion", problem.diffusion, 2)):
        diff = truncate_modified(fn, h_delta, x) - truncate_modified(fn, h_delta, y)
        ratio = batch_norm(diff, axes) / (4 * lip * dist)
        i = int(np.argmax(ratio))
        out.append(MarginReport(f"truncated_lipschitz_{name}", float(ratio[i]),
                                (x[i], y[i]), samples, 4 * lip))
    return out[0], out[1]


def check_truncated_khasminskii(problem: SdeProblem, policy: TruncationPolicy, cond: ConditionSet,
                                delta: float, samples: int, rng_seed: int) -> MarginReport:
    """Worst [<x, f_D(x)> + (p-1)/2 |g_D(x)|^2] / (2K(1+|x|^2)) inside and outside the ball."""
    h_delta = policy.h(delta)
    rng = np.random.default_rng(rng_seed)
    half = samples // 2
    inner = sample_ball(rng, half, problem.d, h_delta)
    direction = sample_ball(rng, samples - half, problem.d, 1.0, 1.0)
    radii = h_delta * 10.0 ** rng.uniform(0, 3, size=samples - half)
    x = np.concatenate([inner, direction * radii[:, None]])
    f = truncate_modified(problem.drift, h_delta, x)
    g = truncate_modified(problem.diffusion, h_delta, x)
    sq = np.sum(x * x, axis=-1)
    value = np.sum(x * f, axis=-1) + 0.5 * (cond.p - 1) * batch_norm(g, 2) ** 2
    ratio = value / (2 * cond.K * (1 + sq))
    i = int(np.argmax(ratio))
    return MarginReport("truncated_khasminskii", float(ratio[i]), (x[i],), samples, 2 * cond.K)
