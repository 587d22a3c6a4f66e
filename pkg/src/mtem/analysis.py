"""Monte Carlo strong-error ladders, moment tables, condition margins and rate fits.

Every estimator works replicate-by-replicate on a shared dyadic ladder:
increments are generated once at the finest level, coarsened exactly for each
step size, and every error is a coupled pathwise difference. Replicates are
processed in fixed-size chunks (independent of the worker count) and
per-replicate values are concatenated in replicate order before reduction,
so results do not depend on ``jobs``.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .brownian import brownian_path, coarsen_increments, generate_increments
from .core import ConditionSet, MarginReport, SdeProblem, batch_norm, sample_ball
from .integrators import interpolate_on_fine_grid, run_batch
from .truncation import TruncationPolicy

MIN_REPLICATES = 100
CHUNK = 256
REGIME_VIOLATION_FRACTION = 0.01


class InsufficientSample(ValueError):
    pass


# ----------------------------------------------------------------------------
# parallel plumbing

_TASK: Optional[tuple] = None


def _call_task(i: int):
    fn, items = _TASK
    return fn(items[i])


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Ordered map; with jobs > 1 the work is forked and only indices cross the
    process boundary, so ``fn`` and ``items`` may hold closures."""
    global _TASK
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    _TASK = (fn, items)
    try:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(jobs, len(items))) as pool:
            return pool.map(_call_task, range(len(items)), chunksize=1)
    finally:
        _TASK = None


def _chunks(replicates: int, chunk: int = CHUNK):
    return [range(lo, min(lo + chunk, replicates)) for lo in range(0, replicates, chunk)]


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return float("nan"), float("nan")
    with np.errstate(over="ignore", invalid="ignore"):  # huge EM errors give an inf se
        mean = float(np.mean(values))
        se = (float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1
              else float("nan"))
    return mean, se


# ----------------------------------------------------------------------------
# references


@dataclass(frozen=True)
class Reference:
    """What the coarse solutions are compared against.

    ``kind`` is ``"closed-form"`` (``solution(times, B)`` maps finest-grid times
    of shape (K,) and Brownian values (n, K, m) to states (n, K, d)) or
    ``"fine-grid"`` (MTEM at ``level`` on the same ladder).
    """

    kind: str
    level: int
    solution: Optional[Callable] = field(default=None, compare=False)

    @classmethod
    def fine_grid(cls, level: int) -> "Reference":
        return cls("fine-grid", level)

    @classmethod
    def closed_form(cls, solution: Callable, level: int) -> "Reference":
        return cls("closed-form", level, solution)

    def label(self) -> str:
        return f"{self.kind}:{self.level}"


def _reference_states(problem, policy, reference: Reference, increments, t_end):
    level = reference.level
    n_fine = 2 ** level
    if reference.kind == "closed-form":
        times = np.linspace(0.0, t_end, n_fine + 1)
        states = reference.solution(times, brownian_path(increments))
        return np.asarray(states, dtype=np.float64), np.full(len(increments), -1)
    if reference.kind != "fine-grid":
        raise ValueError(f"unknown reference kind {reference.kind!r}")
    if policy is None:
        raise ValueError("a fine-grid reference needs a truncation policy")
    delta = t_end / n_fine
    return run_batch(problem, "MTEM", delta, policy.h(delta), increments)


# ----------------------------------------------------------------------------
# error ladders


@dataclass(frozen=True)
class LadderRow:
    delta: float
    level: int
    err_T_mean: float
    err_T_se: float
    err_sup_mean: float
    err_sup_se: float
    err_T_step_mean: float
    err_T_step_se: float
    err_sup_step_mean: float
    err_sup_step_se: float
    h_delta: float
    L_h_delta: float
    L4_delta: float
    replicates: int
    diverged: int

    @property
    def regime_violation(self) -> bool:
        total = self.replicates + self.diverged
        return total > 0 and self.diverged / total > REGIME_VIOLATION_FRACTION


@dataclass(frozen=True)
class ErrorLadder:
    problem: str
    scheme: str
    q: float
    t_end: float
    reference: str
    rows: tuple

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])

    @property
    def deltas(self) -> np.ndarray:
        return self.column("delta")


def _error_chunk(args):
    (problem, policy, scheme, levels, reference, seed, q, t_end, with_sup, reps) = args
    fine_level = reference.level
    increments = generate_increments(t_end, fine_level, problem.m, seed, reps)
    ref, ref_div = _reference_states(problem, policy, reference, increments, t_end)
    out = {}
    for level in levels:
        delta = t_end / 2 ** level
        h_delta = None if scheme == "EM" else policy.h(delta)
        coarse = coarsen_increments(increments, fine_level, level)
        states, div = run_batch(problem, scheme, delta, h_delta, coarse)
        valid = (div < 0) & (ref_div < 0)
        with np.errstate(all="ignore"):
            err_t = batch_norm(ref[:, -1] - states[:, -1]) ** q
            if with_sup:
                cont, step = interpolate_on_fine_grid(problem, scheme, h_delta, states,
                                                      increments, t_end / 2 ** fine_level)
                err_sup = np.max(batch_norm(ref - cont) ** q, axis=1)
                err_sup_step = np.max(batch_norm(ref - step) ** q, axis=1)
            else:
                err_sup = err_sup_step = np.full(len(reps), np.nan)
        out[level] = (valid, err_t, err_sup, err_sup_step)
    return out


def coupled_error_ladder(problem: SdeProblem, policy: Optional[TruncationPolicy], scheme: str,
                         levels: Sequence[int], replicates: int, reference: Reference,
                         seed: int, q: float, t_end: float = 1.0, with_sup: bool = True,
                         jobs: int = 1) -> ErrorLadder:
    """Coupled strong errors of ``scheme`` at each level against ``reference``.

    Replicates whose reference or coarse run diverged are excluded from that
    row and counted in ``diverged``.
    """
    levels = sorted(set(int(j) for j in levels))
    if levels[-1] > reference.level:
        raise ValueError("coarse levels must not exceed the reference level")
    tasks = [(problem, policy, scheme, levels, reference, seed, q, t_end, with_sup, reps)
             for reps in _chunks(replicates)]
    parts = parallel_map(_error_chunk, tasks, jobs)
    rows = []
    for level in levels:
        valid, err_t, err_sup, err_sup_step = (np.concatenate([p[level][i] for p in parts])
                                               for i in range(4))
        survivors = int(valid.sum())
        if survivors < MIN_REPLICATES:
            raise InsufficientSample(
                f"insufficient sample: {survivors} surviving replicates at level {level}")
        delta = t_end / 2 ** level
        if scheme == "EM" or policy is None:
            h_delta = lip = l4 = float("nan")
        else:
            h_delta = policy.h(delta)
            lip = problem.lipschitz(h_delta)
            l4 = lip ** 4 * delta
        t_mean, t_se = _mean_se(err_t[valid])
        s_mean, s_se = _mean_se(err_sup[valid])
        ss_mean, ss_se = _mean_se(err_sup_step[valid])
        rows.append(LadderRow(delta, level, t_mean, t_se, s_mean, s_se,
                              # the step process coincides with X_N at t = T
                              t_mean, t_se, ss_mean, ss_se,
                              h_delta, lip, l4, survivors, replicates - survivors))
    return ErrorLadder(problem.name, scheme, q, t_end, reference.label(), tuple(rows))


def strong_error_at_T(problem, policy, cond_or_q, levels, replicates, reference, seed,
                      scheme: str = "MTEM", t_end: float = 1.0, jobs: int = 1) -> ErrorLadder:
    """E|x(T) - x_D(T)|^q per level."""
    q = cond_or_q.q if isinstance(cond_or_q, ConditionSet) else float(cond_or_q)
    return coupled_error_ladder(problem, policy, scheme, levels, replicates, reference, seed,
                                q, t_end, with_sup=False, jobs=jobs)


def strong_error_sup(problem, policy, cond_or_q, levels, replicates, reference, seed,
                     scheme: str = "MTEM", t_end: float = 1.0, jobs: int = 1) -> ErrorLadder:
    """Adds E max_t |x(t) - x_D(t)|^q and the step-process variant, max over the finest grid."""
    q = cond_or_q.q if isinstance(cond_or_q, ConditionSet) else float(cond_or_q)
    return coupled_error_ladder(problem, policy, scheme, levels, replicates, reference, seed,
                                q, t_end, with_sup=True, jobs=jobs)


# ----------------------------------------------------------------------------
# rate fitting


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float
    rows_used: int
    q: float
    theoretical_slope: float = 0.5

    def as_dict(self) -> dict:
        return asdict(self)


def fit_power_law(deltas, estimates, q: float) -> RateFit:
    """Least-squares slope of log(estimate^(1/q)) against log(delta)."""
    deltas = np.asarray(deltas, dtype=np.float64)
    estimates = np.asarray(estimates, dtype=np.float64)
    if deltas.size < 3:
        raise ValueError("need at least 3 rows")
    if not np.all(np.isfinite(estimates)) or np.any(estimates <= 0):
        raise ValueError("degenerate ladder")
    x = np.log(deltas)
    y = np.log(estimates) / q
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return RateFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid ** 2))),
                   int(deltas.size), float(q))


def fit_rate(ladder: ErrorLadder, column: str = "err_T_mean") -> RateFit:
    return fit_power_law(ladder.deltas, ladder.column(column), ladder.q)


# ----------------------------------------------------------------------------
# interpolant gap


@dataclass(frozen=True)
class GapRow:
    delta: float
    level: int
    fixed_time_mean: float
    fixed_time_se: float
    sup_mean: float
    sup_se: float
    replicates: int
    diverged: int


def _gap_chunk(args):
    problem, policy, scheme, levels, fine_level, p, seed, t_end, reps = args
    increments = generate_increments(t_end, fine_level, problem.m, seed, reps)
    out = {}
    for level in levels:
        delta = t_end / 2 ** level
        h_delta = None if scheme == "EM" else policy.h(delta)
        coarse = coarsen_increments(increments, fine_level, level)
        states, div = run_batch(problem, scheme, delta, h_delta, coarse)
        valid = div < 0
        with np.errstate(all="ignore"):
            cont, step = interpolate_on_fine_grid(problem, scheme, h_delta, states, increments,
                                                  t_end / 2 ** fine_level)
            gap = batch_norm(cont - step)[valid] ** p
        out[level] = (valid, gap.sum(axis=0), (gap ** 2).sum(axis=0), gap.max(axis=1))
    return out


def interpolant_gap(problem: SdeProblem, policy: Optional[TruncationPolicy], levels: Sequence[int],
                    p: float, replicates: int, seed: int, fine_level: Optional[int] = None,
                    scheme: str = "MTEM", t_end: float = 1.0, jobs: int = 1) -> tuple:
    """Distance between the continuous interpolant and the step process.

    Per level: ``fixed_time`` is max over finest-grid times of E|x_D(t) - xbar_D(t)|^p,
    ``sup`` is E max over finest-grid times of the same quantity.
    """
    levels = sorted(set(int(j) for j in levels))
    fine_level = levels[-1] + 4 if fine_level is None else fine_level
    if fine_level <= levels[-1]:
        raise ValueError("fine_level must exceed every coarse level")
    tasks = [(problem, policy, scheme, levels, fine_level, p, seed, t_end, reps)
             for reps in _chunks(replicates)]
    parts = parallel_map(_gap_chunk, tasks, jobs)
    rows = []
    for level in levels:
        valid = np.concatenate([part[level][0] for part in parts])
        n = int(valid.sum())
        if n < MIN_REPLICATES:
            raise InsufficientSample(f"insufficient sample: {n} surviving replicates at level {level}")
        total = sum(part[level][1] for part in parts)
        total_sq = sum(part[level][2] for part in parts)
        sup = np.concatenate([part[level][3] for part in parts])
        mean_t = total / n
        var_t = np.maximum(total_sq / n - mean_t ** 2, 0.0) * n / (n - 1)
        i = int(np.argmax(mean_t))
        sup_mean, sup_se = _mean_se(sup)
        rows.append(GapRow(t_end / 2 ** level, level, float(mean_t[i]),
                           float(np.sqrt(var_t[i] / n)), sup_mean, sup_se, n, replicates - n))
    return tuple(rows)


# ----------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class MomentRow:
    delta: float
    level: int
    max_mean_moment: float
    mean_max_moment: float
    p: float
    p_bar: float
    replicates: int
    diverged: int


def _moment_chunk(args):
    problem, policy, scheme, levels, p, p_bar, seed, t_end, reps = args
    fine_level = levels[-1]
    increments = generate_increments(t_end, fine_level, problem.m, seed, reps)
    out = {}
    for level in levels:
        delta = t_end / 2 ** level
        h_delta = None if scheme == "EM" else policy.h(delta)
        coarse = coarsen_increments(increments, fine_level, level)
        states, div = run_batch(problem, scheme, delta, h_delta, coarse)
        valid = div < 0
        nrm = batch_norm(states[valid])
        out[level] = (valid, (nrm ** p).sum(axis=0), (nrm ** p_bar).max(axis=1))
    return out


def empirical_moment_sup(problem: SdeProblem, policy: Optional[TruncationPolicy], scheme: str,
                         cond_or_p, levels: Sequence[int], replicates: int, seed: int,
                         t_end: float = 1.0, jobs: int = 1) -> tuple:
    """Per level: max_k E|X_k|^p and E max_k |X_k|^p_bar over non-diverged replicates."""
    if isinstance(cond_or_p, ConditionSet):
        p, p_bar = cond_or_p.p, cond_or_p.p_bar
    else:
        p = p_bar = float(cond_or_p)
    levels = sorted(set(int(j) for j in levels))
    tasks = [(problem, policy, scheme, levels, p, p_bar, seed, t_end, reps)
             for reps in _chunks(replicates)]
    parts = parallel_map(_moment_chunk, tasks, jobs)
    rows = []
    for level in levels:
        valid = np.concatenate([part[level][0] for part in parts])
        n = int(valid.sum())
        if n:
            max_mean = float(np.max(sum(part[level][1] for part in parts) / n))
            mean_max = float(np.mean(np.concatenate([part[level][2] for part in parts])))
        else:
            max_mean = mean_max = float("nan")
        rows.append(MomentRow(t_end / 2 ** level, level, max_mean, mean_max, p, p_bar,
                              n, replicates - n))
    return tuple(rows)


def moment_ratio(rows, column: str = "max_mean_moment") -> float:
    """Largest over smallest value across the ladder (Delta-uniformity diagnostic)."""
    values = np.array([getattr(row, column) for row in rows])
    return float(np.max(values) / np.min(values))


# ----------------------------------------------------------------------------
# structural conditions on the raw coefficients


def _pairs(rng, n, d, radius):
    """Far pairs anywhere in the ball plus near pairs to capture local slopes."""
    x = sample_ball(rng, n, d, radius)
    y = sample_ball(rng, n, d, radius)
    half = n // 2
    sep = radius * 10.0 ** rng.uniform(-7, -1, size=half)
    y[:half] = x[:half] + sample_ball(rng, half, d, 1.0, 1.0) * sep[:, None]
    while True:
        bad = batch_norm(x - y) < 1e-12 * np.maximum(1.0, batch_norm(x))
        if not bad.any():
            return x, y
        y[bad] = sample_ball(rng, int(bad.sum()), d, radius)


def _points(rng, n, d, radius):
    """Uniform-in-ball points mixed with log-uniform radii so that small |x| is covered too."""
    half = n // 2
    x = sample_ball(rng, n, d, radius)
    radii = radius * 10.0 ** rng.uniform(-6, 0, size=half)
    x[:half] = sample_ball(rng, half, d, 1.0, 1.0) * radii[:, None]
    return x


def check_monotonicity_condition(problem: SdeProblem, cond: ConditionSet, samples: int,
                                 radius: float, seed: int) -> MarginReport:
    """Worst [<x-y, f(x)-f(y)> + (q-1)/2 |g(x)-g(y)|^2] / (H |x-y|^2) over sampled pairs."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    x, y = _pairs(rng, samples, problem.d, radius)
    dx = x - y
    with np.errstate(all="ignore"):
        value = (np.sum(dx * (problem.drift(x) - problem.drift(y)), axis=-1)
                 + 0.5 * (cond.q - 1) * batch_norm(problem.diffusion(x) - problem.diffusion(y), 2) ** 2)
        ratio = value / (cond.H * np.sum(dx * dx, axis=-1))
    i = int(np.nanargmax(ratio))
    return MarginReport("monotonicity", float(ratio[i]), (x[i], y[i]), samples, cond.H)


def check_khasminskii(problem: SdeProblem, cond: ConditionSet, samples: int, radius: float,
                      seed: int) -> MarginReport:
    """Worst [<x, f(x)> + (p-1)/2 |g(x)|^2] / (K (1 + |x|^2)) over sampled points."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    x = _points(rng, samples, problem.d, radius)
    with np.errstate(all="ignore"):
        value = (np.sum(x * problem.drift(x), axis=-1)
                 + 0.5 * (cond.p - 1) * batch_norm(problem.diffusion(x), 2) ** 2)
        ratio = value / (cond.K * (1 + np.sum(x * x, axis=-1)))
    i = int(np.nanargmax(ratio))
    return MarginReport("khasminskii", float(ratio[i]), (x[i],), samples, cond.K)


def check_diffusion_growth(problem: SdeProblem, cond: ConditionSet, samples: int, radius: float,
                           seed: int) -> MarginReport:
    """Worst |g(x)|^2 / (Kbar (1 + |x|^r)) over sampled points."""
    if cond.r is None:
        raise ValueError("condition set has no diffusion-growth exponent r")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    x = _points(rng, samples, problem.d, radius)
    with np.errstate(all="ignore"):
        ratio = (batch_norm(problem.diffusion(x), 2) ** 2
                 / (cond.Kbar * (1 + batch_norm(x) ** cond.r)))
    i = int(np.nanargmax(ratio))
    return MarginReport("diffusion_growth", float(ratio[i]), (x[i],), samples, cond.Kbar)
