"""Built-in test equations and the grid searches that seed their constants.

``example1``: dx = (a x - e^{3x}) dt + e^x dB, L_R = 3 e^{3R}.
``example2``: dx = (x - x^3) dt + |x|^{3/2} dB, L_R = 3R^2 + 1.
``linear``:   dx = a x dt + b x dB with the geometric-Brownian closed form.

Constants that need a maximisation (C, R0 and K) come from
``derive_constants`` and carry their provenance with them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .core import ConditionSet, SdeProblem
from .truncation import TruncationPolicy, build_h_from_profile, constant_policy


@dataclass(frozen=True)
class Builtin:
    problem: SdeProblem
    policy: Optional[TruncationPolicy]
    cond: ConditionSet
    closed_form: Optional[Callable] = None
    provenance: dict = field(default_factory=dict)


def grid_maximize(fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                  points: int = 10 ** 6) -> tuple[float, float]:
    """Dense-grid maximum of a scalar function, polished by bounded Brent search."""
    grid = np.linspace(lo, hi, points)
    with np.errstate(all="ignore"):
        values = fn(grid)
    i = int(np.nanargmax(values))
    step = (hi - lo) / (points - 1)
    a, b = max(lo, grid[i] - 2 * step), min(hi, grid[i] + 2 * step)
    res = minimize_scalar(lambda t: -float(fn(np.array([t]))[0]), bounds=(a, b),
                          method="bounded", options={"xatol": 1e-13})
    if -res.fun > values[i]:
        return float(res.x), float(-res.fun)
    return float(grid[i]), float(values[i])


# ----------------------------------------------------------------------------
# example 1


def example1_C() -> dict:
    """max over x > 0 of -x e^{3x} + e^{2x}."""
    x, value = grid_maximize(lambda x: -x * np.exp(3 * x) + np.exp(2 * x), 1e-9, 10.0)
    return {"C": value, "argmax": x, "method": "grid of 1e6 points on (0, 10], Brent polish"}


def example1_case2(s: np.ndarray) -> np.ndarray:
    """-(s) e^{3s} + s + 3/2 (e^{2s} - 2 e^s + 1), the far-pair term whose sign fixes R0."""
    return -s * np.exp(3 * s) + s + 1.5 * (np.exp(2 * s) - 2 * np.exp(s) + 1)


def example1_R0(step: float = 1e-3, s_max: float = 20.0) -> dict:
    """R0 = 2 s*, s* the first grid point beyond which the case-2 term stays negative."""
    s = np.arange(1, int(round(s_max / step)) + 1) * step
    negative = example1_case2(s) < 0
    nonneg = np.flatnonzero(~negative)
    first = 0 if nonneg.size == 0 else nonneg[-1] + 1
    if first >= s.size:
        raise ValueError("case-2 term never turns negative on the search grid")
    return {"R0": 2 * float(s[first]), "s_star": float(s[first]),
            "negative_on_whole_grid": bool(nonneg.size == 0),
            "method": f"sign scan of the case-2 term on ({step:g}, {s_max:g}] step {step:g}"}


def example1_constants(a: float = 1.0) -> dict:
    c = example1_C()
    r0 = example1_R0()
    return {
        "problem": "example1", "a": a,
        "C": c, "R0": r0,
        "K": a + c["C"] + 4, "K_recipe": "a + C + 4",
        "H": a + 1.5 * math.exp(4 * r0["R0"]), "H_recipe": "a + 3/2 exp(4 R0)",
    }


def example1_profile(radius: float) -> float:
    return 3.0 * math.exp(3.0 * radius)


def builtin_example1(a: float = 1.0, epsilon: float = 0.5, x0: float = 2.0,
                     constants: Optional[dict] = None) -> Builtin:
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if a <= 0:
        raise ValueError("a must be positive")
    constants = constants or example1_constants(a)
    problem = SdeProblem(
        d=1, m=1,
        drift=lambda x: a * x - np.exp(3 * x),
        diffusion=lambda x: np.exp(x)[..., None],
        x0=[x0], lipschitz_profile=example1_profile, name="example1",
    )
    policy = build_h_from_profile(
        example1_profile, 1.0, exponent=1 - epsilon,
        description=f"inverse of l(R)=1/(3^4 R^(1-{epsilon:g}) e^(12R))")
    cond = ConditionSet(p=6, q=4, K=constants["K"], H=constants["H"])
    return Builtin(problem, policy, cond, provenance=constants)


# ----------------------------------------------------------------------------
# example 2

EXAMPLE2_H = 13 / 4 + 81 / 64


def example2_K(p: float = 6.0) -> dict:
    """max over |x| <= 1e3 of (x f(x) + (p-1)/2 |x|^3) / (1 + x^2)."""
    def ratio(x):
        return (x * x - x ** 4 + 0.5 * (p - 1) * np.abs(x) ** 3) / (1 + x * x)
    x, value = grid_maximize(ratio, -1e3, 1e3, 10 ** 6 + 1)
    return {"K": value, "argmax": x, "p": p,
            "method": "grid of 1e6+1 points on [-1e3, 1e3], Brent polish"}


def example2_constants(p: float = 6.0) -> dict:
    return {"problem": "example2", "K": example2_K(p), "H": EXAMPLE2_H, "H_recipe": "13/4 + 81/64",
            "r": 3.0, "Kbar": 2.0}


def example2_profile(radius: float) -> float:
    return 3.0 * radius * radius + 1.0


def example2_sqrt_h(epsilon: float) -> TruncationPolicy:
    """Closed-form radius sqrt((delta^-eps - 1)/3); the one the rate experiment uses."""
    return TruncationPolicy(lambda delta: math.sqrt((delta ** -epsilon - 1) / 3), 0.5,
                            f"closed form sqrt((delta^-{epsilon:g} - 1)/3)")


def builtin_example2(epsilon: float = 0.9, x0: float = 1.0, h_construction: str = "inverse-profile",
                     constants: Optional[dict] = None) -> Builtin:
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    constants = constants or example2_constants()
    problem = SdeProblem(
        d=1, m=1,
        drift=lambda x: x - x ** 3,
        diffusion=lambda x: (np.abs(x) ** 1.5)[..., None],
        x0=[x0], lipschitz_profile=example2_profile, name="example2",
    )
    if h_construction == "inverse-profile":
        policy = build_h_from_profile(example2_profile, 1.0)
    elif h_construction == "sqrt-closed-form":
        policy = example2_sqrt_h(epsilon)
    else:
        raise ValueError(f"unknown h construction {h_construction!r}")
    k = constants["K"]["K"] if isinstance(constants["K"], dict) else constants["K"]
    cond = ConditionSet(p=6, q=4, K=k, H=constants["H"], r=3.0, Kbar=2.0)
    return Builtin(problem, policy, cond, provenance=constants)


# ----------------------------------------------------------------------------
# linear test equation


def builtin_linear(a: float = 0.5, b: float = 0.3, x0: float = 1.0,
                   h_radius: float = 1e6) -> Builtin:
    """Scalar geometric Brownian motion with its exact solution as a reference."""
    lip = max(abs(a), abs(b), 1e-12)
    problem = SdeProblem(
        d=1, m=1,
        drift=lambda x: a * x,
        diffusion=lambda x: (b * x)[..., None],
        x0=[x0], lipschitz_profile=lambda _: lip, name="linear",
    )

    def solution(times, bm):
        times = np.asarray(times)[..., :, None]
        return x0 * np.exp((a - 0.5 * b * b) * times + b * np.asarray(bm))

    p, q = 6.0, 4.0
    cond = ConditionSet(p=p, q=q, K=max(a + 0.5 * (p - 1) * b * b, 1e-12),
                        H=max(a + 0.5 * (q - 1) * b * b, 1e-12))
    return Builtin(problem, constant_policy(h_radius), cond, closed_form=solution,
                   provenance={"problem": "linear", "a": a, "b": b})


def derive_constants(name: str, **params) -> dict:
    if name == "example1":
        return example1_constants(params.get("a", 1.0))
    if name == "example2":
        return example2_constants(params.get("p", 6.0))
    if name == "linear":
        return {"problem": "linear", "note": "constants are closed form"}
    raise ValueError(f"unknown problem {name!r}")


BUILTINS = {
    "example1": builtin_example1,
    "example2": builtin_example2,
    "linear": builtin_linear,
}
