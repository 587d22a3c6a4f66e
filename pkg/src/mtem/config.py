"""Experiment configuration: INI-style ``key = value`` files with bracketed sections.

Recognised keys (defaults in brackets)::

    [problem]
    name         example1 | example2 | linear
    x0           initial state                     [problem default]
    a, b         drift / diffusion parameters      [example1: a=1; linear: a=0.5, b=0.3]
    epsilon      h-construction exponent           [example1: 0.5; example2: 0.9]
    h            inverse-profile | sqrt-closed-form | constant:<radius>
                                                   [inverse-profile; constant:1e6 for linear]
    constants    provenance JSON from `mtem derive-constants`   [derived on the fly]

    [run]
    schemes      comma list of MTEM, EM, TEM       [MTEM]
    t_end        horizon T                         [1.0]
    levels       j_min..j_max                      [required]
    reference    closed-form | fine-grid:<level>   [fine-grid:<j_min + 6>]
    q, p, r      error / moment / growth exponents [problem defaults]
                 (q <= 2 is allowed for the error ladder only)
    replicates   >= 100                            [required]
    seed         integer                           [0]
    sup          also estimate sup-over-grid errors [true]

    [checks]
    samples      sample count for condition margins [100000]
    radius       sampling radius                    [50]
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .analysis import MIN_REPLICATES, InsufficientSample, Reference
from .brownian import MAX_LEVEL
from .integrators import SCHEMES
from .problems import BUILTINS, Builtin, builtin_example1, builtin_example2, builtin_linear
from .truncation import constant_policy


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    levels: tuple
    replicates: int
    schemes: tuple = ("MTEM",)
    t_end: float = 1.0
    reference: str = ""
    q: Optional[float] = None
    p: Optional[float] = None
    r: Optional[float] = None
    seed: int = 0
    sup: bool = True
    x0: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    epsilon: Optional[float] = None
    h: str = ""
    constants: Optional[str] = None
    check_samples: int = 100_000
    check_radius: float = 50.0
    source: str = field(default="<inline>", compare=False)

    def __post_init__(self):
        if self.problem not in BUILTINS:
            raise ConfigError(f"unknown problem {self.problem!r}; built-ins: {sorted(BUILTINS)}")
        lo, hi = self.levels
        if not (0 <= lo < hi <= MAX_LEVEL):
            raise ConfigError(f"levels must satisfy 0 <= j_min < j_max <= {MAX_LEVEL}")
        if hi - lo < 2:
            raise ConfigError("need at least 3 levels for a rate fit")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ConfigError(f"unknown scheme(s) {bad}; expected {SCHEMES}")
        if self.t_end <= 0:
            raise ConfigError("t_end must be positive")
        if self.check_samples < 1 or self.check_radius <= 0:
            raise ConfigError("checks need samples >= 1 and radius > 0")
        if self.replicates < MIN_REPLICATES:
            raise InsufficientSample(
                f"insufficient sample: replicates={self.replicates} < {MIN_REPLICATES}")
        ref = self.reference_spec_level()
        if ref is not None and not (hi <= ref <= MAX_LEVEL):
            raise ConfigError(f"reference level must lie in [{hi}, {MAX_LEVEL}]")

    # -- derived pieces -----------------------------------------------------

    @property
    def level_range(self) -> range:
        return range(self.levels[0], self.levels[1] + 1)

    def reference_spec_level(self) -> Optional[int]:
        spec = self.reference or f"fine-grid:{self.levels[0] + 6}"
        if spec == "closed-form":
            return None
        kind, _, level = spec.partition(":")
        if kind != "fine-grid" or not level.strip().lstrip("-").isdigit():
            raise ConfigError(f"bad reference {spec!r}; use closed-form or fine-grid:<level>")
        return int(level)

    def load_constants(self) -> Optional[dict]:
        if not self.constants:
            return None
        path = Path(self.constants)
        if not path.is_absolute() and self.source != "<inline>":
            path = Path(self.source).parent / path
        try:
            return json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read constants file {path}: {exc}") from exc

    def build(self) -> Builtin:
        constants = self.load_constants()
        h = self.h_label()
        if not (h in ("inverse-profile", "sqrt-closed-form") or h.startswith("constant:")):
            raise ConfigError(f"unknown h construction {h!r}")
        if h == "sqrt-closed-form" and self.problem != "example2":
            raise ConfigError("sqrt-closed-form h exists only for example2")
        if h == "inverse-profile" and self.problem == "linear":
            raise ConfigError("the linear problem uses a constant radius")
        kw = {} if self.x0 is None else {"x0": self.x0}
        if self.problem == "example1":
            built = builtin_example1(a=1.0 if self.a is None else self.a,
                                     epsilon=0.5 if self.epsilon is None else self.epsilon,
                                     constants=constants, **kw)
        elif self.problem == "example2":
            built = builtin_example2(epsilon=0.9 if self.epsilon is None else self.epsilon,
                                     h_construction="sqrt-closed-form"
                                     if h == "sqrt-closed-form" else "inverse-profile",
                                     constants=constants, **kw)
        else:
            built = builtin_linear(a=0.5 if self.a is None else self.a,
                                   b=0.3 if self.b is None else self.b, **kw)
        if h.startswith("constant:"):
            try:
                radius = float(h.partition(":")[2])
            except ValueError as exc:
                raise ConfigError(f"bad constant radius in {h!r}") from exc
            built = dataclasses.replace(built, policy=constant_policy(radius))
        cond = built.cond
        updates = {"p": self.p} if self.p is not None else {}
        if self.q is not None and 2 < self.q < (self.p or cond.p):
            updates["q"] = self.q
        if self.r is not None:
            updates["r"] = self.r
            if cond.Kbar is None:
                raise ConfigError("r given but the problem declares no diffusion-growth constant")
        if updates:
            try:
                cond = dataclasses.replace(cond, **updates)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return dataclasses.replace(built, cond=cond)

    def reference_for(self, built: Builtin) -> Reference:
        level = self.reference_spec_level()
        if level is None:
            if built.closed_form is None:
                raise ConfigError(f"problem {self.problem} has no closed-form solution")
            return Reference.closed_form(built.closed_form, self.levels[1])
        return Reference.fine_grid(level)

    def error_q(self, built: Builtin) -> float:
        """Exponent of the strong error; may sit outside the theorem regime (e.g. q = 2)."""
        return built.cond.q if self.q is None else self.q

    def h_label(self) -> str:
        if self.h:
            return self.h
        return "constant:1e6" if self.problem == "linear" else "inverse-profile"


def _levels(text: str) -> tuple:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise ConfigError(f"levels must look like j_min..j_max, got {text!r}")
    try:
        return int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError(f"bad levels {text!r}") from exc


def _float(section, key) -> Optional[float]:
    if key not in section:
        return None
    try:
        value = float(section[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number") from exc
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite")
    return value


_KNOWN = {
    "problem": {"name", "x0", "a", "b", "epsilon", "h", "constants"},
    "run": {"schemes", "t_end", "levels", "reference", "q", "p", "r", "replicates", "seed", "sup"},
    "checks": {"samples", "radius"},
}


def parse_config(text: str, source: str = "<inline>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for name in parser.sections():
        if name not in _KNOWN:
            raise ConfigError(f"unknown section [{name}]")
        extra = set(parser[name]) - _KNOWN[name]
        if extra:
            raise ConfigError(f"unknown key(s) in [{name}]: {sorted(extra)}")
    if "problem" not in parser or "run" not in parser:
        raise ConfigError("config needs [problem] and [run] sections")
    prob, run = parser["problem"], parser["run"]
    checks = parser["checks"] if "checks" in parser else {}
    if "levels" not in run or "replicates" not in run or "name" not in prob:
        raise ConfigError("config needs problem.name, run.levels and run.replicates")
    try:
        replicates = int(run["replicates"])
        seed = int(run.get("seed", "0"))
        samples = int(checks.get("samples", "100000"))
        sup = parser.getboolean("run", "sup", fallback=True)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    schemes = tuple(s.strip().upper() for s in run.get("schemes", "MTEM").split(",") if s.strip())
    return ExperimentConfig(
        problem=prob["name"].strip(), levels=_levels(run["levels"]), replicates=replicates,
        schemes=schemes, t_end=_float(run, "t_end") or 1.0,
        reference=run.get("reference", "").strip(), q=_float(run, "q"), p=_float(run, "p"),
        r=_float(run, "r"), seed=seed, sup=sup, x0=_float(prob, "x0"), a=_float(prob, "a"),
        b=_float(prob, "b"), epsilon=_float(prob, "epsilon"), h=prob.get("h", "").strip(),
        constants=prob.get("constants", "").strip() or None, check_samples=samples,
        check_radius=_float(checks, "radius") or 50.0, source=source,
    )


def bundled_configs() -> list[str]:
    root = resources.files("mtem") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(path: str) -> ExperimentConfig:
    """Read a config file; bare names of bundled configs are resolved too."""
    candidate = Path(path)
    if candidate.exists():
        return parse_config(candidate.read_text(), str(candidate))
    bundled = resources.files("mtem") / "configs" / path
    if bundled.is_file():
        return parse_config(bundled.read_text(), str(bundled))
    raise ConfigError(f"config {path!r} not found (bundled: {', '.join(bundled_configs())})")
