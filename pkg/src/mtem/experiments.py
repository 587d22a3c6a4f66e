"""Run a configured experiment and write its CSV/JSON artefacts.

Everything written here is a direct library result for the configured seed;
files contain no timestamps or host data so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

from . import analysis
from .analysis import ErrorLadder, fit_rate
from .config import ExperimentConfig
from .core import check_local_lipschitz
from .problems import Builtin
from .truncation import (check_step_admissible, check_truncated_khasminskii,
                         check_truncated_lipschitz)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LADDER_COLUMNS = ["scheme", "delta", "level", "q", "err_T_mean", "err_T_se", "err_sup_mean",
                  "err_sup_se", "err_T_step_mean", "err_T_step_se", "L_h_delta", "L4_delta",
                  "replicates", "diverged"]
STEP_SUP_COLUMNS = ["scheme", "delta", "level", "q", "err_sup_step_mean", "err_sup_step_se"]
DIVERGENCE_COLUMNS = ["scheme", "delta", "level", "replicates", "diverged", "diverged_fraction",
                      "regime_violation"]
LIPSCHITZ_RADII = (0.5, 1.0, 2.0, 5.0)


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _dump_json(path: Path, payload: dict):
    path.write_text(json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, columns, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def condition_report(cfg: ExperimentConfig, built: Builtin, seed: int) -> dict:
    """Margins of every structural condition plus per-level admissibility."""
    problem, policy, cond = built.problem, built.policy, built.cond
    n, radius = cfg.check_samples, cfg.check_radius
    margins = []
    for i, R in enumerate(LIPSCHITZ_RADII):
        for rep in check_local_lipschitz(problem, R, min(n, 10_000), seed + i):
            d = rep.as_dict()
            d["radius"] = R
            margins.append(d)
    margins.append(analysis.check_monotonicity_condition(problem, cond, n, radius, seed).as_dict())
    margins.append(analysis.check_khasminskii(problem, cond, n, radius, seed).as_dict())
    if cond.r is not None:
        margins.append(analysis.check_diffusion_growth(problem, cond, n, radius, seed).as_dict())
    levels = []
    if policy is not None:
        for level in cfg.level_range:
            delta = cfg.t_end / 2 ** level
            adm = check_step_admissible(problem, policy, cond, delta)
            entry = {"level": level, **adm.as_dict()}
            lip_f, lip_g = check_truncated_lipschitz(problem, policy, delta, n, seed + level)
            entry["truncated_lipschitz"] = [lip_f.as_dict(), lip_g.as_dict()]
            entry["truncated_khasminskii"] = check_truncated_khasminskii(
                problem, policy, cond, delta, n, seed + level).as_dict()
            levels.append(entry)
    return {
        "schema_version": SCHEMA_VERSION,
        "problem": problem.name,
        "h_construction": cfg.h_label(),
        "policy": None if policy is None else policy.description,
        "conditions": {"p": cond.p, "q": cond.q, "r": cond.r, "K": cond.K, "H": cond.H,
                       "Kbar": cond.Kbar},
        "constants": built.provenance,
        "margins": margins,
        "levels": levels,
    }


def _ladder_rows(ladder: ErrorLadder):
    for row in ladder.rows:
        yield {
            "scheme": ladder.scheme, "delta": row.delta, "level": row.level, "q": ladder.q,
            "err_T_mean": row.err_T_mean, "err_T_se": row.err_T_se,
            "err_sup_mean": row.err_sup_mean, "err_sup_se": row.err_sup_se,
            "err_T_step_mean": row.err_T_step_mean, "err_T_step_se": row.err_T_step_se,
            "err_sup_step_mean": row.err_sup_step_mean, "err_sup_step_se": row.err_sup_step_se,
            "L_h_delta": row.L_h_delta, "L4_delta": row.L4_delta,
            "replicates": row.replicates, "diverged": row.diverged,
            "diverged_fraction": row.diverged / (row.replicates + row.diverged),
            "regime_violation": row.regime_violation,
        }


def _fit_entry(ladder: ErrorLadder, column: str) -> dict:
    try:
        fit = fit_rate(ladder, column)
    except ValueError as exc:
        return {"slope": None, "intercept": None, "residual": None,
                "rows_used": len(ladder.rows), "fit_error": str(exc)}
    return {"slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual,
            "rows_used": fit.rows_used}


def rate_fit_payload(ladder: ErrorLadder, cfg: ExperimentConfig, with_sup: bool,
                     cond_p: float) -> dict:
    payload = {"schema_version": SCHEMA_VERSION, "problem": ladder.problem,
               "scheme": ladder.scheme, "q": ladder.q, **_fit_entry(ladder, "err_T_mean")}
    payload["reference"] = ladder.reference
    payload["h_construction"] = cfg.h_label()
    payload["regime_violation"] = any(row.regime_violation for row in ladder.rows)
    payload["q_in_theorem_regime"] = bool(2 < ladder.q < cond_p)
    if with_sup:
        payload["variants"] = {"sup": _fit_entry(ladder, "err_sup_mean"),
                               "sup_step": _fit_entry(ladder, "err_sup_step_mean")}
    return payload


def run_experiment(cfg: ExperimentConfig, out_dir: Path, seed: int | None = None,
                   jobs: int = 1) -> dict:
    """Compute every artefact for ``cfg`` and write it under ``out_dir``."""
    seed = cfg.seed if seed is None else seed
    built = cfg.build()
    reference = cfg.reference_for(built)
    out_dir.mkdir(parents=True, exist_ok=True)
    ladders = []
    for scheme in cfg.schemes:
        log.info("ladder %s levels %s..%s, %d replicates", scheme, *cfg.levels, cfg.replicates)
        ladders.append(analysis.coupled_error_ladder(
            built.problem, built.policy, scheme, cfg.level_range, cfg.replicates, reference,
            seed, cfg.error_q(built), cfg.t_end, with_sup=cfg.sup, jobs=jobs))
    rows = [row for ladder in ladders for row in _ladder_rows(ladder)]
    _write_csv(out_dir / "error_ladder.csv", LADDER_COLUMNS, rows)
    if cfg.sup:
        _write_csv(out_dir / "error_ladder_step_sup.csv", STEP_SUP_COLUMNS, rows)
    _write_csv(out_dir / "divergence.csv", DIVERGENCE_COLUMNS, rows)
    fits = {}
    for ladder in ladders:
        payload = rate_fit_payload(ladder, cfg, cfg.sup, built.cond.p)
        _dump_json(out_dir / f"rate_fit_{ladder.scheme}.json", payload)
        fits[ladder.scheme] = payload
    conditions = condition_report(cfg, built, seed)
    _dump_json(out_dir / "conditions.json", conditions)
    return {"ladders": ladders, "fits": fits, "conditions": conditions}
