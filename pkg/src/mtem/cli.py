"""Command line entry point ``mtem``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .analysis import InsufficientSample
from .config import ConfigError, load_config
from .experiments import SCHEMA_VERSION, _clean, condition_report, run_experiment
from .problems import BUILTINS, derive_constants

EXIT_OK, EXIT_CONFIG, EXIT_SAMPLE = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtem",
        description="Modified truncated Euler-Maruyama experiments.",
        epilog=config_mod.__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="error ladders, rate fits, condition margins",
                         epilog=config_mod.__doc__,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("config", help="config file, or the name of a bundled config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    run.add_argument("--out-dir", type=Path, default=Path("mtem-out"))

    derive = sub.add_parser("derive-constants", help="grid searches for problem constants")
    derive.add_argument("problem", choices=sorted(BUILTINS))
    derive.add_argument("--a", type=float, default=1.0, help="example1 drift parameter")
    derive.add_argument("--p", type=float, default=6.0, help="example2 moment exponent")
    derive.add_argument("--out-dir", type=Path, default=None,
                        help="write <problem>-constants.json here instead of stdout")

    check = sub.add_parser("check-conditions", help="condition margins for a config")
    check.add_argument("config")
    check.add_argument("--seed", type=int, default=None)
    check.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; unused")
    check.add_argument("--out-dir", type=Path, default=None)
    return parser


def _emit(payload: dict, out_dir: Path | None, filename: str):
    text = json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n"
    if out_dir is None:
        sys.stdout.write(text)
    else:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / filename).write_text(text)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "derive-constants":
            params = {"a": args.a} if args.problem == "example1" else {"p": args.p}
            payload = {"schema_version": SCHEMA_VERSION, **derive_constants(args.problem, **params)}
            _emit(payload, args.out_dir, f"{args.problem}-constants.json")
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "check-conditions":
            seed = cfg.seed if args.seed is None else args.seed
            _emit(condition_report(cfg, cfg.build(), seed), args.out_dir, "conditions.json")
            return EXIT_OK
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        result = run_experiment(cfg, args.out_dir, seed=args.seed, jobs=args.jobs)
        for scheme, fit in result["fits"].items():
            print(f"{scheme}: slope {fit['slope']} over {fit['rows_used']} levels -> {args.out_dir}")
        return EXIT_OK
    except InsufficientSample as exc:
        print(f"mtem: {exc}", file=sys.stderr)
        return EXIT_SAMPLE
    except (ConfigError, ValueError) as exc:
        print(f"mtem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
