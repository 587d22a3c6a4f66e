"""Strong-rate experiment on dx = (x - x^3) dt + |x|^{3/2} dB.

Runs the bundled ``example2-rate.cfg`` (closed-form radius) and, with
``--compare``, the same ladder under the inverse-profile radius so the two
slopes can be read side by side.
"""

import argparse
import dataclasses
import logging
from pathlib import Path

from mtem.config import load_config
from mtem.experiments import run_experiment


def summarize(label, result):
    fit = result["fits"]["MTEM"]
    print(f"{label}: slope T {fit['slope']:.3f}, sup {fit['variants']['sup']['slope']:.3f}, "
          f"step sup {fit['variants']['sup_step']['slope']:.3f}")
    for row in result["ladders"][0].rows:
        print(f"  dt=2^-{row.level:<2d} h={row.h_delta:8.3f} L4dt={row.L4_delta:10.3g} "
              f"E|e_T|^4={row.err_T_mean:.3e} +- {row.err_T_se:.1e}  diverged={row.diverged}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, default=Path("out/example2-rate"))
    parser.add_argument("--replicates", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--compare", action="store_true",
                        help="also run the inverse-profile radius")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO)

    cfg = load_config("example2-rate.cfg")
    if args.replicates:
        cfg = dataclasses.replace(cfg, replicates=args.replicates)
    summarize("closed-form h", run_experiment(cfg, args.out_dir, jobs=args.jobs))
    if args.compare:
        alt = dataclasses.replace(cfg, h="inverse-profile")
        summarize("inverse-profile h", run_experiment(alt, args.out_dir / "inverse-profile", jobs=args.jobs))


if __name__ == "__main__":
    main()
