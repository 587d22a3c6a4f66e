"""EM against MTEM on dx = (x - e^{3x}) dt + e^x dB from x0 = 2.

Prints, per step size, how many replicates each scheme loses to the overflow
guard and the largest fourth moment along the path.
"""

import argparse

import numpy as np

from mtem.analysis import empirical_moment_sup, moment_ratio
from mtem.problems import builtin_example1


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replicates", type=int, default=1000)
    parser.add_argument("--levels", type=int, nargs=2, default=(4, 10))
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--epsilon", type=float, default=0.5)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    built = builtin_example1(a=1.0, epsilon=args.epsilon, x0=2.0)
    levels = range(args.levels[0], args.levels[1] + 1)
    em = empirical_moment_sup(built.problem, None, "EM", 4.0, levels, args.replicates,
                              args.seed, jobs=args.jobs)
    mtem = empirical_moment_sup(built.problem, built.policy, "MTEM", 4.0, levels,
                                args.replicates, args.seed, jobs=args.jobs)
    print(f"{'level':>5} {'h':>8} {'EM div':>7} {'EM max E|X|^4':>14} "
          f"{'MTEM div':>9} {'MTEM max E|X|^4':>16}")
    for e, m in zip(em, mtem):
        print(f"{e.level:>5} {built.policy.h(e.delta):8.4f} {e.diverged:>7} "
              f"{e.max_mean_moment:14.4g} {m.diverged:>9} {m.max_mean_moment:16.4g}")
    finite = [r for r in mtem if np.isfinite(r.max_mean_moment)]
    print(f"MTEM moment ratio across levels: {moment_ratio(finite):.4g}")


if __name__ == "__main__":
    main()
