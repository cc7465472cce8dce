"""Polling replication: one yes/no answer a day, fitted with a fixed bandwidth.

Prints the mean 70% band coverage of the true approval curve and the mean
RMISE of the fitted median over seeded replications.

    python3 scripts/polling.py --reps 50
"""

import argparse

import numpy as np

from dynirt.curvfife import fit
from dynirt.emissions import bernoulli_emission
from dynirt.evaluate import SampledFunction, rmise
from dynirt.kernel import KernelParams
from dynirt.simulate import polling
from dynirt.transforms import Transform


def replicate(seed, h=0.19, n_days=100):
    d = polling(seed, n_days=n_days, h=h)
    ems = [bernoulli_emission(t, a, Transform.probit()) for t, a in zip(d.times, d.answers)]
    med, lo, hi = fit(ems, KernelParams(h=h), transform=Transform.probit()).marginals(d.grid)
    coverage = float(np.mean((d.truth >= lo) & (d.truth <= hi)))
    return coverage, rmise(SampledFunction(d.grid, d.truth), SampledFunction(d.grid, med))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--days", type=int, default=100)
    p.add_argument("--h", type=float, default=0.19)
    args = p.parse_args()
    rows = np.array([replicate(s, args.h, args.days) for s in range(args.reps)])
    print(f"replications  {args.reps}")
    print(f"coverage70    {rows[:, 0].mean():.4f}")
    print(f"mean_rmise    {rows[:, 1].mean():.4f}")


if __name__ == "__main__":
    main()
