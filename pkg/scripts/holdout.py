"""Dynamic-vs-static hold-out comparison on synthetic single subjects.

A dynamic subject follows ``Phi(1.2 sin(4 pi t + phase))``; a static one sits
at a constant level.  Both answer the same 500 known items.

    python3 scripts/holdout.py --seeds 5
"""

import argparse
import time

import numpy as np
from scipy import special

from dynirt.dynaesti import holdout_compare
from dynirt.simulate import SynthConfig, sample_items, sample_responses


def subject_curve(kind, grid, seed):
    rng = np.random.default_rng(seed)
    if kind == "dynamic":
        return special.ndtr(1.2 * np.sin(4 * np.pi * grid + rng.uniform(0, 2 * np.pi)))
    return np.full_like(grid, rng.uniform(0.2, 0.8))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--items", type=int, default=500)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--kind", choices=("dynamic", "static", "both"), default="both")
    args = p.parse_args()
    items = sample_items(SynthConfig(1, args.items, seed=100))
    grid = np.linspace(0, 1, 1001)
    kinds = ("dynamic", "static") if args.kind == "both" else (args.kind,)
    for kind in kinds:
        for seed in range(args.seeds):
            curve = subject_curve(kind, grid, seed)
            r = sample_responses(grid, curve[None], items, rng=np.random.default_rng(seed), students=["p"])
            start = time.perf_counter()
            res = holdout_compare(r, items, n_runs=args.runs, seed=seed)
            print(f"{kind:<8} seed {seed}  ratio {res.ratio:10.4g}  ({time.perf_counter() - start:.0f} s)", flush=True)


if __name__ == "__main__":
    main()
