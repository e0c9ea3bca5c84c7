"""Coverage of bootstrap percentile intervals for the ATE, TT and TUT.

    python scripts/coverage.py --sims 100 --boot 200 --n 2000
"""

import argparse

import numpy as np

from mtefree import DgpSpec, EstimationConfig, bootstrap, estimate, generate

NAMES = ("ATE", "TT", "TUT")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sims", type=int, default=100)
    ap.add_argument("--boot", type=int, default=200)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--level", type=float, default=0.90)
    ap.add_argument("--seed", type=int, default=3000)
    args = ap.parse_args(argv)

    cfg = EstimationConfig(procedure="separate", grid_size=11)
    v = np.array([0.5])
    hits = np.zeros(len(NAMES), int)
    bias = []
    for sim in range(args.sims):
        spec = DgpSpec(n=args.n, seed=args.seed + sim)
        s, orc = generate(spec)
        est = estimate(s, cfg, v_grid=v)
        truth = orc.params(spec.mean_x, est.pi_x)
        stat = lambda t: {"p": np.array(_params(estimate(t, cfg, v_grid=v)))}
        boot = bootstrap(s, stat, args.boot, seed=sim)
        lo, hi = boot.ci("p", args.level)
        tv = np.array([truth[k] for k in NAMES])
        hits += (lo <= tv) & (tv <= hi)
        bias.append(np.array(_params(est)) - tv)
        print(f"sim {sim:3d}: covered {hits.tolist()} of {sim + 1}", flush=True)
    bias = np.mean(bias, axis=0)
    for k, h, b in zip(NAMES, hits, bias):
        print(f"{k}: coverage {h}/{args.sims}, mean error {b:+.4f}")


def _params(est):
    s = est.summary
    return s.ate, s.tt, s.tut


if __name__ == "__main__":
    main()
