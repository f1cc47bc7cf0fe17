"""Sample the default link latency profile and summarise it."""

import argparse

import numpy as np

from depsolar.netsim import LinkProfile, sample_latency


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bins", type=int, default=16)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    prof = LinkProfile()
    x = np.array([sample_latency(prof, rng) for _ in range(args.n)])
    print(f"n={args.n}  mean={x.mean():.2f} ms  sd={x.std():.2f}  min={x.min():.2f}  max={x.max():.2f}")
    print("p50={:.1f}  p90={:.1f}  p99={:.1f}".format(*np.percentile(x, [50, 90, 99])))
    counts, edges = np.histogram(x, bins=args.bins)
    width = 50 / counts.max()
    for c, lo, hi in zip(counts, edges, edges[1:]):
        print(f"{lo:6.1f}-{hi:6.1f} {'#' * int(round(c * width))}")


if __name__ == "__main__":
    main()
