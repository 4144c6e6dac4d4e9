"""Query-latency benchmark for the precomputed inverse map q_hat = T d + k.

    python scripts/bench_latency.py [--sizes 10000x54 8293x54 5x54] [--queries 5000]

Each size gets a random dense map; the timed call is ``estimate`` on one
measurement vector, after a warm-up. Exit status is 1 if any p99 exceeds
``--budget-ms``.
"""
import argparse
import os
import platform
import sys

import numpy as np

from strainload.estimator import InverseMap, PosteriorCovariance, estimate
from strainload.experiments import time_queries


def size(text):
    n_q, n_d = (int(v) for v in text.lower().split("x"))
    return n_q, n_d


def bench(n_q, n_d, queries, rng):
    T = np.ascontiguousarray(rng.standard_normal((n_q, n_d)))
    cov = PosteriorCovariance(factor=np.zeros((n_q, 1)), core=np.zeros((1, 1)))
    imap = InverseMap(T, rng.standard_normal(n_q), 1.0, "case2", cov)
    D = rng.standard_normal((queries, n_d))
    return time_queries(lambda d: estimate(imap, d), D, warmup=min(200, queries))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=size, nargs="+", default=[(10_000, 54), (8293, 54), (5, 54)])
    p.add_argument("--queries", type=int, default=5000)
    p.add_argument("--budget-ms", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"# {platform.processor() or platform.machine()}, {os.cpu_count()} CPUs, "
          f"numpy {np.__version__}")
    print(f"{'n_q':>7} {'n_d':>4} {'p50 us':>9} {'p99 us':>9} {'max us':>9}")
    worst = 0.0
    for n_q, n_d in args.sizes:
        t = bench(n_q, n_d, args.queries, rng) / 1e3
        p50, p99 = np.percentile(t, [50, 99])
        worst = max(worst, p99)
        print(f"{n_q:>7} {n_d:>4} {p50:9.1f} {p99:9.1f} {t.max():9.1f}")
    ok = worst < args.budget_ms * 1e3
    print(f"worst p99 {worst / 1e3:.3f} ms {'<' if ok else '>='} budget {args.budget_ms} ms")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
