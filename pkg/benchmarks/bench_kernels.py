"""Compiled vs numpy-fallback kernels: NTT forward/inverse and modular multiply.

    python benchmarks/bench_kernels.py [--profile mnist-8192] [--rounds 5] [--iterations 10]

Both implementations are run on the same inputs and their outputs compared
bit for bit before the timings are printed.
"""

import argparse
import json
import sys

from hets import bench, kernels


def main(argv=None):
    ap = argparse.ArgumentParser(description="kernel benchmark")
    ap.add_argument("--profile", default="mnist-8192")
    ap.add_argument("--rounds", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=10)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--json", metavar="PATH")
    args = ap.parse_args(argv)

    if kernels.compiled is None:
        print("compiled kernels are not built; only the fallback will be timed", file=sys.stderr)
    report = bench.run_kernels(args.profile, args.rounds, args.iterations, args.workers)
    print(report.table())

    by_name = {r.name: r.mean_ms for r in report.rows}
    for op in ("ntt_forward", "ntt_inverse", "mulmod"):
        fast, slow = by_name.get(f"{op} [compiled]"), by_name[f"{op} [fallback]"]
        if fast:
            print(f"{op:<12} speedup {slow / fast:6.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
