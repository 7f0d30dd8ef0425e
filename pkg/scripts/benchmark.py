#!/usr/bin/env python3
"""Scaling sweep: every algorithm over a list of worker counts.

Appends benchmark records to a CSV and prints a speedup table. Under
CPython the workers share one interpreter lock, so the interesting numbers
are the update counts and their stability, not wall-clock speedup.

    python scripts/benchmark.py --out bench.csv --workers 1,2,4
"""
import argparse
import sys
from collections import defaultdict
from pathlib import Path

from scopegraph.cli import main as cli_main
from scopegraph.io import read_records

SETUPS = {
    "denoise": ("priority", "edge", "32x32"),
    "gibbs": ("priority", "vertex", "grid:16x16"),
    "coem": ("multiqueue", "edge", "200x200"),
    "lasso": ("round-robin", "full", "500x200"),
    "gabp": ("priority", "edge", "200"),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="bench.csv")
    ap.add_argument("--workers", default="1,2,4")
    ap.add_argument("--algorithms", default=",".join(SETUPS))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    out = Path(args.out)
    start = len(read_records(out)) if out.exists() else 0
    for alg in args.algorithms.split(","):
        sched, model, size = SETUPS[alg]
        code = cli_main(["--seed", str(args.seed), "--stats-out", str(out), "bench", "--algorithm", alg,
                         "--workers-list", args.workers, "--schedulers", sched, "--models", model,
                         "--size", size])
        if code:
            return code

    rows = read_records(out)[start:]
    base = defaultdict(float)
    for r in rows:
        if r.workers == 1:
            base[r.algorithm] = r.wall_time_s
    print(f"{'algorithm':<10}{'workers':>8}{'updates':>12}{'time s':>10}{'speedup':>9}")
    for r in rows:
        sp = base[r.algorithm] / r.wall_time_s if base[r.algorithm] and r.wall_time_s else float("nan")
        print(f"{r.algorithm:<10}{r.workers:>8}{r.updates:>12}{r.wall_time_s:>10.3f}{sp:>9.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
