#!/usr/bin/env python3
"""Run the full experiment set into results/: the zero-load latency sweep,
the traffic-pattern bandwidth/latency sweeps, the HBM channel load study,
and the ordering-unit comparison."""

import sys
import time

from floosim.cli import main

RUNS = [
    ["latency-sweep", "--out", "results/latency-sweep"],
    ["traffic", "--out", "results/traffic-neighbor", "--workload.pattern=neighbor"],
    ["traffic", "--out", "results/traffic-bit-complement",
     "--workload.pattern=bit_complement"],
    ["traffic", "--out", "results/traffic-uniform-random",
     "--workload.pattern=uniform_random"],
    ["traffic", "--out", "results/traffic-tiled-matmul",
     "--workload.pattern=tiled_matmul", "--workload.sizes_kib=4 8 16 32"],
    ["hbm-load", "--out", "results/hbm-load"],
    ["ordering-compare", "--out", "results/ordering-compare"],
]


def run_all(extra_args):
    for argv in RUNS:
        print(f"\n=== floosim {' '.join(argv)} ===")
        t0 = time.time()
        rc = main(argv + extra_args)
        print(f"=== done in {time.time() - t0:.1f}s (exit {rc}) ===")
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(run_all(sys.argv[1:]))
