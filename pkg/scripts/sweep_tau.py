#!/usr/bin/env python3
"""Threshold sweep on the synthetic corpus.

Runs the full scheme grid at desk scale, writes the raw per-session rows
to CSV, and prints a per-threshold summary so the retransmission trend is
visible without any plotting dependency.

    python3 scripts/sweep_tau.py --out results.csv
    python3 scripts/sweep_tau.py --quick        # 4 images, 2 seeds
"""

import argparse
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from semlink.backends import toy_suite
from semlink.blocks import TensorDims
from semlink.experiments import ExperimentGrid, rows_to_csv, run_grid, synthetic_corpus

DESK = TensorDims(3, 128, 128, 4, 16, 16)


def summarize(rows):
    cells = defaultdict(list)
    for row in rows:
        cells[(row.scheme, row.tau)].append(row)

    print(f"{'scheme':<12} {'tau':>4} {'mean t':>7} {'kappa':>9} "
          f"{'rouge':>7} {'ssim':>7} {'at cap':>7}")
    for (scheme, tau), cell in sorted(cells.items()):
        t = np.mean([r.t_final for r in cell])
        kappa = np.mean([r.kappa for r in cell])
        rouge = np.mean([r.rouge for r in cell])
        ssim = np.mean([r.ssim for r in cell])
        at_cap = sum(r.terminated_by == "exhausted" for r in cell)
        print(f"{scheme:<12} {tau:>4.1f} {t:>7.3f} {kappa:>9.5f} "
              f"{rouge:>7.3f} {ssim:>7.3f} {at_cap:>4}/{len(cell)}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("sweep_tau.csv"))
    parser.add_argument("--snr", type=float, default=10.0)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--quick", action="store_true",
                        help="4 images and 2 seeds instead of 16 and 5")
    args = parser.parse_args()

    count, seeds = (4, 2) if args.quick else (16, args.seeds)
    suite = toy_suite(DESK)
    images = synthetic_corpus(DESK, count=count)
    grid = ExperimentGrid(snrs=(args.snr,), taus=(0.3, 0.5, 0.7, 0.9),
                          n_seeds=seeds)
    rows, failures = run_grid(images, grid, suite)
    for cell, exc in failures:
        print(f"cell {cell} failed: {exc}", file=sys.stderr)

    args.out.write_text(rows_to_csv(rows))
    print(f"wrote {len(rows)} rows to {args.out}\n")
    summarize(rows)
    return 2 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
