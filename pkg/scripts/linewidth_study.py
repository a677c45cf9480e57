#!/usr/bin/env python3
"""Reproduce the phase-noise study at reduced scale: sweep the laser
linewidth for every equalizer variant and report pooled BMI and estimated
SNR per point.

Each (variant, linewidth) cell is a full experiment written under
--out-dir/<variant>/linewidth_hz=<value>/ with records.csv + summary.json;
all cells share the base seed, so comparisons across variants are paired.

Usage:
    python scripts/linewidth_study.py --out-dir out/study \
        --linewidths 1e4,1e5,5e5,1e6 --frames 30 --runs 3
"""

import argparse
import dataclasses
import json
import os
import sys
import time

from vaeq.harness import ExperimentConfig, sweep

VARIANTS = ("cm", "plain", "trailing_cpr", "trained_cpr")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--out-dir", default="out/study")
    parser.add_argument("--variants", default=",".join(VARIANTS))
    parser.add_argument("--linewidths", default="1e4,1e5,5e5,1e6",
                        help="comma-separated laser linewidths in Hz")
    parser.add_argument("--qam-order", type=int, default=64)
    parser.add_argument("--cores", type=int, default=2)
    parser.add_argument("--snr-db", type=float, default=25.0)
    parser.add_argument("--frames", type=int, default=30)
    parser.add_argument("--frame-symbols", type=int, default=5000)
    parser.add_argument("--runs", type=int, default=3)
    parser.add_argument("--base-seed", type=int, default=0)
    args = parser.parse_args(argv)

    linewidths = [float(v) for v in args.linewidths.split(",")]
    base = ExperimentConfig(
        qam_order=args.qam_order, cores=args.cores, snr_db=args.snr_db,
        frames=args.frames, frame_symbols=args.frame_symbols,
        preconv_symbols=args.frame_symbols, runs=args.runs,
        base_seed=args.base_seed,
    )

    table = {}
    for variant in args.variants.split(","):
        cfg = dataclasses.replace(base, variant=variant,
                                  out_dir=os.path.join(args.out_dir, variant))
        t0 = time.time()
        summaries = sweep(cfg, "linewidth_hz", linewidths)
        table[variant] = {
            f"{lw:g}": s["metrics"] for lw, s in zip(linewidths, summaries)
        }
        print(f"{variant}: {time.time() - t0:.0f}s", file=sys.stderr)

    print(f"{'variant':>14} " + " ".join(f"{lw:>10g}" for lw in linewidths))
    for variant, row in table.items():
        cells = []
        for lw in linewidths:
            m = row[f"{lw:g}"]["bmi"]["mean"]
            cells.append(f"{'-':>10}" if m is None else f"{m:>10.3f}")
        print(f"{variant:>14} " + " ".join(cells) + "   (pooled BMI, bit)")

    with open(os.path.join(args.out_dir, "study.json"), "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
