#!/usr/bin/env python3
"""Grid-sweep the blind and estimator Adam learning rates on a reduced
scenario and print a table of pooled BMI / estimated SNR per point.

The committed values in vaeq.defaults were fixed from a run of this script
on the 64-QAM, 2-core, 1 MHz-linewidth scenario; rerun it after any change
to the update path before touching those constants.

Usage:
    python scripts/tune_defaults.py --variant trained_cpr \
        --lrs 1e-3,2e-3,5e-3 --est-lrs 1e-3,2e-3,5e-3 --frames 20 --runs 1
"""

import argparse
import itertools
import sys
import time

import numpy as np

from vaeq.harness import ExperimentConfig, run_single
from vaeq.metrics import aggregate


def sweep_point(cfg, runs):
    records = []
    for run in range(runs):
        recs, diags = run_single(cfg, run)
        if diags["diverged"]:
            return None
        records += recs
    summary, _ = aggregate(records, frames_per_run=cfg.frames,
                           keep_last=min(20, cfg.frames))
    return summary


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--variant", default="trained_cpr")
    parser.add_argument("--lrs", default="1e-3,2e-3,5e-3",
                        help="comma-separated blind learning rates")
    parser.add_argument("--est-lrs", default="1e-3,2e-3,5e-3",
                        help="comma-separated estimator learning rates")
    parser.add_argument("--qam-order", type=int, default=64)
    parser.add_argument("--cores", type=int, default=2)
    parser.add_argument("--linewidth-hz", type=float, default=1e6)
    parser.add_argument("--snr-db", type=float, default=25.0)
    parser.add_argument("--frames", type=int, default=20)
    parser.add_argument("--frame-symbols", type=int, default=5000)
    parser.add_argument("--runs", type=int, default=1)
    args = parser.parse_args(argv)

    lrs = [float(v) for v in args.lrs.split(",")]
    est_lrs = [float(v) for v in args.est_lrs.split(",")]
    if args.variant == "cm":
        est_lrs = [0.0]

    print(f"variant={args.variant} qam={args.qam_order} cores={args.cores} "
          f"linewidth={args.linewidth_hz:g} snr={args.snr_db} "
          f"frames={args.frames} runs={args.runs}")
    print(f"{'lr':>10} {'est_lr':>10} {'bmi':>8} {'snr_est':>8} {'ser':>10} {'time':>6}")
    for lr, est_lr in itertools.product(lrs, est_lrs):
        cfg = ExperimentConfig(
            variant=args.variant, qam_order=args.qam_order, cores=args.cores,
            linewidth_hz=args.linewidth_hz, snr_db=args.snr_db,
            frames=args.frames, frame_symbols=args.frame_symbols,
            preconv_symbols=args.frame_symbols, runs=args.runs,
            lr=lr, est_lr=est_lr if est_lr > 0 else -1.0,
        )
        t0 = time.time()
        summary = sweep_point(cfg, args.runs)
        dt = time.time() - t0
        if summary is None:
            print(f"{lr:>10g} {est_lr:>10g} {'diverged':>8} {'-':>8} {'-':>10} {dt:>5.0f}s")
            continue
        snr = summary["snr_est_db"]["mean"]
        print(f"{lr:>10g} {est_lr:>10g} {summary['bmi']['mean']:>8.3f} "
              f"{(np.nan if snr is None else snr):>8.2f} "
              f"{summary['ser']['mean']:>10.2e} {dt:>5.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
