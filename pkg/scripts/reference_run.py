#!/usr/bin/env python3
"""Reproduce the frozen end-to-end reference run and print its headline numbers.

Simulates the default 8-driver cohort, then runs the full pipeline with 50 TPE
trials and 10-fold CV on every window. Prints accuracy, best loss, stage
timings and the RFE pick.
"""
import argparse
import time
from pathlib import Path

from autogbm import pipeline
from autogbm.data import write_trajectory_csv
from autogbm.simulator import generate_cohort


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/reference"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iters", type=int, default=50)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / "trajectories.csv"
    ds, _ = generate_cohort(8, "default", args.seed)
    write_trajectory_csv(ds, csv_path)

    t0 = time.perf_counter()
    cfg = pipeline.ExperimentConfig(inputs=[str(csv_path)], n_iter=args.iters, seed=args.seed)
    report = pipeline.run_experiment(cfg)
    pipeline.emit_report(report, args.out / "run")
    elapsed = time.perf_counter() - t0

    agg = report.best_cv.aggregates()
    print(f"windows {report.n_windows} ({report.n_positive} distracted)")
    print(f"best loss {report.best.loss:.4f}, accuracy {agg['accuracy']['mean']:.3f}, "
          f"auc {agg['auc']['mean']:.3f}")
    print("stage seconds: " + ", ".join(f"{k} {v:.1f}" for k, v in report.timings.items()))
    print(f"total {elapsed:.1f} s")
    if report.rfe is not None:
        print(f"RFE keeps {report.rfe.selected_size}: {', '.join(report.rfe.selected)}")


if __name__ == "__main__":
    main()
