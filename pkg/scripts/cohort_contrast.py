#!/usr/bin/env python3
"""Compare how detectable distraction is for risky and conservative cohorts.

For each seed, both cohorts are simulated, windowed and scored with one fixed
hyperparameter setting under stratified CV. Risky drivers (large distraction
multiplier, frequent drift) should separate better than conservative ones.

    python3 scripts/cohort_contrast.py --seeds 5
"""
import argparse

import numpy as np

from autogbm.data import window_segments
from autogbm.evaluation import cross_validate
from autogbm.features import extract_table
from autogbm.gbdt import Hyperparameters
from autogbm.simulator import generate_cohort


def cohort_accuracy(spread, seed, drivers, folds, hp):
    ds, _ = generate_cohort(drivers, spread, seed)
    table = extract_table(window_segments(ds, 1.0))
    return cross_validate(table.X, table.y, hp, k=folds, seed=seed).mean("accuracy")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--drivers", type=int, default=4)
    ap.add_argument("--folds", type=int, default=5)
    args = ap.parse_args()
    hp = Hyperparameters(n_estimators=80, max_depth=4, learning_rate=0.1)

    rows = []
    for seed in range(args.seeds):
        risky = cohort_accuracy("risky", seed, args.drivers, args.folds, hp)
        conservative = cohort_accuracy("conservative", seed, args.drivers, args.folds, hp)
        rows.append((risky, conservative))
        print(f"seed {seed}: risky {risky:.3f}  conservative {conservative:.3f}")
    r, c = np.array(rows).T
    print(f"\nmean risky {r.mean():.3f}, mean conservative {c.mean():.3f}, "
          f"risky ahead in {int((r > c).sum())}/{len(r)} seeds")


if __name__ == "__main__":
    main()
