#!/usr/bin/env python3
"""Paired one-sided tests that benchmark GNNs have higher prediction error than RNConv.

Reads ``predictions_{arch}.csv`` from a run directory produced with several
architectures (e.g. ``configs/default.yaml``, archs RNC/GCN/SAGE).  The paired
sample is the per-test-date MSE difference (benchmark minus RNConv); when
the run has at least five rounds the per-round differences are tested too.

    python scripts/compare_benchmarks.py runs/default
"""
import argparse
import json
from pathlib import Path

import numpy as np
import pandas as pd

from optarb.stats import paired_tests


def per_date_mse(path: Path) -> pd.Series:
    p = pd.read_csv(path)
    p = p[np.isfinite(p["y"])]
    return ((p["y_hat"] - p["y"]) ** 2).groupby(p["date"]).mean()


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir")
    ap.add_argument("--model", default="RNC")
    args = ap.parse_args()
    run = Path(args.run_dir)

    ref = per_date_mse(run / f"predictions_{args.model}.csv")
    rounds = pd.read_csv(run / "rounds.csv") if (run / "rounds.csv").exists() else None
    report = {}
    for path in sorted(run.glob("predictions_*.csv")):
        arch = path.stem.split("_", 1)[1]
        if arch == args.model:
            continue
        bm = per_date_mse(path)
        diffs = (bm - ref).dropna()
        entry = {"per_date": paired_tests(diffs.to_numpy()).as_dict(), "mean_diff": float(diffs.mean())}
        if rounds is not None:
            wide = rounds.pivot(index="round", columns="arch", values="test_mse").dropna()
            if arch in wide and len(wide) >= 5:
                entry["per_round"] = paired_tests((wide[arch] - wide[args.model]).to_numpy()).as_dict()
        report[arch] = entry
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
