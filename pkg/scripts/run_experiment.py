#!/usr/bin/env python3
"""Run the whole pipeline for one config and write every artifact to a run directory.

    python scripts/run_experiment.py --config configs/e2e.yaml --out runs/e2e
    python scripts/run_experiment.py --config configs/default.yaml --set train.max_epochs=10
"""
import argparse
import logging
import time

import pandas as pd

from optarb.config import load_config
from optarb.pipeline import round_table, run_pipeline


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/default.yaml")
    ap.add_argument("--out", default="runs/experiment")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    cfg = load_config(args.config, args.set)
    start = time.perf_counter()
    res = run_pipeline(cfg, out_dir=args.out)
    with pd.option_context("display.width", 160, "display.max_columns", 20):
        print(round_table(res.rounds).to_string(index=False))
        print()
        print(res.metrics.to_string(index=False))
    print(f"\n{res.predictions['date'].nunique()} test dates, {time.perf_counter() - start:.0f}s, "
          f"artifacts in {args.out}")


if __name__ == "__main__":
    main()
