#!/usr/bin/env python3
"""Run one config under several calibration strategies and seeds, then plot.

    python scripts/sweep.py configs/lenet300_mnist.txt --strategies none lwcc nba --seeds 0 1 2 --out runs/sweep

Each (strategy, seed) pair gets its own run directory with a ledger; the
charts average seeds per strategy.
"""

from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from lthcal.calib import KINDS
from lthcal.config import load_config
from lthcal.harness import run_lth
from lthcal.plots import emit_plots


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--strategies", nargs="+", default=["none", "lwcc"], choices=KINDS)
    ap.add_argument("--seeds", nargs="+", type=int, default=[0])
    ap.add_argument("--epochs", type=int, help="override the config's epoch count")
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = load_config(args.config)
    if args.epochs:
        base = replace(base, epochs=args.epochs)
    out = Path(args.out)
    ledgers = []
    for kind in args.strategies:
        for seed in args.seeds:
            cfg = replace(base, seed=seed, strategy=replace(base.strategy, kind=kind))
            ledger = run_lth(cfg, out / f"{kind}_seed{seed}")
            last = ledger.rows[-1]
            print(
                f"{kind:8s} seed {seed}: {last.remaining_weights_pct:6.2f}% left  acc {last.accuracy:.4f}  "
                f"ece {last.ece:.4f}  nll {last.nll_mean:.4f}  brier {last.brier:.4f}"
            )
            ledgers.append(out / f"{kind}_seed{seed}" / "ledger.csv")
    for path in emit_plots(ledgers, out / "plots"):
        print(path)


if __name__ == "__main__":
    main()
