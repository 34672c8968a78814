#!/usr/bin/env python3
"""Ticket transfer between the two halves of a class-balanced split.

    python scripts/transfer.py configs/mnist_half_a.txt configs/mnist_half_b.txt --strategies none lwcc --out runs/transfer

For each strategy: find tickets on half a, retrain them on half b (rewound and
randomly reinitialized), and train native half-b tickets for comparison.
"""

from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from lthcal.calib import KINDS
from lthcal.config import load_config
from lthcal.harness import run_lth, run_transfer
from lthcal.plots import emit_plots


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source_config")
    ap.add_argument("target_config")
    ap.add_argument("--strategies", nargs="+", default=["none", "lwcc"], choices=KINDS)
    ap.add_argument("--epochs", type=int, help="override both configs' epoch counts")
    ap.add_argument("--out", default="runs/transfer")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    src, tgt = load_config(args.source_config), load_config(args.target_config)
    if args.epochs:
        src, tgt = replace(src, epochs=args.epochs), replace(tgt, epochs=args.epochs)
    out = Path(args.out)
    for kind in args.strategies:
        s = replace(src, strategy=replace(src.strategy, kind=kind))
        t = replace(tgt, strategy=replace(tgt.strategy, kind=kind))
        run_lth(s, out / f"{kind}_source")
        arms = {
            "native": run_lth(t, out / f"{kind}_native"),
            "transfer": run_transfer(out / f"{kind}_source", t, out_dir=out / f"{kind}_transfer"),
            "random": run_transfer(out / f"{kind}_source", t, random_ticket=True, out_dir=out / f"{kind}_random"),
        }
        print(f"strategy {kind}")
        for i, row in enumerate(arms["native"].rows):
            cells = "  ".join(f"{arm} {ledger.rows[i].accuracy:.4f}/{ledger.rows[i].ece:.4f}" for arm, ledger in arms.items() if i < len(ledger))
            print(f"  {row.remaining_weights_pct:6.2f}% left  acc/ece  {cells}")
        emit_plots([out / f"{kind}_{arm}" / "ledger.csv" for arm in arms], out / f"{kind}_plots")


if __name__ == "__main__":
    main()
