"""``lth`` command line: run, transfer, metrics, plot.

Exit codes: 0 success, 1 configuration error, 2 data/format error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import load_config
from .errors import LTHError, StorageError
from .harness import read_predictions, run_lth, run_transfer
from .metrics import DEFAULT_BINS, summarize
from .plots import emit_plots

log = logging.getLogger("lthcal")


class _Parser(argparse.ArgumentParser):
    # bad usage is a configuration error (exit 1), not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lth", description="Calibration-aware lottery ticket experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="iterative magnitude pruning with retraining")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides output_dir in the config)")

    tr = sub.add_parser("transfer", help="retrain a run's tickets on another dataset")
    tr.add_argument("--source", required=True, help="run directory produced by 'lth run'")
    tr.add_argument("--config", required=True, help="target experiment config")
    tr.add_argument("--random-ticket", action="store_true", help="reinitialize tickets randomly (control arm)")
    tr.add_argument("--out", help="output directory (overrides output_dir in the config)")

    me = sub.add_parser("metrics", help="accuracy,ece,nll_mean,brier of a prediction dump")
    me.add_argument("--pred", required=True)
    me.add_argument("--bins", type=int, default=DEFAULT_BINS)
    me.add_argument("--header", action="store_true", help="print the column names first")

    pl = sub.add_parser("plot", help="SVG charts from one or more ledgers")
    pl.add_argument("--ledger", action="append", required=True)
    pl.add_argument("--out", required=True)
    return p


def _run(args) -> None:
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    ledger = run_lth(cfg)
    if ledger.status != "complete":
        log.warning("run stopped early; ledger has %d rows", len(ledger))
    print(f"{cfg.output_dir}/ledger.csv")


def _transfer(args) -> None:
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    run_transfer(args.source, cfg, random_ticket=args.random_ticket)
    print(f"{cfg.output_dir}/ledger.csv")


def _metrics(args) -> None:
    m = summarize(read_predictions(args.pred), args.bins)
    if args.header:
        print("accuracy,ece,nll_mean,brier")
    print(",".join(f"{m[k]:.6f}" for k in ("accuracy", "ece", "nll_mean", "brier")))


def _plot(args) -> None:
    for path in emit_plots(args.ledger, args.out):
        print(path)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "metrics" and args.bins < 1:
            parser.error("--bins must be >= 1")
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handlers = {"run": _run, "transfer": _transfer, "metrics": _metrics, "plot": _plot}
    try:
        handlers[args.command](args)
    except LTHError as exc:
        print(f"lth: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"lth: error: {exc}", file=sys.stderr)
        return StorageError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
