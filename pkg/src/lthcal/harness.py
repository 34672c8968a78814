"""Lottery-ticket experiments: the prune/rewind/retrain loop and ticket transfer.

A run directory looks like::

    config.txt            resolved configuration (every key)
    init_params.npz       the dense initialization the tickets rewind to
    ledger.csv            one row per pruning iteration
    masks/iter_NNN.lthm   mask used in iteration NNN
    predictions/iter_NNN.json   test-set predictions of iteration NNN
"""

from __future__ import annotations

import io
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import rng as rngmod
from .config import ExperimentConfig, load_config, to_text
from .data import Dataset, batch_iter, load_idx, split_half_by_class, stratified_subset, synthetic_blobs
from .errors import ConfigError, DataError, FormatError, PruneError, StorageError
from .io import atomic_write_bytes, atomic_write_text
from .metrics import PredictionSet, summarize
from .nn import NetworkSpec, ParamSet, forward, init_network
from .objective import loss_and_grad
from .optim import adam_state, optimizer_step, scheduled_lr, sgd_state
from .pruning import Mask, apply_mask, load_mask, prune, random_reinit, rewind, save_mask, sparsity

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "iteration",
    "remaining_weights_pct",
    "accuracy",
    "ece",
    "nll_mean",
    "brier",
    "strategy",
    "reinit_mode",
    "seed",
    "wall_seconds",
)
_FLOAT_COLUMNS = ("remaining_weights_pct", "accuracy", "ece", "nll_mean", "brier", "wall_seconds")


@dataclass
class LedgerRow:
    iteration: int
    remaining_weights_pct: float
    accuracy: float
    ece: float
    nll_mean: float
    brier: float
    strategy: str
    reinit_mode: str
    seed: int
    wall_seconds: float
    source_run: str | None = None


@dataclass
class RunLedger:
    rows: list[LedgerRow] = field(default_factory=list)
    status: str = "complete"  # "partial" when pruning ran out of weights early

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]


# --- data ------------------------------------------------------------------------


def load_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, test) for ``config``; the split option keeps one half of the training set."""
    d = config.data
    if d.kind == "synthetic":
        full = synthetic_blobs(d.classes, d.per_class + d.test_per_class, d.dim, d.separation, d.data_seed)
        per = d.per_class + d.test_per_class
        pos = np.arange(len(full)) % per
        train = full.subset(np.flatnonzero(pos < d.per_class), "blobs-train")
        test = full.subset(np.flatnonzero(pos >= d.per_class), "blobs-test")
    else:
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(d, key):
                raise ConfigError(f"data.{key} is required for idx datasets")
        K = d.num_classes or None
        train = load_idx(d.train_images, d.train_labels, K, "train")
        test = load_idx(d.test_images, d.test_labels, K, "test")
        K = max(train.num_classes, test.num_classes)
        train = Dataset(train.features, train.labels, K, "train")
        test = Dataset(test.features, test.labels, K, "test")
        if d.train_limit:
            train = stratified_subset(train, d.train_limit, d.subset_seed)
        if d.test_limit:
            test = stratified_subset(test, d.test_limit, d.subset_seed + 1)
    if d.split != "none":
        pair = split_half_by_class(train, d.split_seed)
        train = pair.part_a if d.split == "a" else pair.part_b
    return train, test


def _check_shapes(spec: NetworkSpec, train: Dataset) -> None:
    if spec.layer_dims[0] != train.dim:
        raise ConfigError(f"network input dim {spec.layer_dims[0]} != data dim {train.dim}")
    if spec.num_classes != train.num_classes:
        raise ConfigError(f"network has {spec.num_classes} outputs but data has {train.num_classes} classes")


# --- training and evaluation ----------------------------------------------------


def train(
    params: ParamSet,
    mask: Mask,
    ds: Dataset,
    config: ExperimentConfig,
    stream_key: int = 0,
) -> tuple[ParamSet, list[float]]:
    """Train a copy of ``params`` under ``mask`` for ``config.epochs``; returns it and per-step losses."""
    params = params.copy()
    apply_mask(params, mask)
    opt = config.optimizer
    if opt.kind == "adam":
        state = adam_state(params)
    else:
        state = sgd_state(params, opt.momentum, opt.weight_decay, opt.milestones)
    rng = rngmod.make_rng(config.seed, rngmod.TRAIN, stream_key)
    strategy = config.strategy
    losses: list[float] = []
    for epoch in range(config.epochs):
        lr = scheduled_lr(opt.lr, epoch, opt.milestones)
        for batch in batch_iter(ds, config.batch_size, config.seed, epoch):
            if strategy.kind == "mixup" and len(batch) < 2:
                continue  # nothing to pair a lone trailing sample with
            loss, grads = loss_and_grad(params, mask, batch, strategy, rng)
            optimizer_step(params, grads, state, lr, mask)
            losses.append(loss)
    return params, losses


def _threads() -> int:
    raw = os.environ.get("LTH_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"LTH_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("LTH_THREADS must be >= 1")
    return n


def evaluate(params: ParamSet, mask: Mask, ds: Dataset, threads: int | None = None) -> PredictionSet:
    """Deterministic (dropout off) predictions on ``ds``, optionally over worker threads."""
    threads = _threads() if threads is None else threads
    chunks = np.array_split(np.arange(len(ds)), max(1, min(threads, len(ds))))
    run = lambda idx: forward(params, mask, ds.features[idx])[0]  # noqa: E731
    if threads == 1:
        probs = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            probs = list(pool.map(run, chunks))
    return PredictionSet(np.vstack(probs), ds.labels)


# --- persistence -------------------------------------------------------------------


def save_params(params: ParamSet, path: Path, initial: bool = True) -> None:
    arrays = {}
    ws = params.init_weights if initial else params.weights
    bs = params.init_biases if initial else params.biases
    for i, (w, b) in enumerate(zip(ws, bs)):
        arrays[f"w{i}"] = np.asarray(w)
        arrays[f"b{i}"] = np.asarray(b)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_params(path: Path, spec: NetworkSpec) -> ParamSet:
    try:
        with np.load(path) as z:
            n = len(spec.layer_dims) - 1
            weights = [z[f"w{i}"] for i in range(n)]
            biases = [z[f"b{i}"] for i in range(n)]
    except (OSError, KeyError, ValueError) as exc:
        raise StorageError(f"cannot read parameters from {path}: {exc}") from exc
    return ParamSet(spec, weights, biases)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def emit_csv(ledger: RunLedger, path: str | Path) -> None:
    if not ledger.rows:
        raise DataError("refusing to write an empty ledger")
    with_source = any(r.source_run is not None for r in ledger.rows)
    header = list(CSV_COLUMNS) + (["source_run"] if with_source else [])
    lines = [",".join(header)]
    for r in ledger.rows:
        cells = []
        for col in CSV_COLUMNS:
            v = getattr(r, col)
            cells.append(_fmt(v) if col in _FLOAT_COLUMNS else str(v))
        if with_source:
            cells.append(r.source_run or "")
        lines.append(",".join(cells))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_csv(path: str | Path) -> RunLedger:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise StorageError(f"cannot read ledger {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty ledger")
    header = lines[0].split(",")
    if tuple(header[: len(CSV_COLUMNS)]) != CSV_COLUMNS:
        raise FormatError(f"{path}: unexpected ledger header {lines[0]!r}")
    ledger = RunLedger()
    for lineno, line in enumerate(lines[1:], 2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        rec = dict(zip(header, cells))
        try:
            row = LedgerRow(
                iteration=int(rec["iteration"]),
                strategy=rec["strategy"],
                reinit_mode=rec["reinit_mode"],
                seed=int(rec["seed"]),
                source_run=rec.get("source_run"),
                **{c: float(rec[c]) for c in _FLOAT_COLUMNS},
            )
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        ledger.rows.append(row)
    return ledger


def predictions_to_json(preds: PredictionSet) -> str:
    """One sample per line so read errors can point at a line."""
    rows = [
        json.dumps({"probs": [float(p) for p in row], "label": int(y)})
        for row, y in zip(preds.probs, preds.labels)
    ]
    return '{"num_classes": %d, "samples": [\n' % preds.num_classes + ",\n".join(rows) + "\n]}\n"


def emit_predictions(preds: PredictionSet, path: str | Path) -> None:
    preds.validate()
    atomic_write_text(Path(path), predictions_to_json(preds))


def _sample_line(text: str, i: int) -> int:
    starts = [m.start() for m in re.finditer(r'"probs"', text)]
    pos = starts[i] if i < len(starts) else 0
    return text.count("\n", 0, pos) + 1


def parse_predictions(text: str, source: str = "<predictions>", tol: float = 1e-6) -> PredictionSet:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: line {exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("num_classes"), int) or not isinstance(obj.get("samples"), list):
        raise FormatError(f"{source}: expected an object with integer 'num_classes' and a 'samples' list")
    K = obj["num_classes"]
    if K < 2:
        raise FormatError(f"{source}: num_classes must be >= 2")
    samples = obj["samples"]
    if not samples:
        raise FormatError(f"{source}: no samples")
    probs = np.empty((len(samples), K))
    labels = np.empty(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        where = f"{source}: line {_sample_line(text, i)} (sample {i})"
        if not isinstance(s, dict) or not isinstance(s.get("probs"), list) or "label" not in s:
            raise FormatError(f"{where}: expected {{'probs': [...], 'label': int}}")
        p, y = s["probs"], s["label"]
        if len(p) != K or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p):
            raise FormatError(f"{where}: probs must be {K} numbers")
        if not isinstance(y, int) or isinstance(y, bool) or not 0 <= y < K:
            raise FormatError(f"{where}: label must be an integer in [0, {K})")
        row = np.asarray(p, dtype=np.float64)
        if np.any(row < 0.0) or np.any(row > 1.0):
            raise FormatError(f"{where}: probabilities must lie in [0, 1]")
        if abs(row.sum() - 1.0) > tol:
            raise FormatError(f"{where}: probabilities sum to {row.sum():.9g}, not 1")
        probs[i], labels[i] = row, y
    return PredictionSet(probs, labels)


def read_predictions(path: str | Path) -> PredictionSet:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise StorageError(f"cannot read predictions {path}: {exc}") from exc
    return parse_predictions(text, str(path))


# --- experiments ---------------------------------------------------------------------

Observer = Callable[[int, ParamSet, Mask], None]


def _reinit_seed(seed: int, iteration: int) -> int:
    return int(rngmod.make_rng(seed, rngmod.REINIT, iteration).integers(2**32))


def _iteration_files(out: Path, it: int) -> tuple[Path, Path]:
    return out / "masks" / f"iter_{it:03d}.lthm", out / "predictions" / f"iter_{it:03d}.json"


def _record(
    out: Path, it: int, trained: ParamSet, mask: Mask, test: Dataset, config: ExperimentConfig, t0: float, **extra
) -> LedgerRow:
    preds = evaluate(trained, mask, test)
    mask_path, pred_path = _iteration_files(out, it)
    save_mask(mask, mask_path)
    emit_predictions(preds, pred_path)
    m = summarize(preds, config.eval_bins)
    row = LedgerRow(
        iteration=it,
        remaining_weights_pct=100.0 * sparsity(mask),
        accuracy=m["accuracy"],
        ece=m["ece"],
        nll_mean=m["nll_mean"],
        brier=m["brier"],
        strategy=config.strategy.kind,
        reinit_mode=extra.pop("reinit_mode", config.prune.reinit),
        seed=config.seed,
        wall_seconds=time.perf_counter() - t0,
        **extra,
    )
    log.info(
        "iter %d: %.2f%% weights, acc %.4f, ece %.4f, nll %.4f, brier %.4f",
        it, row.remaining_weights_pct, row.accuracy, row.ece, row.nll_mean, row.brier,
    )
    return row


def run_lth(config: ExperimentConfig, out_dir: str | Path | None = None, observer: Observer | None = None) -> RunLedger:
    """Train dense, then prune / reinitialize / retrain ``config.prune.iterations`` times.

    ``observer(iteration, params, mask)`` is called with the parameters each
    iteration starts training from.
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    train_ds, test_ds = load_datasets(config)
    spec = config.network_spec()
    _check_shapes(spec, train_ds)

    atomic_write_text(out / "config.txt", to_text(replace(config, output_dir=str(out))))
    params0 = init_network(spec)
    save_params(params0, out / "init_params.npz")

    ledger = RunLedger()
    mask = Mask.ones(spec)
    trained = None
    for it in range(config.prune.iterations + 1):
        t0 = time.perf_counter()
        if it == 0:
            start = params0
        else:
            try:
                new_mask = prune(trained, mask, config.prune)
            except PruneError as exc:
                log.warning("stopping after iteration %d: %s", it - 1, exc)
                ledger.status = "partial"
                break
            if sparsity(new_mask) >= sparsity(mask):
                log.warning("stopping after iteration %d: pruning no longer removes weights", it - 1)
                ledger.status = "partial"
                break
            mask = new_mask
            if config.prune.reinit == "rewind":
                start = rewind(trained, mask)
            else:
                start = random_reinit(spec, mask, _reinit_seed(config.seed, it))
        if observer is not None:
            observer(it, start, mask)
        trained, _ = train(start, mask, train_ds, config, it)
        ledger.rows.append(_record(out, it, trained, mask, test_ds, config, t0))
        emit_csv(ledger, out / "ledger.csv")
    return ledger


def _source_masks(source: Path) -> list[tuple[int, Mask]]:
    files = sorted((source / "masks").glob("iter_*.lthm"))
    if not files:
        raise DataError(f"{source}: no masks found")
    return [(int(f.stem.split("_")[1]), load_mask(f)) for f in files]


def run_transfer(
    source_run_dir: str | Path,
    target_config: ExperimentConfig,
    random_ticket: bool = False,
    out_dir: str | Path | None = None,
    observer: Observer | None = None,
) -> RunLedger:
    """Retrain every ticket of a finished run on the target dataset.

    A ticket is the source mask applied to the source initialization; with
    ``random_ticket`` the surviving weights are drawn afresh instead (control arm).
    """
    source = Path(source_run_dir)
    if not (source / "config.txt").exists():
        raise DataError(f"{source}: not a run directory (no config.txt)")
    source_cfg = load_config(source / "config.txt")
    if source_cfg.network.layer_dims != target_config.network.layer_dims:
        raise ConfigError(
            f"architecture mismatch: source {source_cfg.network.layer_dims} vs target {target_config.network.layer_dims}"
        )
    source_params = load_params(source / "init_params.npz", source_cfg.network_spec())
    out = Path(out_dir if out_dir is not None else target_config.output_dir)
    train_ds, test_ds = load_datasets(target_config)
    spec = target_config.network_spec()
    _check_shapes(spec, train_ds)
    atomic_write_text(out / "config.txt", to_text(replace(target_config, output_dir=str(out))))

    ledger = RunLedger()
    mode = "random" if random_ticket else "rewind"
    for it, mask in _source_masks(source):
        t0 = time.perf_counter()
        if random_ticket:
            start = random_reinit(spec, mask, _reinit_seed(target_config.seed, it))
        else:
            start = rewind(source_params, mask)
        if observer is not None:
            observer(it, start, mask)
        trained, _ = train(start, mask, train_ds, target_config, it)
        ledger.rows.append(
            _record(out, it, trained, mask, test_ds, target_config, t0, reinit_mode=mode, source_run=source.name)
        )
        emit_csv(ledger, out / "ledger.csv")
    return ledger
