"""Magnitude pruning masks, rewinding and sparsity accounting.

Only weights are pruned; biases are never masked and never counted.
Prune counts use ``floor(ratio * surviving)``. Ties in ``|w|`` are broken by
(layer index, row-major position), lowest first, so masks are reproducible
bit for bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, PruneError, StorageError
from .io import atomic_write_bytes
from .nn import NetworkSpec, ParamSet, init_network

MAGIC = b"LTHM"
VERSION = 1


class Mask:
    """Per weight-layer boolean tensors; ``True`` marks a surviving weight."""

    def __init__(self, layers: Iterable[np.ndarray]):
        self.layers = tuple(np.array(m, dtype=bool, copy=True) for m in layers)
        for m in self.layers:
            m.setflags(write=False)

    @classmethod
    def ones(cls, params_or_spec: ParamSet | NetworkSpec) -> Mask:
        spec = params_or_spec.spec if isinstance(params_or_spec, ParamSet) else params_or_spec
        return cls(np.ones(s, dtype=bool) for s in spec.weight_shapes)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [m.shape for m in self.layers]

    def surviving(self) -> list[int]:
        return [int(m.sum()) for m in self.layers]

    def __le__(self, other: Mask) -> bool:
        return self.shapes == other.shapes and all(
            not np.any(a & ~b) for a, b in zip(self.layers, other.layers)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.shapes == other.shapes and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self) -> str:
        return f"Mask(shapes={self.shapes}, remaining={sparsity(self):.4f})"


@dataclass(frozen=True)
class PruneConfig:
    mode: str = "local"
    per_iter_ratio: float = 0.20
    last_layer_ratio: float = 0.10
    protected_layers: frozenset[int] | None = None  # None: protect the output layer (global mode)
    iterations: int = 3
    reinit: str = "rewind"

    def __post_init__(self):
        if self.mode not in ("local", "global"):
            raise ConfigError(f"prune mode must be local or global, got {self.mode!r}")
        if self.reinit not in ("rewind", "random"):
            raise ConfigError(f"reinit must be rewind or random, got {self.reinit!r}")
        for name in ("per_iter_ratio", "last_layer_ratio"):
            r = getattr(self, name)
            if not 0.0 < r < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")

    def protected(self, num_layers: int) -> frozenset[int]:
        if self.protected_layers is None:
            return frozenset({num_layers - 1})
        return frozenset(self.protected_layers)


@dataclass
class TicketRecord:
    iteration: int
    mask: Mask
    remaining: float
    source_run: str = ""


def _check(params: ParamSet, mask: Mask) -> None:
    if mask.shapes != [w.shape for w in params.weights]:
        raise DimensionError(f"mask shapes {mask.shapes} do not match weights")


def _prune_count(ratio: float, surviving: int) -> int:
    return math.floor(ratio * surviving)


def _drop_smallest(values: np.ndarray, n: int) -> np.ndarray:
    """Indices (into ``values``) of the ``n`` smallest magnitudes, earliest first on ties."""
    order = np.argsort(np.abs(values), kind="stable")
    return order[:n]


def prune_local(params: ParamSet, mask: Mask, ratio: float, last_layer_ratio: float) -> Mask:
    """Prune ``ratio`` of the surviving weights in each layer (``last_layer_ratio`` in the output layer)."""
    for r in (ratio, last_layer_ratio):
        if not 0.0 < r < 1.0:
            raise ConfigError(f"prune ratio must be in (0, 1), got {r}")
    _check(params, mask)
    last = params.num_layers - 1
    out = []
    for i, (w, m) in enumerate(zip(params.weights, mask.layers)):
        flat_m = m.ravel()
        alive = np.flatnonzero(flat_m)
        if alive.size == 0:
            raise PruneError(f"layer {i} has no surviving weights")
        n = _prune_count(last_layer_ratio if i == last else ratio, alive.size)
        new = flat_m.copy()
        new[alive[_drop_smallest(w.ravel()[alive], n)]] = False
        out.append(new.reshape(m.shape))
    return Mask(out)


def prune_global(params: ParamSet, mask: Mask, ratio: float, protected_layers: Iterable[int] = ()) -> Mask:
    """Prune ``ratio`` of the pooled surviving weights of all unprotected layers."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"prune ratio must be in (0, 1), got {ratio}")
    _check(params, mask)
    protected = set(protected_layers)
    free = [i for i in range(params.num_layers) if i not in protected]
    if not free:
        raise ConfigError("all layers are protected; nothing to prune")

    alive_idx = [np.flatnonzero(mask.layers[i].ravel()) for i in free]
    pool = np.concatenate([params.weights[i].ravel()[a] for i, a in zip(free, alive_idx)])
    if pool.size == 0:
        raise PruneError("no surviving weights left in unprotected layers")
    drop = _drop_smallest(pool, _prune_count(ratio, pool.size))

    offsets = np.cumsum([0] + [a.size for a in alive_idx])
    new_layers = [m.ravel().copy() for m in mask.layers]
    for k, i in enumerate(free):
        sel = drop[(drop >= offsets[k]) & (drop < offsets[k + 1])] - offsets[k]
        new_layers[i][alive_idx[k][sel]] = False
    return Mask(f.reshape(m.shape) for f, m in zip(new_layers, mask.layers))


def prune(params: ParamSet, mask: Mask, config: PruneConfig) -> Mask:
    if config.mode == "local":
        return prune_local(params, mask, config.per_iter_ratio, config.last_layer_ratio)
    return prune_global(params, mask, config.per_iter_ratio, config.protected(params.num_layers))


def rewind(params: ParamSet, mask: Mask) -> ParamSet:
    """Reset weights to the initial snapshot on the mask (exact zeros elsewhere) and biases to theirs."""
    _check(params, mask)
    weights = [np.where(m, w0, 0.0) for w0, m in zip(params.init_weights, mask.layers)]
    biases = [b0.copy() for b0 in params.init_biases]
    out = ParamSet(params.spec, weights, biases)
    out.init_weights = params.init_weights
    out.init_biases = params.init_biases
    return out


def random_reinit(spec: NetworkSpec, mask: Mask, seed: int) -> ParamSet:
    """Fresh initialization drawn with ``seed`` and restricted to ``mask`` (the control arm)."""
    fresh = init_network(replace(spec, seed=int(seed)))
    _check(fresh, mask)
    weights = [np.where(m, w, 0.0) for w, m in zip(fresh.weights, mask.layers)]
    return ParamSet(fresh.spec, weights, fresh.biases)


def sparsity(mask: Mask) -> float:
    """Fraction of weights still alive (biases excluded)."""
    total = sum(m.size for m in mask.layers)
    return sum(int(np.count_nonzero(m)) for m in mask.layers) / total


def apply_mask(params: ParamSet, mask: Mask) -> None:
    for w, m in zip(params.weights, mask.layers):
        np.copyto(w, 0.0, where=~m)


# --- binary mask files -------------------------------------------------------
# "LTHM" | u32 version | u32 layer count | (u32 rows, u32 cols) per layer |
# per layer: row-major bits packed LSB-first, padded to a whole byte.


def mask_to_bytes(mask: Mask) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(mask.layers))]
    parts += [struct.pack("<II", *m.shape) for m in mask.layers]
    parts += [np.packbits(m.ravel(), bitorder="little").tobytes() for m in mask.layers]
    return b"".join(parts)


def mask_from_bytes(data: bytes) -> Mask:
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError("not an LTHM mask file (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported LTHM version {version}")
    pos = 12
    if len(data) < pos + 8 * n:
        raise FormatError("truncated LTHM header")
    shapes = [struct.unpack_from("<II", data, pos + 8 * k) for k in range(n)]
    pos += 8 * n
    layers = []
    for rows, cols in shapes:
        count = rows * cols
        nbytes = (count + 7) // 8
        chunk = data[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise FormatError("truncated LTHM payload")
        bits = np.unpackbits(np.frombuffer(chunk, dtype=np.uint8), count=count, bitorder="little")
        layers.append(bits.astype(bool).reshape(rows, cols))
        pos += nbytes
    if pos != len(data):
        raise FormatError("trailing bytes after LTHM payload")
    return Mask(layers)


def save_mask(mask: Mask, path: str | Path) -> None:
    atomic_write_bytes(Path(path), mask_to_bytes(mask))


def load_mask(path: str | Path) -> Mask:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read mask file {path}: {exc}") from exc
    return mask_from_bytes(data)

