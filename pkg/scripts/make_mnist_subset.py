#!/usr/bin/env python3
"""Write a class-balanced MNIST train/test pair as IDX files.

Source: the 5000-image MNIST sample bundled with mlxtend (500 per digit),
for machines without the full dataset. With the full MNIST files at hand,
point the config's data.* paths at them directly (and use data.train_limit).

    python scripts/make_mnist_subset.py --out data/mnist5k --test-per-class 100
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from lthcal.data import load_idx, write_idx
from lthcal.rng import make_rng, SUBSET

FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def mlxtend_digits() -> tuple[np.ndarray, np.ndarray]:
    import mlxtend

    path = Path(mlxtend.__file__).parent / "data" / "data" / "mnist_5k.csv.gz"
    table = np.loadtxt(path, delimiter=",")
    return table[:, :-1].astype(np.uint8).reshape(-1, 28, 28), table[:, -1].astype(np.uint8)


def split(images, labels, test_per_class: int, seed: int):
    rng = make_rng(seed, SUBSET)
    train_idx, test_idx = [], []
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        test_idx.append(idx[:test_per_class])
        train_idx.append(idx[test_per_class:])
    tr, te = np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))
    return (images[tr], labels[tr]), (images[te], labels[te])


def build(out: Path, test_per_class: int = 100, seed: int = 0) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    if all((out / f).exists() for f in FILES):
        return out
    images, labels = mlxtend_digits()
    (xtr, ytr), (xte, yte) = split(images, labels, test_per_class, seed)
    write_idx(xtr, ytr, out / FILES[0], out / FILES[1])
    write_idx(xte, yte, out / FILES[2], out / FILES[3])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = build(Path(args.out), args.test_per_class, args.seed)
    tr = load_idx(out / FILES[0], out / FILES[1])
    te = load_idx(out / FILES[2], out / FILES[3])
    print(f"{out}: train {len(tr)} x {tr.dim}, test {len(te)}, classes {tr.num_classes}")


if __name__ == "__main__":
    main()
