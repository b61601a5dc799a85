"""Datasets: synthetic Gaussian blobs, CSV ingestion, splitting, mini-batching."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Tuple

import numpy as np


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    split_tag: str = "train"

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DataError(f"inputs {x.shape} and labels {y.shape} disagree")
        if x.shape[0] == 0:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(x)):
            raise DataError("inputs contain non-finite values")
        if y.min() < 0 or y.max() >= self.class_count:
            raise DataError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, split_tag=None) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.class_count,
                       split_tag or self.split_tag)


def _class_centers(k: int, d: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """k points with minimum pairwise distance ``separation`` under a random rotation."""
    if d >= k - 1:
        # regular simplex: centred one-hot vectors, edge length sqrt(2)
        base = np.eye(k) - 1.0 / k
        basis, _ = np.linalg.qr(base.T)
        verts = base @ basis[:, : k - 1] / np.sqrt(2.0)
    elif d >= 2:
        ang = 2 * np.pi * np.arange(k) / k
        verts = np.stack([np.cos(ang), np.sin(ang)], axis=1) / (2 * np.sin(np.pi / k))
    else:
        verts = (np.arange(k) - (k - 1) / 2.0)[:, None]
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    verts = np.pad(verts, ((0, 0), (0, d - verts.shape[1])))
    return separation * verts @ q.T


def synth_gaussian_blobs(k: int, n_per_class: int, d: int, separation: float = 4.0,
                         label_noise: float = 0.0, seed: int = 0) -> Dataset:
    """Unit-variance Gaussian clusters; a ``label_noise`` fraction of labels is redrawn uniformly."""
    if k < 2 or d < 1 or n_per_class < 1:
        raise DataError(f"invalid blob shape k={k}, d={d}, n_per_class={n_per_class}")
    if not 0.0 <= label_noise < 0.5:
        raise DataError(f"label noise must lie in [0, 0.5), got {label_noise}")
    rng = np.random.default_rng(seed)
    centers = _class_centers(k, d, separation, rng)
    labels = np.repeat(np.arange(k), n_per_class)
    x = centers[labels] + rng.standard_normal((labels.size, d))
    order = rng.permutation(labels.size)
    x, labels = x[order], labels[order]
    n_noisy = int(round(label_noise * labels.size))
    if n_noisy:
        idx = rng.choice(labels.size, size=n_noisy, replace=False)
        labels = labels.copy()
        labels[idx] = rng.integers(0, k, size=n_noisy)
    return Dataset(x, labels, k)


def load_csv(path, label_column: str, class_count: int) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: no label column {label_column!r} in header {header}")
        li = header.index(label_column)
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                lab = float(rec[li])
                feats = [float(v) for j, v in enumerate(rec) if j != li]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if lab != int(lab) or not 0 <= lab < class_count:
                raise DataError(f"{path}:{lineno}: label {rec[li]!r} outside [0, {class_count})")
            if not all(np.isfinite(feats)):
                raise DataError(f"{path}:{lineno}: non-finite feature")
            rows.append(feats)
            labels.append(int(lab))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(labels), class_count)


def split(ds: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test fraction must lie in (0, 1), got {test_fraction}")
    n = len(ds)
    n_test = int(round(test_fraction * n))
    if n_test == 0 or n_test == n:
        raise DataError(f"split of {n} rows at {test_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(perm[: n - n_test], "train"), ds.subset(perm[n - n_test:], "test")


def standardize(train: Dataset, *others: Dataset) -> List[Dataset]:
    """Scale every column to train-split mean 0, std 1; constant columns are only centred."""
    mean = train.inputs.mean(axis=0)
    std = train.inputs.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return [replace(ds, inputs=(ds.inputs - mean) / std) for ds in (train, *others)]


def batches(n, batch_size: int, epoch_seed) -> List[np.ndarray]:
    """Shuffled index slices covering 0..n-1 once; the last slice may be short.

    ``n`` may be a row count or a Dataset; ``epoch_seed`` an int or a Generator.
    """
    if batch_size < 1:
        raise DataError(f"batch size must be >= 1, got {batch_size}")
    if isinstance(n, Dataset):
        n = len(n)
    rng = epoch_seed if isinstance(epoch_seed, np.random.Generator) else np.random.default_rng(epoch_seed)
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
