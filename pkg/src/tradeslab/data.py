"""Synthetic blob datasets, CSV I/O, stratified splits and batching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .rng import Rng


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    k: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DataError(f"features {x.shape} and labels {y.shape} disagree")
        for name in ("domain_lo", "domain_hi"):
            bound = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, np.broadcast_to(bound, (x.shape[1],)).copy())
        if self.k < 2:
            raise DataError("need at least two classes")
        if y.size and (y.min() < 0 or y.max() >= self.k):
            raise DataError(f"labels must lie in [0, {self.k})")
        if x.size and (np.any(x < self.domain_lo) or np.any(x > self.domain_hi)):
            raise DataError("features fall outside the domain bounds")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.domain_lo, self.domain_hi, self.k)

    def clamp(self, x):
        return np.clip(x, self.domain_lo, self.domain_hi)


def gen_blobs(k: int, per_class: int, d: int, spread: float, rng: Rng) -> Dataset:
    """k Gaussian clusters, features min-max rescaled into [0, 1]^d.

    Samples are ordered class by class.
    """
    if k < 2 or d < 2:
        raise DataError("gen_blobs needs k >= 2 and d >= 2")
    centers = rng.uniform((k, d))
    labels = np.repeat(np.arange(k), per_class)
    x = centers[labels] + spread * rng.normal((k * per_class, d))
    lo, hi = x.min(axis=0), x.max(axis=0)
    width = np.where(hi > lo, hi - lo, 1.0)
    x = np.clip((x - lo) / width, 0.0, 1.0)
    return Dataset(x, labels, np.zeros(d), np.ones(d), k)


def load_csv(path) -> Dataset:
    """Rows of ``d`` floats followed by an integer label; no header."""
    rows, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 3:
                raise DataError(f"{path}:{lineno}: expected at least 2 features and a label")
            if rows and len(row) - 1 != len(rows[0]):
                raise DataError(f"{path}:{lineno}: expected {len(rows[0]) + 1} fields, got {len(row)}")
            try:
                feats = [float(v) for v in row[:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in feats) or label < 0:
                raise DataError(f"{path}:{lineno}: non-finite feature or negative label")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataError(f"{path}: empty file")
    x = np.array(rows)
    y = np.array(labels, dtype=np.int64)
    return Dataset(x, y, x.min(axis=0), x.max(axis=0), max(int(y.max()) + 1, 2))


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for feats, label in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in feats] + [int(label)])


def _allocate(count: int, fractions) -> list:
    raw = [count * f for f in fractions]
    alloc = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - alloc[i]), i))
    for i in order[: count - sum(alloc)]:
        alloc[i] += 1
    return alloc


def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Stratified, seed-deterministic train/val/test partition.

    A split with a zero fraction comes back empty; any other split must
    hold at least ``k`` samples.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = Rng(seed)
    parts = [[], [], []]
    for c in range(ds.k):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.child(c).permutation(idx.size)]
        start = 0
        for j, cnt in enumerate(_allocate(idx.size, fractions)):
            parts[j].extend(idx[start:start + cnt].tolist())
            start += cnt
    out = []
    for name, frac, idx in zip(("train", "val", "test"), fractions, parts):
        if frac > 0 and len(idx) < ds.k:
            raise DataError(f"{name} split has {len(idx)} samples, fewer than k={ds.k}")
        out.append(ds.subset(np.sort(np.array(idx, dtype=np.int64))))
    return tuple(out)


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    seed: int
    epoch: int


def batches(ds: Dataset, plan: BatchPlan) -> list:
    """Index arrays covering ``ds`` exactly once, shuffled per (seed, epoch)."""
    if plan.batch_size < 1:
        raise DataError("batch_size must be positive")
    if plan.batch_size > ds.n:
        raise DataError(f"batch_size {plan.batch_size} exceeds dataset size {ds.n}")
    order = Rng(plan.seed).child(plan.epoch).permutation(ds.n)
    return [order[i:i + plan.batch_size] for i in range(0, ds.n, plan.batch_size)]


def num_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)

