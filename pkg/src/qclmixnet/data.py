"""CSV ingestion, stratified splitting and standardisation."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .rng import make_rng, STREAM_SPLIT

logger = logging.getLogger(__name__)

MISSING_TOKENS = {"", "?", "na", "nan", "null", "none"}


class DataError(ValueError):
    """Malformed or unusable dataset input."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    label_map: dict[str, int]
    feature_names: list[str]
    name: str = ""
    dropped_rows: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.label_map)

    @property
    def num_features(self) -> int:
        return self.X.shape[1]


@dataclass
class Split:
    train: np.ndarray
    test: np.ndarray
    seed: int
    ratio: float
    warnings: list[str] = field(default_factory=list)


def load_csv(path: Union[str, os.PathLike], label_column: Optional[str] = None, name: Optional[str] = None) -> Dataset:
    """Read a comma-separated file with one header row.

    Features must be numeric. The label column (default: last) is encoded by
    order of first appearance. Rows with missing cells are dropped and
    counted.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: empty dataset")
    if label_column in (None, "", "last"):
        label_idx = len(header) - 1
    elif label_column in header:
        label_idx = header.index(label_column)
    else:
        raise DataError(f"{path}: unknown label column {label_column!r}")
    feature_idx = [i for i in range(len(header)) if i != label_idx]
    if not feature_idx:
        raise DataError(f"{path}: no feature columns")

    features, labels = [], []
    dropped = 0
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, found {len(row)}")
        cells = [c.strip() for c in row]
        if any(c.lower() in MISSING_TOKENS for c in cells):
            dropped += 1
            continue
        values = []
        for i in feature_idx:
            try:
                values.append(float(cells[i]))
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric value {cells[i]!r} in feature column "
                    f"{header[i]!r}; categorical features are not supported"
                ) from None
        features.append(values)
        labels.append(cells[label_idx])
    if dropped:
        logger.warning("%s: dropped %d row(s) with missing values", path, dropped)
    if not features:
        raise DataError(f"{path}: empty dataset")
    label_map: dict[str, int] = {}
    for lab in labels:
        label_map.setdefault(lab, len(label_map))
    X = np.array(features, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite feature values")
    y = np.array([label_map[lab] for lab in labels], dtype=np.int64)
    return Dataset(
        X=X,
        y=y,
        label_map=label_map,
        feature_names=[header[i] for i in feature_idx],
        name=name or os.path.splitext(os.path.basename(path))[0],
        dropped_rows=dropped,
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(y, ratio: float = 0.2, seed: int = 42, stream: int = STREAM_SPLIT) -> Split:
    """Per-class seeded shuffle; the first round(ratio * n_c) go to test.

    Classes are visited in increasing label order with one generator.
    A class with fewer than two samples stays entirely in train.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    y = np.asarray(y, dtype=np.int64)
    rng = make_rng(seed, stream)
    train, test, warnings = [], [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if idx.size < 2:
            msg = f"class {c} has {idx.size} sample(s); kept in train only"
            logger.warning(msg)
            warnings.append(msg)
            train.append(idx)
            continue
        idx = idx[rng.permutation(idx.size)]
        n_test = _round_half_up(ratio * idx.size)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    train_idx = np.sort(np.concatenate(train)) if train else np.array([], dtype=np.int64)
    test_idx = np.sort(np.concatenate(test)) if test else np.array([], dtype=np.int64)
    return Split(train_idx, test_idx, seed, ratio, warnings)


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        safe = np.where(self.std > 0, self.std, 1.0)
        out = (np.asarray(X, dtype=np.float64) - self.mean) / safe
        out[:, self.std == 0] = 0.0
        return out


def fit_scaler(X: np.ndarray) -> Scaler:
    X = np.asarray(X, dtype=np.float64)
    std = X.std(axis=0)
    if np.any(std == 0):
        logger.warning("constant feature column(s) %s mapped to 0", np.flatnonzero(std == 0).tolist())
    return Scaler(X.mean(axis=0), std)


def standardize(train_X: np.ndarray, test_X: np.ndarray):
    """Scale both matrices with statistics fitted on ``train_X`` only."""
    scaler = fit_scaler(train_X)
    return scaler.transform(train_X), scaler.transform(test_X), scaler.mean, scaler.std


def imbalance_ratio(y) -> float:
    """Largest class count over smallest class count."""
    counts = np.bincount(np.asarray(y, dtype=np.int64))
    counts = counts[counts > 0]
    if counts.size < 2:
        raise ValueError("imbalance ratio needs at least two classes")
    return float(counts.max() / counts.min())


def read_manifest(path: Union[str, os.PathLike]) -> list[tuple[str, str, Optional[str]]]:
    """Lines of ``name,path,label_column``; blank lines and # comments skipped.

    Relative dataset paths resolve against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            row = [c.strip() for c in row]
            if row[:2] == ["name", "path"]:
                continue
            if len(row) not in (2, 3):
                raise DataError(f"{path}:{lineno}: expected name,path,label_column")
            label = row[2] if len(row) == 3 and row[2] else None
            entries.append((row[0], os.path.join(base, row[1]), label))
    return entries
