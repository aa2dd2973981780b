"""kNN-guided sample-aware dynamic mixup within a mini-batch."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class MixupConfig:
    alpha_beta: float = 0.4
    k_neighbors: int = 5
    enabled: bool = True

    def __post_init__(self):
        if self.alpha_beta <= 0:
            raise ValueError("alpha_beta must be positive")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")


@dataclass
class MixedBatch:
    x_mix: np.ndarray
    y_orig: np.ndarray
    y_mix: np.ndarray
    lambdas: np.ndarray
    neighbors: np.ndarray
    partners: np.ndarray


def knn_neighbors(batch: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other rows (Euclidean), ties to the lower index.

    Returns a ``B x k`` integer array ordered by increasing distance.
    """
    batch = np.asarray(batch, dtype=np.float64)
    n = batch.shape[0]
    if n <= k:
        raise ValueError(f"batch of {n} rows cannot supply {k} neighbours")
    # direct differences, not the |a|^2 + |b|^2 - 2ab expansion: equal
    # distances must compare equal for the tie rule
    diff = batch[:, None, :] - batch[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def _standard_gamma(shape: float, rng: np.random.Generator) -> float:
    """Marsaglia-Tsang Gamma(shape, 1); shape < 1 via the U^(1/shape) boost."""
    if shape < 1.0:
        u = rng.random()
        return _standard_gamma(shape + 1.0, rng) * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = rng.random()
        if u < 1.0 - 0.0331 * x**4:
            return d * v
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    """One Beta(alpha, alpha) draw from two Gamma(alpha, 1) variates."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    while True:
        a = _standard_gamma(alpha, rng)
        b = _standard_gamma(alpha, rng)
        if a + b > 0.0:
            return a / (a + b)


def mixup_batch(
    x: np.ndarray,
    y: np.ndarray,
    config: MixupConfig,
    rng: np.random.Generator,
    num_classes: int | None = None,
) -> MixedBatch:
    """Mix every anchor with one of its in-batch nearest neighbours.

    Each anchor draws its own lambda and keeps the dominant share
    ``max(lambda, 1 - lambda)``. Soft labels mix with a random permutation
    partner; the loss never reads them.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    c = int(num_classes if num_classes is not None else y.max() + 1)
    onehot = np.eye(c)[y]
    if not config.enabled:
        ones = np.ones(n)
        ident = np.arange(n)
        return MixedBatch(x.copy(), y, onehot, ones, ident, ident)
    nbrs = knn_neighbors(x, config.k_neighbors)
    pick = rng.integers(0, config.k_neighbors, size=n)
    neighbors = nbrs[np.arange(n), pick]
    partners = rng.permutation(n)
    lam = np.array([sample_beta(config.alpha_beta, rng) for _ in range(n)])
    lam = np.maximum(lam, 1.0 - lam)
    x_mix = lam[:, None] * x + (1.0 - lam[:, None]) * x[neighbors]
    y_mix = lam[:, None] * onehot + (1.0 - lam[:, None]) * onehot[partners]
    return MixedBatch(x_mix, y, y_mix, lam, neighbors, partners)


def random_pair_mixup(x: np.ndarray, lambdas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Classic mixup with uniformly random partners (comparison baseline)."""
    n = x.shape[0]
    partner = (np.arange(n) + rng.integers(1, n, size=n)) % n
    return lambdas[:, None] * x + (1.0 - lambdas[:, None]) * x[partner]
