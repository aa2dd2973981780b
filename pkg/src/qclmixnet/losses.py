"""Hybrid objective: focal variance loss plus SupCon and mined triplet terms."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PT_FLOOR = 1e-12
NORM_FLOOR = 1e-12


@dataclass
class LossConfig:
    gamma: float = 3.0
    beta1: float = 0.8
    beta2: float = 1.0
    tau: float = 0.2
    margin: float = 0.5
    alpha_loss: float = 0.5
    miner_epsilon: float = 0.1

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if not 0.0 <= self.alpha_loss <= 1.0:
            raise ValueError("alpha_loss must lie in [0, 1]")


@dataclass
class LossBreakdown:
    focal: float
    intra: float
    inter: float
    fvl: float
    supcon: float
    triplet: float
    hybrid: float
    n_triplets: int = 0
    supcon_empty: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _labels(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return y


def focal_loss(logits: Tensor, y, gamma: float = 3.0) -> Tensor:
    """Batch mean of ``(1 - p_t)^gamma * CE`` with ``p_t = exp(-CE)``."""
    logits = ad.as_tensor(logits)
    n, c = logits.shape
    y = _labels(y, c)
    ce = -ad.log_softmax(logits, axis=1)[np.arange(n), y]
    pt = ad.clip(ad.exp(-ce), PT_FLOOR, 1.0)
    weight = ad.power(1.0 - pt, gamma)
    return ad.reduce(weight * ce, "mean")


def cross_entropy(logits: Tensor, y) -> Tensor:
    logits = ad.as_tensor(logits)
    n, c = logits.shape
    y = _labels(y, c)
    return -ad.reduce(ad.log_softmax(logits, axis=1)[np.arange(n), y], "mean")


def intra_variance(emb: Tensor, y, centroids: Tensor) -> Tensor:
    """Mean squared distance of each embedding to its class centroid."""
    centroids = ad.as_tensor(centroids)
    y = _labels(y, centroids.shape[0])
    diff = ad.as_tensor(emb) - centroids[y]
    return ad.reduce(ad.reduce(ad.square(diff), "sum", axis=1), "mean")


def inter_separation(centroids: Tensor, classes_in_batch) -> Tensor:
    """``-log sigmoid`` of the mean pairwise distance between present centroids."""
    centroids = ad.as_tensor(centroids)
    classes = np.unique(np.asarray(classes_in_batch, dtype=np.int64))
    if classes.size < 2:
        return Tensor(0.0)
    j, k = np.meshgrid(classes, classes, indexing="ij")
    off = j != k
    diff = centroids[j[off]] - centroids[k[off]]
    dist = ad.sqrt(ad.reduce(ad.square(diff), "sum", axis=1))
    return -ad.log_sigmoid(ad.reduce(dist, "mean"))


def focal_variance_loss(logits, y, emb, centroids, config: LossConfig) -> tuple[Tensor, dict]:
    """``focal + beta1 * intra`` averaged over the batch, plus ``beta2 * inter``."""
    focal = focal_loss(logits, y, config.gamma)
    intra = intra_variance(emb, y, centroids)
    inter = inter_separation(centroids, y)
    total = focal + config.beta1 * intra + config.beta2 * inter
    return total, {"focal": focal, "intra": intra, "inter": inter}


def l2_normalize(emb: Tensor) -> Tensor:
    emb = ad.as_tensor(emb)
    norm = ad.sqrt(ad.reduce(ad.square(emb), "sum", axis=1, keepdims=True))
    return emb / ad.clip(norm, NORM_FLOOR, np.inf)


def supcon_loss(emb: Tensor, y, tau: float = 0.2) -> tuple[Tensor, bool]:
    """Supervised contrastive loss over cosine similarities.

    Anchors with no positive in the batch are left out of the average.
    Returns ``(loss, empty)`` where ``empty`` flags a batch with no positive
    pair at all (loss 0).
    """
    emb = ad.as_tensor(emb)
    y = np.asarray(y, dtype=np.int64)
    n = emb.shape[0]
    if n < 2:
        raise ValueError("supcon needs at least two samples")
    same = y[:, None] == y[None, :]
    not_self = ~np.eye(n, dtype=bool)
    pos = (same & not_self).astype(np.float64)
    n_pos = pos.sum(axis=1)
    has_pos = n_pos > 0
    if not has_pos.any():
        return Tensor(0.0), True
    z = l2_normalize(emb)
    sim = (z @ z.T) * (1.0 / tau)
    # row max is a constant shift; log-sum-exp is invariant to it
    shift = np.where(not_self, sim.data, -np.inf).max(axis=1, keepdims=True)
    shifted = sim - shift
    denom = ad.reduce(ad.exp(shifted) * not_self.astype(np.float64), "sum", axis=1, keepdims=True)
    log_prob = shifted - ad.log(denom)
    per_anchor = ad.reduce(log_prob * pos, "sum", axis=1)
    weights = np.where(has_pos, 1.0 / np.maximum(n_pos, 1.0), 0.0)
    return -ad.reduce(per_anchor * weights, "sum") * (1.0 / has_pos.sum()), False


def cosine_similarity(emb: np.ndarray) -> np.ndarray:
    norm = np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), NORM_FLOOR)
    z = emb / norm
    return z @ z.T


def ms_mine_triplets(emb, y, epsilon: float = 0.1) -> np.ndarray:
    """Multi-similarity mining, returned as a ``T x 3`` array of (a, p, n).

    For each anchor a negative is kept when it is more similar than the
    hardest positive minus ``epsilon``, and a positive is kept when it is
    less similar than the hardest negative plus ``epsilon``. Triplets are
    the per-anchor cross product, sorted by (a, p, n).
    """
    e = emb.data if isinstance(emb, Tensor) else np.asarray(emb, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = e.shape[0]
    sim = cosine_similarity(e)
    same = y[:, None] == y[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    has_both = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    hardest_pos = np.where(pos_mask, sim, np.inf).min(axis=1)
    hardest_neg = np.where(neg_mask, sim, -np.inf).max(axis=1)
    keep_neg = neg_mask & (sim > hardest_pos[:, None] - epsilon) & has_both[:, None]
    keep_pos = pos_mask & (sim < hardest_neg[:, None] + epsilon) & has_both[:, None]
    cube = keep_pos[:, :, None] & keep_neg[:, None, :]
    return np.argwhere(cube).astype(np.int64).reshape(-1, 3)


def triplet_loss(emb: Tensor, triplets: np.ndarray, margin: float = 0.5) -> Tensor:
    """Mean hinge on squared Euclidean distances of raw embeddings."""
    emb = ad.as_tensor(emb)
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if triplets.shape[0] == 0:
        return Tensor(0.0)
    a, p, n = triplets.T
    anchor = emb[a]
    d_ap = ad.reduce(ad.square(anchor - emb[p]), "sum", axis=1)
    d_an = ad.reduce(ad.square(anchor - emb[n]), "sum", axis=1)
    return ad.reduce(ad.relu(d_ap - d_an + margin), "mean")


def hybrid_loss(logits, emb, y, centroids, config: LossConfig) -> tuple[Tensor, LossBreakdown]:
    """``alpha * FVL + (1 - alpha) * (SupCon + Triplet)`` against the original labels."""
    fvl, parts = focal_variance_loss(logits, y, emb, centroids, config)
    sc, empty = supcon_loss(emb, y, config.tau)
    triplets = ms_mine_triplets(emb, y, config.miner_epsilon)
    tl = triplet_loss(emb, triplets, config.margin)
    a = config.alpha_loss
    total = a * fvl + (1.0 - a) * (sc + tl)
    breakdown = LossBreakdown(
        focal=parts["focal"].item(),
        intra=parts["intra"].item(),
        inter=parts["inter"].item(),
        fvl=fvl.item(),
        supcon=sc.item(),
        triplet=tl.item(),
        hybrid=total.item(),
        n_triplets=int(triplets.shape[0]),
        supcon_empty=empty,
    )
    if not all(math.isfinite(v) for v in (breakdown.fvl, breakdown.supcon, breakdown.triplet)):
        raise ad.NumericalError(f"non-finite loss component: {breakdown}")
    return total, breakdown
