"""Oracle network-output stand-ins, noise injection, losses and score smoothing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectness import center_sample, objectness_labels
from .pcio import OBJECTNESS_LEVELS, LabeledCloud, SignalSet
from .spatial import cell_keys


@dataclass(frozen=True)
class NoiseModel:
    offset_sigma: float = 0.0
    objectness_flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.offset_sigma < 0:
            raise ValueError("offset_sigma must be >= 0")
        if not 0.0 <= self.objectness_flip_prob <= 1.0:
            raise ValueError("objectness_flip_prob must lie in [0, 1]")


def _instances(cloud: LabeledCloud) -> np.ndarray:
    if cloud.instance is None:
        raise ValueError("cloud has no instance labels")
    return cloud.instance


def oracle_offsets(cloud: LabeledCloud) -> np.ndarray:
    """Per-point vector to the mean of its instance; zero for instance -1."""
    inst = _instances(cloud)
    offsets = np.zeros((len(cloud), 3))
    mask = inst >= 0
    if not mask.any():
        return offsets
    ids, inverse = np.unique(inst[mask], return_inverse=True)
    counts = np.bincount(inverse, minlength=len(ids)).astype(np.float64)
    pts = cloud.coords[mask]
    centroids = np.stack(
        [np.bincount(inverse, weights=pts[:, k], minlength=len(ids)) / counts for k in range(3)], axis=1
    )
    offsets[mask] = centroids[inverse] - pts
    return offsets


def oracle_objectness(cloud: LabeledCloud) -> np.ndarray:
    """Objectness ids computed independently inside each ground-truth instance."""
    inst = _instances(cloud)
    out = np.full(len(cloud), -1, dtype=np.int64)
    for k in np.unique(inst[inst >= 0]):
        idx = np.flatnonzero(inst == k)
        out[idx] = objectness_labels(center_sample(cloud.coords[idx])).ids
    return out


def oracle_signals(cloud: LabeledCloud) -> SignalSet:
    return SignalSet(offsets=oracle_offsets(cloud), objectness=oracle_objectness(cloud))


def perturb(signals: SignalSet, noise: NoiseModel) -> SignalSet:
    """Add Gaussian offset noise and re-draw objectness ids uniformly.

    Draw order from ``default_rng(noise.seed)``: offset noise (N x 3), flip
    trials (N), replacement ids (N).  Background ids (-1) are never touched.
    """
    rng = np.random.default_rng(noise.seed)
    n = len(signals)
    offsets = signals.offsets
    if offsets is not None:
        jitter = rng.normal(0.0, 1.0, size=(n, 3))
        if noise.offset_sigma > 0:
            offsets = offsets + noise.offset_sigma * jitter
    objectness = signals.objectness
    if objectness is not None:
        flip = rng.random(n) < noise.objectness_flip_prob
        replacement = rng.integers(0, OBJECTNESS_LEVELS, size=n)
        flip &= objectness >= 0
        if flip.any():
            objectness = np.where(flip, replacement, objectness)
    return SignalSet(offsets, objectness, signals.sem_scores)


def _pairwise_sum(values: np.ndarray) -> float:
    """Fixed-shape pairwise tree reduction (independent of numpy's blocking)."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return 0.0
    while len(v) > 1:
        if len(v) % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0])


def offset_loss(pred, gt, mask) -> float:
    """Masked L1 offset error minus masked mean cosine similarity.

    The cosine term counts 0 for points where either vector has zero length.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    mask = np.asarray(mask, dtype=np.float64).reshape(-1)
    if not (len(pred) == len(gt) == len(mask)):
        raise ValueError("pred, gt and mask lengths differ")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("offsets contain NaN or Inf")
    total = _pairwise_sum(mask)
    if total <= 0:
        raise ValueError("mask selects no points; mean is undefined")
    l1 = np.abs(pred - gt).sum(axis=1)
    pn = np.linalg.norm(pred, axis=1)
    gn = np.linalg.norm(gt, axis=1)
    ok = (pn > 0) & (gn > 0)
    cos = np.zeros(len(pred))
    cos[ok] = (pred[ok] / pn[ok, None] * (gt[ok] / gn[ok, None])).sum(axis=1)
    return _pairwise_sum(l1 * mask) / total - _pairwise_sum(cos * mask) / total


def cross_entropy_loss(scores, labels, ignore: int = -1) -> float:
    """Mean negative log-softmax of the labelled class over non-ignored points."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if scores.ndim != 2 or len(scores) != len(labels):
        raise ValueError("scores must be (N, C) with N labels")
    keep = labels != ignore
    if not keep.any():
        raise ValueError("every point is ignored")
    s = scores[keep]
    y = labels[keep]
    if np.any((y < 0) | (y >= s.shape[1])):
        raise ValueError("label outside score columns")
    top = s.max(axis=1, keepdims=True)
    log_z = top[:, 0] + np.log(np.exp(s - top).sum(axis=1))
    nll = log_z - s[np.arange(len(y)), y]
    return _pairwise_sum(nll) / len(y)


def smooth_by_supervoxel(scores, partition) -> np.ndarray:
    """Replace each row by the mean row of its supervoxel."""
    scores = np.asarray(scores, dtype=np.float64)
    partition = np.asarray(partition, dtype=np.int64).reshape(-1)
    if scores.ndim != 2 or len(scores) != len(partition):
        raise ValueError(f"{len(scores)} score rows but {len(partition)} supervoxel ids")
    if len(partition) == 0:
        return scores.copy()
    if np.any(partition < 0):
        raise ValueError("supervoxel ids must be >= 0")
    ids, inverse = np.unique(partition, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(len(ids)))
    sums = np.add.reduceat(scores[order], starts, axis=0)
    counts = np.diff(np.append(starts, len(order)))
    means = sums / counts[:, None]
    # groups whose rows already agree keep them verbatim (exact idempotence)
    lo = np.minimum.reduceat(scores[order], starts, axis=0)
    hi = np.maximum.reduceat(scores[order], starts, axis=0)
    uniform = lo == hi
    means[uniform] = lo[uniform]
    return means[inverse]


def grid_supervoxels(coords, voxel: float) -> np.ndarray:
    """Supervoxels from a plain voxel grid; ids dense in order of first appearance."""
    if not voxel > 0:
        raise ValueError(f"voxel size must be positive, got {voxel}")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if len(coords) == 0:
        return np.empty(0, dtype=np.int64)
    _, first, inverse = np.unique(cell_keys(coords, voxel), axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse]
