"""Asymmetric object inference: core grouping plus influence-map absorption.

Per foreground category, points whose objectness id reaches the threshold are
core points; they are shifted by their predicted offsets and grouped by radius
connectivity.  Remaining (boundary) points never shape the core clusters; each
is absorbed afterwards by the core cluster exerting the largest influence

    I_k(x) = (1 / |P_k|) * sum_{i in P_k} exp(-|x_i - x|^2 / (2 eps^2))

measured on the original (unshifted) coordinates.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cluster import radius_components
from .pcio import OBJECTNESS_LEVELS, CategoryConfig, Clustering, LabeledCloud, SignalSet
from .spatial import nearest_neighbor, project_birdview, sq_dist, voxel_downsample

UNDERFLOW = 1e-30
_TABLE_BUDGET = 2_000_000
# relative safety margin for the bound-based shortcut in absorb_boundary
_BOUND_MARGIN = 1e-9


@dataclass(frozen=True)
class AoiaParams:
    core_radius: float = 0.05
    objectness_threshold: int = 1
    epsilon: float = 3.0
    subsample_voxel: float = 0.05
    subsample_trigger: int = 20000
    birdview: bool = False
    min_core_cluster: int = 50

    def __post_init__(self):
        for name in ("core_radius", "epsilon", "subsample_voxel"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.objectness_threshold < OBJECTNESS_LEVELS:
            raise ValueError("objectness_threshold must lie in 0..4")
        if self.subsample_trigger < 0 or self.min_core_cluster < 0:
            raise ValueError("counts must be non-negative")


def split_core_boundary(objectness, threshold: int):
    """Indices with id >= threshold (core) and 0 <= id < threshold (boundary)."""
    obj = np.asarray(objectness, dtype=np.int64).reshape(-1)
    core = np.flatnonzero(obj >= threshold)
    boundary = np.flatnonzero((obj >= 0) & (obj < threshold))
    return core, boundary


def influence_weight(xi, xj, epsilon: float) -> float:
    xi = np.asarray(xi, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    return float(np.exp(-float(sq_dist(xi, xj)) / (2.0 * epsilon * epsilon)))


def cluster_influence(cluster_coords, target, epsilon: float) -> float:
    """Size-normalized Gaussian influence of one core cluster on ``target``.

    Summed with ``math.fsum`` so the value does not depend on point order and
    duplicating every point leaves it bit-identical.
    """
    pts = np.asarray(cluster_coords, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("core cluster is empty")
    w = np.exp(-sq_dist(pts, np.asarray(target, dtype=np.float64)) / (2.0 * epsilon * epsilon))
    return math.fsum(w.tolist()) / len(pts)


def influence_table(core_coords, core_labels, targets, epsilon: float) -> np.ndarray:
    """Influence of each core cluster (columns, labels 0..K-1) on each target row."""
    core_coords = np.asarray(core_coords, dtype=np.float64).reshape(-1, 3)
    core_labels = np.asarray(core_labels, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    k = int(core_labels.max()) + 1 if len(core_labels) else 0
    table = np.zeros((len(targets), k))
    if k == 0 or len(targets) == 0:
        return table
    order = np.argsort(core_labels, kind="stable")
    pts = core_coords[order]
    starts = np.searchsorted(core_labels[order], np.arange(k))
    sizes = np.bincount(core_labels, minlength=k).astype(np.float64)
    if np.any(sizes == 0):
        raise ValueError("core labels must be dense 0..K-1")
    scale = -1.0 / (2.0 * epsilon * epsilon)
    step = max(1, _TABLE_BUDGET // len(pts))
    for s in range(0, len(targets), step):
        w = np.exp(sq_dist(targets[s:s + step, None, :], pts[None, :, :]) * scale)
        table[s:s + step] = np.add.reduceat(w, starts, axis=1) / sizes
    return table


def argmax_assign(table: np.ndarray, cluster_ids: np.ndarray) -> np.ndarray:
    """Column of the largest influence per row; ties go to the lowest cluster id."""
    order = np.argsort(cluster_ids, kind="stable")
    return np.asarray(cluster_ids)[order][np.argmax(table[:, order], axis=1)]


def _box_sq_dist(points, lo, hi):
    d = np.maximum(np.maximum(lo[None] - points[:, None], points[:, None] - hi[None]), 0.0)
    return d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2


def absorb_boundary(coords, core_assignment, boundary, epsilon: float, dense: bool = False) -> np.ndarray:
    """Attach each boundary point to the core cluster with the largest influence.

    ``core_assignment`` gives a cluster id per point (-1 = not a core point).
    Ties go to the lowest cluster id.  When even the largest influence is
    below 1e-30 the point joins the cluster of its nearest core point.  Points
    stay -1 when there is no core cluster at all.

    Unless ``dense`` is set, a point whose nearest core cluster provably wins
    (its influence lower bound beats every other cluster's bounding-box upper
    bound) is assigned without evaluating the full table row.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    core_assignment = np.asarray(core_assignment, dtype=np.int64).reshape(-1)
    boundary = np.asarray(boundary, dtype=np.int64).reshape(-1)
    out = np.full(len(boundary), -1, dtype=np.int64)
    core = np.flatnonzero(core_assignment >= 0)
    if len(boundary) == 0 or len(core) == 0:
        return out
    cluster_ids, dense_labels = np.unique(core_assignment[core], return_inverse=True)
    dense_labels = dense_labels.reshape(-1)
    if len(cluster_ids) == 1:
        out[:] = cluster_ids[0]
        return out
    core_pts = coords[core]
    targets = coords[boundary]
    scale = 1.0 / (2.0 * epsilon * epsilon)

    nn, nn_d2 = nearest_neighbor(targets, core_pts, hint_radius=min(2.0 * epsilon, 0.1))
    nearest_cluster = dense_labels[nn]
    todo = np.arange(len(boundary))
    if not dense:
        k = len(cluster_ids)
        sizes = np.bincount(dense_labels, minlength=k)
        lo = np.full((k, 3), np.inf)
        hi = np.full((k, 3), -np.inf)
        np.minimum.at(lo, dense_labels, core_pts)
        np.maximum.at(hi, dense_labels, core_pts)
        upper = np.exp(-_box_sq_dist(targets, lo, hi) * scale)
        lower = np.exp(-nn_d2 * scale) / sizes[nearest_cluster]
        upper[np.arange(len(targets)), nearest_cluster] = 0.0
        sure = (upper.max(axis=1) < lower * (1 - _BOUND_MARGIN)) & (lower > UNDERFLOW * (1 + _BOUND_MARGIN))
        out[sure] = cluster_ids[nearest_cluster[sure]]
        todo = np.flatnonzero(~sure)
    if len(todo):
        table = influence_table(core_pts, dense_labels, targets[todo], epsilon)
        best = argmax_assign(table, np.arange(len(cluster_ids)))
        under = table.max(axis=1) < UNDERFLOW
        best[under] = nearest_cluster[todo[under]]
        out[todo] = cluster_ids[best]
    return out


def _thread_count() -> int:
    env = os.environ.get("AOIA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"AOIA_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _infer_category(coords, offsets, objectness, idx, params: AoiaParams) -> np.ndarray:
    """Local cluster labels (-1 = ungrouped) for the category points ``idx``."""
    labels = np.full(len(idx), -1, dtype=np.int64)
    work = np.arange(len(idx))
    if len(idx) > params.subsample_trigger:
        work = voxel_downsample(coords[idx], params.subsample_voxel)
    w_idx = idx[work]
    core, boundary = split_core_boundary(objectness[w_idx], params.objectness_threshold)
    if len(core) == 0:
        return labels

    shifted = coords[w_idx[core]] + offsets[w_idx[core]]
    if params.birdview:
        shifted = project_birdview(shifted)
    comps = radius_components(shifted, np.zeros(len(core), dtype=np.int64), params.core_radius)
    ids, inverse, sizes = np.unique(comps, return_inverse=True, return_counts=True)
    keep = sizes > params.min_core_cluster
    new = np.full(len(ids), -1, dtype=np.int64)
    new[keep] = np.arange(int(keep.sum()))
    core_lab = new[inverse.reshape(-1)]

    w_labels = np.full(len(w_idx), -1, dtype=np.int64)
    w_labels[core] = core_lab
    if keep.any() and len(boundary):
        w_labels[boundary] = absorb_boundary(coords[w_idx], w_labels, boundary, params.epsilon)

    if len(work) == len(idx):
        return w_labels
    rep = w_idx[w_labels >= 0]
    if len(rep) == 0:
        return labels
    reach = params.subsample_voxel * math.sqrt(3.0) * (1 + 1e-9)
    # every point shares a voxel with some representative, so one always lies within reach
    nearest, _ = nearest_neighbor(coords[idx], coords[w_idx], hint_radius=reach)
    return w_labels[nearest]


def aoia_infer(cloud: LabeledCloud, semantic, signals: SignalSet, config: CategoryConfig,
               params: AoiaParams = AoiaParams()) -> Clustering:
    """Instance labels from semantic ids, predicted offsets and objectness.

    ``semantic`` may be ground truth or pseudo labels; when None the cloud's
    own semantic column is used.  Categories are processed independently,
    in parallel up to ``AOIA_THREADS`` workers.
    """
    coords = cloud.coords
    n = len(coords)
    if semantic is None:
        semantic = cloud.semantic
    if semantic is None:
        raise ValueError("no semantic labels given")
    semantic = np.asarray(semantic, dtype=np.int64).reshape(-1)
    if signals.offsets is None or signals.objectness is None:
        raise ValueError("AOIA needs both offsets and objectness signals")
    if not (len(semantic) == len(signals) == n):
        raise ValueError(f"length mismatch: {n} points, {len(semantic)} labels, {len(signals)} signals")
    offsets, objectness = signals.offsets, signals.objectness

    cats = [c for c in np.unique(semantic).tolist() if c in config.foreground]
    jobs = []
    for cat in cats:
        idx = np.flatnonzero((semantic == cat) & (objectness >= 0))
        if len(idx):
            jobs.append((cat, idx))

    def run(job):
        cat, idx = job
        return _infer_category(coords, offsets, objectness, idx, params)

    workers = min(_thread_count(), max(1, len(jobs)))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    assignment = np.full(n, -1, dtype=np.int64)
    categories = {}
    next_id = 0
    for (cat, idx), local in zip(jobs, results):
        mask = local >= 0
        if not mask.any():
            continue
        assignment[idx[mask]] = local[mask] + next_id
        k = int(local.max()) + 1
        for j in range(k):
            categories[next_id + j] = cat
        next_id += k
    # drop ids of core clusters that lost every point during label transfer
    present = set(np.unique(assignment[assignment >= 0]).tolist())
    categories = {c: v for c, v in categories.items() if c in present}
    return Clustering(assignment, categories).canonical()
