"""Shape-aware multilevel objectness labels and recomposed virtual scenes."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .pcio import OBJECTNESS_LEVELS, Clustering, LabeledCloud
from .spatial import nearest_neighbor


@dataclass(frozen=True, eq=False)
class ObjectnessLabels:
    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def _coords(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(c)):
        raise ValueError("coordinates contain NaN or Inf")
    return c


def center_sample(coords) -> np.ndarray:
    """Translate a sample so that its mean sits at the origin."""
    c = _coords(coords)
    if len(c) == 0:
        raise ValueError("cannot center an empty sample")
    return c - c.mean(axis=0)


def compress_cloud(coords_centered) -> np.ndarray:
    return _coords(coords_centered) * 0.5


def quintile_ids(distances: np.ndarray) -> np.ndarray:
    """Rank by (distance, index); rank k of N falls in the 20% band b = floor(5k/N), id 4-b."""
    n = len(distances)
    order = np.lexsort((np.arange(n), distances))
    ids = np.empty(n, dtype=np.int64)
    ids[order] = OBJECTNESS_LEVELS - 1 - (OBJECTNESS_LEVELS * np.arange(n)) // max(n, 1)
    return ids


def objectness_labels(coords_centered) -> ObjectnessLabels:
    """Objectness from each point's nearest distance to the half-scale copy."""
    x = _coords(coords_centered)
    if len(x) == 0:
        raise ValueError("cannot label an empty sample")
    _, d2 = nearest_neighbor(x, compress_cloud(x))
    distances = np.sqrt(d2)
    return ObjectnessLabels(quintile_ids(distances), distances)


def objectness_labels_naive(coords_centered) -> ObjectnessLabels:
    """Centroid-distance variant, for comparison only."""
    x = _coords(coords_centered)
    if len(x) == 0:
        raise ValueError("cannot label an empty sample")
    distances = np.sqrt(x[:, 0] * x[:, 0] + x[:, 1] * x[:, 1] + x[:, 2] * x[:, 2])
    return ObjectnessLabels(quintile_ids(distances), distances)


def extract_samples(cloud: LabeledCloud, clustering: Clustering) -> list:
    """Cut every cluster out of ``cloud`` as a centered ``(coords, category)`` sample."""
    if len(cloud) != len(clustering):
        raise ValueError("cloud and clustering sizes differ")
    return [(center_sample(cloud.coords[c.indices]), c.category) for c in clustering.clusters]


# ---------------------------------------------------------------------------
# recomposed scenes


@dataclass(frozen=True)
class RecomposeParams:
    """Layout parameters for one virtual scene.

    The bird-view template holds ``grid[0]`` rows of ``grid[1]`` slots.  One
    gap is drawn per scene from ``min_gap_range`` and every surviving slot is
    dropped with ``drop_prob``.
    """

    grid: tuple = (3, 3)
    min_gap_range: tuple = (0.01, 0.10)
    drop_prob: float = 0.0
    rotate: bool = True
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.min_gap_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad min_gap_range {self.min_gap_range}")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ValueError("grid needs at least one slot")

    @property
    def slots(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass(frozen=True, eq=False)
class VirtualScene:
    cloud: LabeledCloud
    objectness: ObjectnessLabels
    min_gap: float


def yaw_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def recompose_scene(samples: Sequence, params: RecomposeParams = RecomposeParams(),
                    rng: Optional[np.random.Generator] = None) -> VirtualScene:
    """Stitch up to ``params.slots`` samples into one compact bird-view layout.

    Random draws, in order: the scene gap, then (drop, yaw) for each slot.
    Objects are placed left to right within a row and rows front to back, each
    pushed along by its own bounding box plus the gap, and rest on z = 0.
    """
    if not 1 <= len(samples) <= params.slots:
        raise ValueError(f"need 1..{params.slots} samples, got {len(samples)}")
    rng = np.random.default_rng(params.seed) if rng is None else rng
    prepared = []
    for coords, category in samples:
        c = _coords(coords)
        if len(c) == 0:
            raise ValueError("sample with no points")
        prepared.append((c, int(category)))

    lo, hi = params.min_gap_range
    gap = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    placed = []  # (slot, coords, category)
    for slot, (c, category) in enumerate(prepared):
        dropped = rng.random() < params.drop_prob
        yaw = rng.uniform(0.0, 2.0 * math.pi)
        if dropped:
            continue
        c = center_sample(c)
        if params.rotate:
            c = c @ yaw_matrix(yaw).T
        c[:, 2] -= c[:, 2].min()
        placed.append((slot, c, category))

    cols = params.grid[1]
    y_cursor = 0.0
    coords_out, sem_out, inst_out, ids_out, dist_out = [], [], [], [], []
    for row in range(params.grid[0]):
        members = [p for p in placed if p[0] // cols == row]
        if not members:
            continue
        x_cursor = 0.0
        row_top = y_cursor
        for slot, c, category in members:
            lo_xy = c[:, :2].min(axis=0)
            hi_xy = c[:, :2].max(axis=0)
            shift = np.array([x_cursor - lo_xy[0], y_cursor - lo_xy[1], 0.0])
            c = c + shift
            x_cursor = hi_xy[0] + shift[0] + gap
            row_top = max(row_top, hi_xy[1] + shift[1])
            coords_out.append(c)
            inst = len(inst_out)
            sem_out.append(np.full(len(c), category, dtype=np.int64))
            inst_out.append(np.full(len(c), inst, dtype=np.int64))
            labels = objectness_labels(center_sample(c))
            ids_out.append(labels.ids)
            dist_out.append(labels.distances)
        y_cursor = row_top + gap

    if not coords_out:
        empty = LabeledCloud(np.empty((0, 3)), np.empty(0, np.int64), np.empty(0, np.int64))
        return VirtualScene(empty, ObjectnessLabels(np.empty(0, np.int64), np.empty(0)), gap)
    cloud = LabeledCloud(np.concatenate(coords_out), np.concatenate(sem_out), np.concatenate(inst_out))
    labels = ObjectnessLabels(np.concatenate(ids_out), np.concatenate(dist_out))
    return VirtualScene(cloud, labels, gap)


def birdview_gaps(cloud: LabeledCloud) -> np.ndarray:
    """Pairwise bird-view bounding-box gaps between instances (K x K, diagonal inf)."""
    inst = cloud.instance
    ids = np.unique(inst[inst >= 0])
    boxes = np.array([
        np.concatenate([cloud.coords[inst == k, :2].min(0), cloud.coords[inst == k, :2].max(0)])
        for k in ids
    ]).reshape(-1, 4)
    k = len(ids)
    gaps = np.full((k, k), np.inf)
    for a in range(k):
        for b in range(k):
            if a != b:
                gx = max(boxes[b, 0] - boxes[a, 2], boxes[a, 0] - boxes[b, 2])
                gy = max(boxes[b, 1] - boxes[a, 3], boxes[a, 1] - boxes[b, 3])
                gaps[a, b] = max(gx, gy)
    return gaps
