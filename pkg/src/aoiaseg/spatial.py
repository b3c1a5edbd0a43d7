"""Uniform-grid spatial hashing, radius search and voxel downsampling."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree


def sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance, summed x, y, z in that order.

    Every radius test in the package goes through this so that all routes
    agree bit for bit on boundary cases.
    """
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    dz = a[..., 2] - b[..., 2]
    return dx * dx + dy * dy + dz * dz


def cell_keys(coords: np.ndarray, cell_size: float) -> np.ndarray:
    return np.floor(np.asarray(coords, dtype=np.float64) / cell_size).astype(np.int64)


@dataclass
class QueryStats:
    """Counter for instrumenting radius queries."""

    cells_visited: int = 0
    candidates: int = 0


@dataclass(frozen=True)
class GridIndex:
    cell_size: float
    cells: dict = field(repr=False)
    n_points: int

    def cell_of(self, point) -> tuple:
        return tuple(int(k) for k in np.floor(np.asarray(point, dtype=np.float64) / self.cell_size))


def build_index(coords, cell_size: float) -> GridIndex:
    if not cell_size > 0:
        raise ValueError(f"cell size must be positive, got {cell_size}")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates contain NaN or Inf")
    keys = cell_keys(coords, cell_size)
    cells = {}
    if len(coords):
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
        for k, key in enumerate(map(tuple, uniq.tolist())):
            members = order[bounds[k]:bounds[k + 1]]
            members.setflags(write=False)
            cells[key] = members
    return GridIndex(float(cell_size), cells, len(coords))


def radius_query(index: GridIndex, coords, center, r: float, stats: Optional[QueryStats] = None) -> np.ndarray:
    """Indices of points strictly closer than ``r`` to ``center``, ascending."""
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    coords = np.asarray(coords, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    span = max(1, math.ceil(r / index.cell_size))
    base = index.cell_of(center)
    rng = range(-span, span + 1)
    found = []
    for d in itertools.product(rng, rng, rng):
        members = index.cells.get((base[0] + d[0], base[1] + d[1], base[2] + d[2]))
        if stats is not None:
            stats.cells_visited += 1
        if members is None:
            continue
        if stats is not None:
            stats.candidates += len(members)
        hit = sq_dist(coords[members], center) < r * r
        found.append(members[hit])
    if not found:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(found))


def voxel_downsample(coords, voxel: float) -> np.ndarray:
    """Lowest original index in every occupied voxel, sorted ascending."""
    if not voxel > 0:
        raise ValueError(f"voxel size must be positive, got {voxel}")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if len(coords) == 0:
        return np.empty(0, dtype=np.int64)
    _, first = np.unique(cell_keys(coords, voxel), axis=0, return_index=True)
    return np.sort(first)


def project_birdview(coords) -> np.ndarray:
    out = np.array(coords, dtype=np.float64, copy=True).reshape(-1, 3)
    out[:, 2] = 0.0
    return out


def _encode(keys: np.ndarray, origin: np.ndarray, dims: np.ndarray) -> np.ndarray:
    k = keys - origin
    return (k[:, 0] * dims[1] + k[:, 1]) * dims[2] + k[:, 2]


def _key_frame(*key_sets, pad: int = 1):
    allk = np.concatenate(key_sets)
    origin = allk.min(axis=0) - pad
    dims = allk.max(axis=0) - origin + pad + 1
    if float(dims[0]) * float(dims[1]) * float(dims[2]) >= 2.0**62:
        raise ValueError("point extent too large relative to the search radius")
    return origin, dims


def radius_pairs(query, ref, r: float, budget: int = 4_000_000):
    """All pairs ``(i, j)`` with ``|query[i] - ref[j]| < r``.

    Returns ``(qi, rj, d2)`` sorted by ``(qi, rj)``.  Candidates are taken from
    the 27 grid cells of side ``r`` around each query point and processed in
    batches of at most ``budget`` candidates.
    """
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1, 3)
    empty = (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64))
    if len(query) == 0 or len(ref) == 0:
        return empty
    rk = cell_keys(ref, r)
    qk = cell_keys(query, r)
    origin, dims = _key_frame(rk, qk)
    rcode = _encode(rk, origin, dims)
    order = np.argsort(rcode, kind="stable")
    ucode, start, count = np.unique(rcode[order], return_index=True, return_counts=True)

    # (query, neighbor cell) candidate list
    q_list, c_list = [], []
    for d in itertools.product((-1, 0, 1), repeat=3):
        code = _encode(qk + np.array(d), origin, dims)
        pos = np.minimum(np.searchsorted(ucode, code), len(ucode) - 1)
        hit = ucode[pos] == code
        q_list.append(np.flatnonzero(hit))
        c_list.append(pos[hit])
    qc = np.concatenate(q_list)
    cc = np.concatenate(c_list)
    work = count[cc]
    cum = np.cumsum(work)

    out_q, out_r, out_d = [], [], []
    lo = 0
    while lo < len(qc):
        base = cum[lo - 1] if lo else 0
        hi = max(lo + 1, int(np.searchsorted(cum, base + budget, side="right")))
        w = work[lo:hi]
        total = int(w.sum())
        seg = np.repeat(np.arange(hi - lo), w)
        offs = np.cumsum(w) - w
        local = np.arange(total) - offs[seg]
        qi = qc[lo:hi][seg]
        rj = order[start[cc[lo:hi]][seg] + local]
        d2 = sq_dist(query[qi], ref[rj])
        keep = d2 < r * r
        out_q.append(qi[keep])
        out_r.append(rj[keep])
        out_d.append(d2[keep])
        lo = hi
    if not out_q:
        return empty
    qi = np.concatenate(out_q)
    rj = np.concatenate(out_r)
    d2 = np.concatenate(out_d)
    srt = np.lexsort((rj, qi))
    return qi[srt], rj[srt], d2[srt]


def _first_per_query(qi, rj, d2, nq):
    """Per query: the smallest d2, lowest ref index on ties; -1 / inf when absent."""
    best = np.full(nq, -1, dtype=np.int64)
    best_d2 = np.full(nq, np.inf)
    if len(qi):
        order = np.argsort(qi, kind="stable")
        qs, rs, ds = qi[order], rj[order], d2[order]
        heads = np.flatnonzero(np.r_[True, qs[1:] != qs[:-1]])
        low = np.minimum.reduceat(ds, heads)
        owner = np.repeat(np.arange(len(heads)), np.diff(np.r_[heads, len(qs)]))
        cand = np.where(ds == low[owner], rs, np.iinfo(np.int64).max)
        best[qs[heads]] = np.minimum.reduceat(cand, heads)
        best_d2[qs[heads]] = low
    return best, best_d2


def _tree_scan(query, ref, k: int = 4):
    """Nearest neighbors through scipy's k-d tree, rescored with ``sq_dist``.

    The tree only proposes candidates: every reference point within a hair of
    the best tree distance is rescored so ties and rounding resolve exactly
    as on the grid.  Rows whose ``k`` nearest all tie fall back to a ball query.
    """
    tree = cKDTree(ref)
    k = min(k, len(ref))
    d, j = tree.query(query, k=k)
    d, j = d.reshape(len(query), k), j.reshape(len(query), k)
    reach = d[:, :1] * (1 + 1e-9) + 1e-300
    close = d <= reach
    qi = np.repeat(np.arange(len(query)), close.sum(axis=1))
    rj = j[close]
    crowded = np.flatnonzero(close[:, -1]) if k < len(ref) else np.empty(0, np.int64)
    if len(crowded):
        hits = tree.query_ball_point(query[crowded], reach[crowded, 0])
        lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
        qi = np.concatenate([qi, np.repeat(crowded, lens)])
        rj = np.concatenate([rj, np.fromiter(itertools.chain.from_iterable(hits), dtype=np.int64,
                                             count=int(lens.sum()))])
    return _first_per_query(qi, rj, sq_dist(query[qi], ref[rj]), len(query))


def nearest_neighbor(query, ref, hint_radius: Optional[float] = None, budget: int = 4_000_000):
    """Exact nearest reference point for every query point.

    Returns ``(index, d2)``; ties go to the lowest reference index.  Points
    with a neighbor inside ``hint_radius`` are resolved through the grid
    first; the rest through a k-d tree.
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1, 3)
    if len(ref) == 0:
        raise ValueError("reference set is empty")
    nq = len(query)
    best = np.full(nq, -1, dtype=np.int64)
    best_d2 = np.full(nq, np.inf)
    todo = np.arange(nq)
    if hint_radius is not None and hint_radius > 0 and nq:
        qi, rj, d2 = radius_pairs(query, ref, hint_radius, budget)
        best, best_d2 = _first_per_query(qi, rj, d2, nq)
        todo = np.flatnonzero(best < 0)
    if len(todo):
        best[todo], best_d2[todo] = _tree_scan(query[todo], ref)
    return best, best_d2
