"""Semantic-consistent radius clustering and confident sample selection."""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .pcio import Clustering
from .spatial import _encode, _key_frame, build_index, cell_keys, radius_query, sq_dist

BRUTE_FORCE_LIMIT = 5000


@dataclass(frozen=True)
class BfsParams:
    radius: float = 0.05
    min_points: int = 50

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.min_points < 0:
            raise ValueError("min_points must be >= 0")


@dataclass(frozen=True)
class SelectionBand:
    lo_frac: float = 0.3
    hi_frac: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.lo_frac < self.hi_frac <= 1.0:
            raise ValueError(f"need 0 <= lo < hi <= 1, got [{self.lo_frac}, {self.hi_frac})")


# Cells of side r/sqrt(3) have a diagonal just under r, so any two points that
# share a cell are neighbors; the shrink factor absorbs rounding in floor().
_CLIQUE_SHRINK = 1.0 - 1e-9
_PAIR_BUDGET = 2_000_000
_PROBE = 8


def _half_offsets(span: int, gap_limit: float):
    """Lexicographically positive cell offsets whose cells can hold a pair < r.

    ``gap_limit`` is (r / cell)^2; the minimum squared gap between two cells
    offset by ``d`` is sum(max(|d_i| - 1, 0)^2) cell units.
    """
    out = []
    for d in itertools.product(range(-span, span + 1), repeat=3):
        if d <= (0, 0, 0):
            continue
        gap = sum(max(abs(c) - 1, 0) ** 2 for c in d)
        if gap < gap_limit:
            out.append(d)
    return np.array(out, dtype=np.int64)


def radius_components(coords, groups, r: float) -> np.ndarray:
    """Connected components of ``dist < r`` restricted to equal ``groups``.

    Returns a component id per point (arbitrary but deterministic numbering).
    Points are binned into cells small enough that each cell is a clique;
    adjacent cells are then joined if any cross pair is within ``r``.  Cell
    pairs are checked cheapest first and skipped once already connected, which
    keeps dense collapsed blobs (shifted coordinates) from going quadratic.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    groups = np.asarray(groups, dtype=np.int64).reshape(-1)
    n = len(coords)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    cell = r / math.sqrt(3.0) * _CLIQUE_SHRINK
    keys = cell_keys(coords, cell)
    origin, dims = _key_frame(keys, pad=2)
    _, grank = np.unique(groups, return_inverse=True)
    span = int(dims[0] * dims[1] * dims[2])
    if float(span) * (grank.max() + 1) >= 2.0**62:
        raise ValueError("point extent too large relative to the search radius")
    # composite (group, cell) code; neighbor cells differ by a fixed delta
    code = grank.reshape(-1) * span + _encode(keys, origin, dims)
    order = np.argsort(code, kind="stable")
    sorted_code = code[order]
    new_cell = np.ones(n, dtype=bool)
    new_cell[1:] = sorted_code[1:] != sorted_code[:-1]
    start = np.flatnonzero(new_cell)
    count = np.diff(np.append(start, n))
    m = len(start)
    cell_code = sorted_code[start]
    cell_of_point = np.empty(n, dtype=np.int64)
    cell_of_point[order] = np.cumsum(new_cell) - 1

    # candidate neighbor cell pairs
    ga, gb = [], []
    for d in _half_offsets(2, (r / cell) ** 2):
        probe = cell_code + int((d[0] * dims[1] + d[1]) * dims[2] + d[2])
        pos = np.minimum(np.searchsorted(cell_code, probe), m - 1)
        hit = cell_code[pos] == probe
        ga.append(np.flatnonzero(hit))
        gb.append(pos[hit])
    pa = np.concatenate(ga)
    pb = np.concatenate(gb)

    # probe a few points per cell first; in dense blobs most neighbor cells link here
    probe_count = np.minimum(count, _PROBE)
    edges_a: list = []
    edges_b: list = []
    step = _PAIR_BUDGET // (_PROBE * _PROBE)
    for s in range(0, len(pa), step):
        a, b = pa[s:s + step], pb[s:s + step]
        joined = _cells_touch_batch(coords, order, start, probe_count, a, b, r)
        edges_a.append(a[joined])
        edges_b.append(b[joined])

    work = count[pa] * count[pb]
    srt = np.argsort(work, kind="stable")
    pa, pb, work = pa[srt], pb[srt], work[srt]
    labels = np.arange(m)
    pos = 0
    while pos < len(pa):
        if edges_a:
            labels = _cc_labels(m, edges_a, edges_b)
        cum = np.cumsum(work[pos:])
        hi = pos + max(1, int(np.searchsorted(cum, _PAIR_BUDGET, side="right")))
        a, b = pa[pos:hi], pb[pos:hi]
        todo = labels[a] != labels[b]
        a, b = a[todo], b[todo]
        if len(a):
            if work[pos] > _PAIR_BUDGET:
                joined = np.array([_cells_touch(coords, order, start, count, x, y, r) for x, y in zip(a, b)])
            else:
                joined = _cells_touch_batch(coords, order, start, count, a, b, r)
            edges_a.append(a[joined])
            edges_b.append(b[joined])
        pos = hi
    if edges_a:
        labels = _cc_labels(m, edges_a, edges_b)
    return labels[cell_of_point]


def _cc_labels(m, edges_a, edges_b):
    a = np.concatenate(edges_a)
    b = np.concatenate(edges_b)
    graph = coo_matrix((np.ones(len(a), dtype=np.int8), (a, b)), shape=(m, m))
    return connected_components(graph, directed=False)[1]


def _cells_touch_batch(coords, order, start, count, a, b, r):
    ca, cb = count[a], count[b]
    w = ca * cb
    seg = np.repeat(np.arange(len(a)), w)
    offs = np.cumsum(w) - w
    local = np.arange(int(w.sum())) - offs[seg]
    ia = order[start[a][seg] + local // cb[seg]]
    ib = order[start[b][seg] + local % cb[seg]]
    hit = (sq_dist(coords[ia], coords[ib]) < r * r).astype(np.int8)
    return np.maximum.reduceat(hit, offs).astype(bool)


def _cells_touch(coords, order, start, count, a, b, r):
    pa = coords[order[start[a]:start[a] + count[a]]]
    pb = coords[order[start[b]:start[b] + count[b]]]
    step = max(1, _PAIR_BUDGET // len(pb))
    for s in range(0, len(pa), step):
        if np.any(sq_dist(pa[s:s + step, None, :], pb[None, :, :]) < r * r):
            return True
    return False


def _finalize(components: np.ndarray, point_idx: np.ndarray, semantic: np.ndarray, n: int, min_points: int) -> Clustering:
    """Keep components larger than ``min_points``; ids by lowest member index."""
    assignment = np.full(n, -1, dtype=np.int64)
    if len(point_idx) == 0:
        return Clustering(assignment, {})
    comp_ids, first, inverse, sizes = np.unique(
        components, return_index=True, return_inverse=True, return_counts=True
    )
    keep = sizes > min_points
    first_point = point_idx[first]
    kept = np.flatnonzero(keep)
    kept = kept[np.argsort(first_point[kept], kind="stable")]
    new_id = np.full(len(comp_ids), -1, dtype=np.int64)
    new_id[kept] = np.arange(len(kept))
    assignment[point_idx] = new_id[inverse.reshape(-1)]
    cats = {k: int(semantic[first_point[c]]) for k, c in enumerate(kept)}
    return Clustering(assignment, cats)


def _check_inputs(coords, semantic):
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    semantic = np.asarray(semantic, dtype=np.int64).reshape(-1)
    if len(coords) != len(semantic):
        raise ValueError(f"{len(coords)} coordinates but {len(semantic)} semantic labels")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates contain NaN or Inf")
    return coords, semantic


def _foreground_points(semantic, foreground):
    return np.flatnonzero(np.isin(semantic, np.array(sorted(foreground), dtype=np.int64)))


def bfs_cluster(coords, semantic, foreground, params: BfsParams = BfsParams()) -> Clustering:
    """Group foreground points into semantically pure radius-connected clusters.

    Same result as seeding a breadth-first search from every unvisited
    foreground point in index order and expanding through same-category
    neighbors closer than ``params.radius``.  Clusters must hold more than
    ``params.min_points`` points; the rest, and all background points, are -1.
    """
    coords, semantic = _check_inputs(coords, semantic)
    fg = _foreground_points(semantic, foreground)
    comps = radius_components(coords[fg], semantic[fg], params.radius)
    return _finalize(comps, fg, semantic, len(coords), params.min_points)


def bfs_cluster_queue(coords, semantic, foreground, params: BfsParams = BfsParams()) -> Clustering:
    """Point-by-point queue BFS over a grid index; slow, kept for cross-checks."""
    coords, semantic = _check_inputs(coords, semantic)
    n = len(coords)
    visited = ~np.isin(semantic, np.array(sorted(foreground), dtype=np.int64))
    index = build_index(coords, params.radius)
    comps = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        comps[i] = i
        queue = deque([i])
        while queue:
            k = queue.popleft()
            for j in radius_query(index, coords, coords[k], params.radius):
                if semantic[j] == semantic[k] and not visited[j]:
                    visited[j] = True
                    comps[j] = i
                    queue.append(j)
    fg = np.flatnonzero(comps >= 0)
    return _finalize(comps[fg], fg, semantic, n, params.min_points)


def brute_force_components(coords, semantic, foreground, params: BfsParams = BfsParams()) -> Clustering:
    """O(N^2) pairwise union-find oracle with the same contract as bfs_cluster."""
    coords, semantic = _check_inputs(coords, semantic)
    n = len(coords)
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} points, got {n}")
    fg = _foreground_points(semantic, foreground)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    r2 = params.radius * params.radius
    for k, i in enumerate(fg):
        rest = fg[k + 1:]
        d2 = sq_dist(coords[rest], coords[i])
        for j in rest[(d2 < r2) & (semantic[rest] == semantic[i])]:
            ri, rj = find(int(i)), find(int(j))
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(int(i)) for i in fg], dtype=np.int64)
    return _finalize(roots, fg, semantic, n, params.min_points)


def select_optimal_samples(clustering: Clustering, band: SelectionBand = SelectionBand()) -> Clustering:
    """Keep, per category, the clusters whose size rank falls inside ``band``.

    Clusters of a category are sorted by (size, id) ascending; the cluster at
    rank k of K is kept when lo <= k/K < hi.
    """
    assignment = clustering.assignment.copy()
    sizes = np.bincount(assignment[assignment >= 0]) if clustering.num_clusters else np.empty(0, np.int64)
    by_cat: dict = {}
    for cid, cat in clustering.categories.items():
        by_cat.setdefault(cat, []).append(cid)
    kept = {}
    for cat, ids in by_cat.items():
        ids.sort(key=lambda c: (sizes[c], c))
        total = len(ids)
        for rank, cid in enumerate(ids):
            if band.lo_frac <= rank / total < band.hi_frac:
                kept[cid] = cat
    drop = [cid for cid in clustering.categories if cid not in kept]
    if drop:
        assignment[np.isin(assignment, drop)] = -1
    scores = None
    if clustering.scores is not None:
        scores = {cid: clustering.scores[cid] for cid in kept}
    return Clustering(assignment, kept, scores)
