from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoiaseg.spatial import (
    QueryStats,
    build_index,
    cell_keys,
    nearest_neighbor,
    project_birdview,
    radius_pairs,
    radius_query,
    sq_dist,
    voxel_downsample,
)


def brute_radius(coords, center, r):
    return [i for i, p in enumerate(coords) if sq_dist(p, np.asarray(center)) < r * r]


def test_single_point_cell():
    idx = build_index([[0.0, 0.0, 0.0]], 0.05)
    assert list(idx.cells) == [(0, 0, 0)]
    idx = build_index([[0.0, 0.0, 0.0], [0.049, 0.0, 0.0]], 0.05)
    assert len(idx.cells) == 1


def test_cell_membership_matches_floor_division(rng):
    coords = rng.uniform(-1, 1, size=(1000, 3))
    idx = build_index(coords, 0.07)
    seen = np.zeros(len(coords), dtype=int)
    for key, members in idx.cells.items():
        for i in members:
            assert tuple(int(v) for v in np.floor(coords[i] / 0.07)) == key
            seen[i] += 1
    assert np.all(seen == 1)


def test_bad_cell_size():
    with pytest.raises(ValueError):
        build_index([[0, 0, 0]], 0.0)


def test_self_query_with_tiny_radius():
    coords = np.array([[0.0, 0, 0], [1e-3, 0, 0]])
    idx = build_index(coords, 0.05)
    assert radius_query(idx, coords, coords[0], 1e-9).tolist() == [0]


def test_radius_is_strict():
    coords = np.array([[0.0, 0, 0], [0.06, 0, 0], [0.05, 0, 0]])
    idx = build_index(coords, 0.05)
    assert radius_query(idx, coords, coords[0], 0.05).tolist() == [0]
    assert radius_query(idx, coords, coords[1], 0.05).tolist() == [1, 2]


def test_radius_query_matches_brute_force(rng):
    coords = rng.uniform(0, 0.5, size=(500, 3))
    idx = build_index(coords, 0.07)
    for c in coords[:60]:
        assert radius_query(idx, coords, c, 0.07).tolist() == brute_radius(coords, c, 0.07)


def test_query_visits_27_cells_when_cell_covers_radius(rng):
    coords = rng.uniform(0, 1, size=(300, 3))
    idx = build_index(coords, 0.1)
    stats = QueryStats()
    radius_query(idx, coords, coords[0], 0.08, stats)
    assert stats.cells_visited == 27


@settings(max_examples=80, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.integers(1, 300),
    st.sampled_from([0.01, 0.05, 0.2]),
    st.sampled_from([0.02, 0.05, 0.3]),
)
def test_radius_query_property(seed, n, r, cell):
    rng = np.random.default_rng(seed)
    coords = np.round(rng.uniform(-0.3, 0.3, size=(n, 3)), 2)  # coarse grid forces boundary ties
    idx = build_index(coords, cell)
    c = coords[rng.integers(n)]
    assert radius_query(idx, coords, c, r).tolist() == brute_radius(coords, c, r)


def test_voxel_downsample_keeps_lowest_index():
    coords = np.array([[0.01, 0, 0], [0.2, 0, 0], [0.02, 0.01, 0], [0.4, 0, 0]])
    assert voxel_downsample(coords, 0.05).tolist() == [0, 1, 3]
    assert voxel_downsample(coords[[2, 0]], 0.05).tolist() == [0]


def test_voxel_downsample_matches_grouping_oracle(rng):
    coords = rng.uniform(-1, 1, size=(2000, 3))
    reps = {}
    for i, key in enumerate(map(tuple, cell_keys(coords, 0.1))):
        reps.setdefault(key, i)
    assert voxel_downsample(coords, 0.1).tolist() == sorted(reps.values())


def test_birdview_projection():
    assert project_birdview([[1.0, 2.0, 3.0]]).tolist() == [[1.0, 2.0, 0.0]]
    flat = np.array([[0.5, -1.0, 0.0]])
    assert np.array_equal(project_birdview(flat), flat)
    assert np.array_equal(project_birdview(project_birdview([[1, 2, 3]])), project_birdview([[1, 2, 3]]))


def test_birdview_connects_stacked_fragments():
    coords = np.array([[0.0, 0, 0], [0.0, 0, 0.3]])
    idx = build_index(coords, 0.05)
    assert radius_query(idx, coords, coords[0], 0.05).tolist() == [0]
    flat = project_birdview(coords)
    idx = build_index(flat, 0.05)
    assert radius_query(idx, flat, flat[0], 0.05).tolist() == [0, 1]


def test_radius_pairs_matches_brute_force(rng):
    q = rng.uniform(0, 1, size=(80, 3))
    ref = rng.uniform(0, 1, size=(120, 3))
    qi, rj, d2 = radius_pairs(q, ref, 0.2, budget=50)
    want = [(i, j) for i in range(80) for j in range(120) if sq_dist(q[i], ref[j]) < 0.04]
    assert list(zip(qi.tolist(), rj.tolist())) == want
    assert np.array_equal(d2, sq_dist(q[qi], ref[rj]))
    assert len(radius_pairs(q, ref[:0], 0.2)[0]) == 0


@pytest.mark.parametrize("hint", [None, 0.05, 1.0])
def test_nearest_neighbor_exact_with_ties(rng, hint):
    ref = np.round(rng.uniform(0, 1, size=(300, 3)), 1)
    q = np.round(rng.uniform(0, 1, size=(200, 3)), 1)
    d2 = sq_dist(q[:, None], ref[None])
    idx, best = nearest_neighbor(q, ref, hint_radius=hint)
    assert idx.tolist() == np.argmin(d2, axis=1).tolist()
    assert np.array_equal(best, d2.min(axis=1))


def test_nearest_neighbor_all_duplicates():
    ref = np.zeros((10, 3))
    idx, d2 = nearest_neighbor(np.ones((3, 3)), ref)
    assert idx.tolist() == [0, 0, 0]
    assert d2.tolist() == [3.0, 3.0, 3.0]
    with pytest.raises(ValueError):
        nearest_neighbor(np.ones((1, 3)), np.empty((0, 3)))
