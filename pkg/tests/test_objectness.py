from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoiaseg import shapes
from aoiaseg.objectness import (
    RecomposeParams,
    birdview_gaps,
    center_sample,
    compress_cloud,
    extract_samples,
    objectness_labels,
    objectness_labels_naive,
    quintile_ids,
    recompose_scene,
    yaw_matrix,
)
from aoiaseg.pcio import Clustering, LabeledCloud, write_cloud

LINE = np.array([[-2.0, 0, 0], [-1.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])


def nn_oracle(x):
    half = x * 0.5
    return np.array([min(math.dist(p, q) for q in half) for p in x])


def test_center_sample():
    assert center_sample([[1, 1, 1]]).tolist() == [[0, 0, 0]]
    assert center_sample([[0, 0, 0], [2, 0, 0]]).tolist() == [[-1, 0, 0], [1, 0, 0]]
    with pytest.raises(ValueError):
        center_sample(np.empty((0, 3)))


def test_center_sample_mean_is_zero(rng):
    out = center_sample(rng.normal(5, 3, size=(777, 3)))
    assert np.all(np.abs(out.mean(axis=0)) < 1e-9)


def test_compress_halves():
    assert compress_cloud(LINE)[:, 0].tolist() == [-1, -0.5, 0, 0.5, 1]
    assert np.array_equal(compress_cloud(compress_cloud(LINE)), LINE / 4)


def test_line_fixture():
    labels = objectness_labels(LINE)
    assert labels.distances.tolist() == [1, 0, 0, 0, 1]
    assert labels.ids.tolist() == [1, 4, 3, 2, 0]


def test_naive_line_fixture():
    labels = objectness_labels_naive(LINE)
    assert labels.distances.tolist() == [2, 1, 0, 1, 2]
    # stable (distance, index) ranking: 2, 1, 3, 0, 4
    assert labels.ids.tolist() == [1, 3, 4, 2, 0]


def test_single_point_is_most_central():
    assert objectness_labels([[0.0, 0, 0]]).ids.tolist() == [4]
    assert objectness_labels_naive([[3.0, 0, 0]]).ids.tolist() == [4]


def test_shell_ties_fall_back_to_index(rng):
    v = rng.normal(size=(10, 3))
    shell = v / np.linalg.norm(v, axis=1, keepdims=True)
    ids = objectness_labels_naive(shell).ids
    # near-equal norms still rank by index when they tie exactly
    exact = np.ones((10, 3)) / math.sqrt(3)
    assert objectness_labels_naive(exact).ids.tolist() == [4, 4, 3, 3, 2, 2, 1, 1, 0, 0]
    assert sorted(ids.tolist()) == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7, 11, 99, 1000])
def test_quintile_counts_balanced(n):
    ids = quintile_ids(np.arange(n, dtype=float))
    counts = np.bincount(ids, minlength=5)
    assert np.all(np.abs(counts - n / 5) < 1)
    # non-increasing with rank
    assert np.all(np.diff(ids) <= 0)


def test_distances_match_brute_force(rng):
    x = center_sample(rng.normal(size=(300, 3)) * [1, 0.3, 2])
    labels = objectness_labels(x)
    assert np.allclose(labels.distances, nn_oracle(x), rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10))
def test_scale_covariance(seed, s):
    rng = np.random.default_rng(seed)
    x = center_sample(rng.normal(size=(int(rng.integers(5, 200)), 3)))
    a = objectness_labels(x)
    b = objectness_labels(x * s)
    assert np.array_equal(a.ids, b.ids)
    assert np.allclose(b.distances, a.distances * s, rtol=1e-9)


def test_isometry_invariance(rng):
    x = center_sample(shapes.chair(rng, 800))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    moved = x @ q.T + rng.normal(size=3)
    assert np.array_equal(objectness_labels(center_sample(moved)).ids, objectness_labels(x).ids)


def test_extract_samples_centers_each_cluster():
    coords = np.array([[0.0, 0, 0], [2, 0, 0], [10, 10, 10], [12, 10, 10]])
    cloud = LabeledCloud(coords, [4, 4, 6, 6])
    samples = extract_samples(cloud, Clustering(np.array([0, 0, 1, 1]), {0: 4, 1: 6}))
    assert [cat for _, cat in samples] == [4, 6]
    assert samples[1][0].tolist() == [[-1, 0, 0], [1, 0, 0]]


def _unit_square(density=400):
    rng = np.random.default_rng(0)
    return shapes.box_surface(rng, (0, 0, 0), (1, 1, 0.5), density)


def test_two_unit_samples_are_pushed_apart():
    sample = _unit_square()
    params = RecomposeParams(grid=(1, 2), min_gap_range=(0.05, 0.05), rotate=False)
    scene = recompose_scene([(sample, 4), (sample, 4)], params)
    inst = scene.cloud.instance
    centers = [scene.cloud.coords[inst == k].mean(axis=0) for k in (0, 1)]
    assert centers[1][0] - centers[0][0] >= 1.05 - 1e-9
    assert scene.min_gap == 0.05


def test_drop_all_gives_empty_scene():
    scene = recompose_scene([(_unit_square(), 4)] * 3, RecomposeParams(drop_prob=1.0))
    assert len(scene.cloud) == 0


def test_recompose_is_deterministic(tmp_path, rng):
    samples = [shapes.random_sample(rng, 300) for _ in range(9)]
    a = recompose_scene(samples, RecomposeParams(seed=7))
    b = recompose_scene(samples, RecomposeParams(seed=7))
    write_cloud(a.cloud, tmp_path / "a.pcseg")
    write_cloud(b.cloud, tmp_path / "b.pcseg")
    assert (tmp_path / "a.pcseg").read_bytes() == (tmp_path / "b.pcseg").read_bytes()


@pytest.mark.parametrize("seed", range(6))
def test_bird_view_gaps_respect_min_gap(seed):
    rng = np.random.default_rng(seed)
    samples = [shapes.random_sample(rng, 300) for _ in range(int(rng.integers(1, 10)))]
    scene = recompose_scene(samples, RecomposeParams(drop_prob=0.2), rng)
    if len(scene.cloud):
        gaps = birdview_gaps(scene.cloud)
        off = ~np.eye(len(gaps), dtype=bool)
        assert np.all(gaps[off] >= scene.min_gap - 1e-9)


def test_scene_objectness_is_per_instance(rng):
    samples = [shapes.random_sample(rng, 300) for _ in range(4)]
    scene = recompose_scene(samples, RecomposeParams(grid=(2, 2)), rng)
    for k in range(4):
        idx = scene.cloud.instance == k
        want = objectness_labels(center_sample(scene.cloud.coords[idx])).ids
        assert np.array_equal(scene.objectness.ids[idx], want)


def test_recompose_rejects_bad_input():
    with pytest.raises(ValueError):
        recompose_scene([], RecomposeParams())
    with pytest.raises(ValueError):
        recompose_scene([(np.empty((0, 3)), 4)], RecomposeParams())
    with pytest.raises(ValueError):
        RecomposeParams(drop_prob=1.5)


def test_yaw_is_a_rotation():
    m = yaw_matrix(0.7)
    assert np.allclose(m @ m.T, np.eye(3))
    assert m[2].tolist() == [0, 0, 1]
