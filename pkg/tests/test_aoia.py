from __future__ import annotations

import math

import numpy as np
import pytest

from aoiaseg.aoia import (
    UNDERFLOW,
    AoiaParams,
    absorb_boundary,
    argmax_assign,
    aoia_infer,
    cluster_influence,
    influence_table,
    influence_weight,
    split_core_boundary,
)
from aoiaseg.cluster import BfsParams, bfs_cluster
from aoiaseg.pcio import LabeledCloud, SignalSet
from aoiaseg.signals import oracle_signals

from conftest import make_scene


def influence_oracle(pts, x, eps):
    return sum(math.exp(-math.dist(p, x) ** 2 / (2 * eps * eps)) for p in pts) / len(pts)


def test_split():
    core, boundary = split_core_boundary([4, 3, 2, 1, 0], 1)
    assert core.tolist() == [0, 1, 2, 3]
    assert boundary.tolist() == [4]
    core, boundary = split_core_boundary([4, -1, 0, 2], 3)
    assert core.tolist() == [0] and boundary.tolist() == [2, 3]


def test_influence_values():
    assert abs(influence_weight([0, 0, 0], [1, 0, 0], 1.0) - math.exp(-0.5)) < 1e-15
    assert influence_weight([0, 0, 0], [0, 0, 0], 0.05) == 1.0
    pts = [[0, 0, 0], [1, 0, 0], [0, 2, 0]]
    assert abs(cluster_influence(pts, [0.5, 0.5, 0], 1.5) - influence_oracle(pts, [0.5, 0.5, 0], 1.5)) < 1e-15


def test_hand_fixtures_at_eps_3():
    assert round(influence_weight([0, 0, 0], [3, 0, 0], 3.0), 6) == 0.606531
    assert round(cluster_influence([[3, 0, 0]], [0, 0, 0], 3.0), 6) == 0.606531
    two = cluster_influence([[1, 0, 0], [0, 5, 0]], [0, 0, 0], 3.0)
    assert abs(two - 0.5 * (math.exp(-1 / 18) + math.exp(-25 / 18))) < 1e-15
    assert round(two, 6) == 0.597656


def test_a_versus_b_absorption():
    # A: one point at distance 3; B: points at distances 1 and 5
    coords = np.array([[0.0, 0, 0], [-3.0, 0, 0], [1.0, 0, 0], [0, 0, 5.0]])
    out = absorb_boundary(coords, [-1, 0, 1, 1], [0], 3.0)
    assert out.tolist() == [0]
    assert absorb_boundary(coords, [-1, 0, 1, 1], [0], 3.0, dense=True).tolist() == [0]


def test_weight_decreases_with_distance(rng):
    for _ in range(200):
        a, b, c = rng.normal(size=(3, 3))
        eps = float(rng.uniform(0.1, 3))
        near, far = sorted([b, c], key=lambda p: math.dist(a, p))
        assert influence_weight(a, near, eps) >= influence_weight(a, far, eps)


def test_duplication_invariance(rng):
    pts = rng.normal(size=(37, 3))
    x = rng.normal(size=3)
    assert cluster_influence(pts, x, 0.7) == cluster_influence(np.concatenate([pts, pts]), x, 0.7)
    assert cluster_influence(pts, x, 0.7) == cluster_influence(pts[::-1], x, 0.7)


def test_table_matches_oracle(rng):
    pts = rng.normal(size=(60, 3))
    labels = rng.permutation(np.arange(60) % 4)
    targets = rng.normal(size=(9, 3))
    table = influence_table(pts, labels, targets, 0.8)
    for t in range(9):
        for k in range(4):
            assert abs(table[t, k] - influence_oracle(pts[labels == k], targets[t], 0.8)) < 1e-12


def test_argmax_ties_go_to_lowest_id():
    table = np.array([[0.5, 0.5], [0.9, 0.1]])
    assert argmax_assign(table, np.array([7, 3])).tolist() == [3, 7]


def test_small_dense_cluster_beats_large_diffuse_one():
    # A: 2 points near x; B: 50 points far off plus 1 at the same distance as A's nearest
    a = np.array([[1.0, 0, 0], [1.2, 0, 0]])
    b = np.concatenate([[[-1.0, 0, 0]], np.full((49, 3), [-5.0, 0, 0])])
    coords = np.concatenate([[[0.0, 0, 0]], a, b])
    assignment = np.array([-1] + [0] * 2 + [1] * 50)
    out = absorb_boundary(coords, assignment, [0], 1.0)
    assert out.tolist() == [0]
    assert influence_oracle(a, [0, 0, 0], 1.0) > influence_oracle(b, [0, 0, 0], 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_pruned_absorption_equals_dense(seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 3, size=(6, 3))
    sizes = rng.integers(5, 80, 6)
    core = np.concatenate([c + rng.normal(scale=0.2, size=(n, 3)) for c, n in zip(centers, sizes)])
    cluster = np.repeat(np.arange(6), sizes)
    boundary_pts = rng.uniform(-1, 4, size=(300, 3))
    coords = np.concatenate([core, boundary_pts])
    assignment = np.concatenate([cluster, np.full(300, -1)])
    boundary = np.arange(len(core), len(coords))
    for eps in (0.05, 0.3, 3.0):
        fast = absorb_boundary(coords, assignment, boundary, eps)
        dense = absorb_boundary(coords, assignment, boundary, eps, dense=True)
        assert np.array_equal(fast, dense)
        table = influence_table(core, cluster, boundary_pts, eps)
        want = np.argmax(table, axis=1)
        ok = table.max(axis=1) >= UNDERFLOW
        assert np.array_equal(dense[ok], want[ok])


def test_underflow_uses_nearest_core_point():
    coords = np.array([[0.0, 0, 0], [10.0, 0, 0], [3.0, 0, 0], [8.0, 0, 0]])
    out = absorb_boundary(coords, [0, 1, -1, -1], [2, 3], 0.05)
    assert out.tolist() == [0, 1]


def test_coincident_boundary_point():
    coords = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0]])
    assert absorb_boundary(coords, [0, 1, -1], [2], 0.05).tolist() == [1]


def test_no_core_and_single_cluster():
    coords = np.zeros((3, 3))
    assert absorb_boundary(coords, [-1, -1, -1], [0, 1], 1.0).tolist() == [-1, -1]
    assert absorb_boundary(coords + [[0, 0, 0], [50, 0, 0], [0, 0, 0]], [5, -1, -1], [1, 2], 0.05).tolist() == [5, 5]


def _grid_blob(center, side=0.2, step=0.02):
    ax = np.arange(0, side + 1e-9, step) - side / 2
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    return g + center


def _bridge_scene():
    a = _grid_blob([0.0, 0, 0])
    b = _grid_blob([1.0, 0, 0])
    bridge = np.stack([np.arange(0.12, 0.89, 0.02), np.zeros(39), np.zeros(39)], axis=1)
    coords = np.concatenate([a, b, bridge])
    n = len(coords)
    inst = np.concatenate([np.zeros(len(a)), np.ones(len(b)), (bridge[:, 0] > 0.5).astype(float)]).astype(int)
    obj = np.concatenate([np.full(len(a) + len(b), 4), np.zeros(len(bridge), dtype=int)])
    cloud = LabeledCloud(coords, np.full(n, 4), inst)
    return cloud, SignalSet(np.zeros((n, 3)), obj), len(a) + len(b)


def test_bridge_is_cut(config):
    cloud, sig, n_blob = _bridge_scene()
    bfs = bfs_cluster(cloud.coords, cloud.semantic, config.foreground, BfsParams(0.05, 50))
    assert bfs.num_clusters == 1
    out = aoia_infer(cloud, None, sig, config, AoiaParams(epsilon=0.05))
    assert out.num_clusters == 2
    assert np.array_equal(out.assignment, cloud.instance)


def test_boundary_points_never_change_core_labels(config):
    cloud, sig, n_blob = _bridge_scene()
    full = aoia_infer(cloud, None, sig, config, AoiaParams(epsilon=0.05))
    keep = np.arange(n_blob)
    trimmed = aoia_infer(LabeledCloud(cloud.coords[keep], cloud.semantic[keep]), None,
                         SignalSet(sig.offsets[keep], sig.objectness[keep]), config, AoiaParams(epsilon=0.05))
    assert np.array_equal(trimmed.assignment, full.assignment[keep])


def test_threshold_zero_matches_bfs(config):
    scene, gt = make_scene(3)
    sig = SignalSet(np.zeros((len(scene.cloud), 3)), np.zeros(len(scene.cloud), dtype=int))
    out = aoia_infer(scene.cloud, None, sig, config, AoiaParams(objectness_threshold=0, subsample_trigger=10**9))
    ref = bfs_cluster(scene.cloud.coords, scene.cloud.semantic, config.foreground, BfsParams(0.05, 50))
    assert out == ref.canonical()


def test_no_foreground_gives_empty(config):
    cloud = LabeledCloud(np.zeros((5, 3)), [0, 1, 0, 1, 0])
    sig = SignalSet(np.zeros((5, 3)), np.full(5, 4))
    assert aoia_infer(cloud, None, sig, config).num_clusters == 0


def test_oracle_signals_recover_instances(config):
    scene, gt = make_scene(11)
    out = aoia_infer(scene.cloud, None, oracle_signals(scene.cloud), config, AoiaParams(epsilon=0.05))
    assert out == gt.canonical()


def test_subsampled_run_labels_every_point(config):
    scene, gt = make_scene(5)
    params = AoiaParams(subsample_trigger=100, subsample_voxel=0.03, min_core_cluster=5)
    out = aoia_infer(scene.cloud, None, oracle_signals(scene.cloud), config, params)
    fg = np.isin(scene.cloud.semantic, list(config.foreground))
    assert np.all(out.assignment[fg] >= 0)
    assert out.num_clusters == gt.num_clusters


def test_thread_count_does_not_matter(config, monkeypatch):
    scene, _ = make_scene(8, kinds=None)
    sig = oracle_signals(scene.cloud)
    monkeypatch.setenv("AOIA_THREADS", "1")
    one = aoia_infer(scene.cloud, None, sig, config)
    monkeypatch.setenv("AOIA_THREADS", "4")
    assert aoia_infer(scene.cloud, None, sig, config) == one
    monkeypatch.setenv("AOIA_THREADS", "x")
    with pytest.raises(ValueError):
        aoia_infer(scene.cloud, None, sig, config)


def test_param_validation(config):
    with pytest.raises(ValueError):
        AoiaParams(epsilon=0)
    with pytest.raises(ValueError):
        AoiaParams(objectness_threshold=5)
    cloud = LabeledCloud(np.zeros((2, 3)), [4, 4])
    with pytest.raises(ValueError):
        aoia_infer(cloud, None, SignalSet(offsets=np.zeros((2, 3))), config)
