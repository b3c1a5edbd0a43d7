"""Command-line entry point: ``aoiaseg <command> ...``.

Stage 1 pseudo labels come from BFS clustering plus sample selection; a
network is then trained on them outside this tool, and its predicted offsets
and objectness feed stage 2 (AOIA).  ``synth`` builds the recomposed training
scenes used for the objectness/offset heads.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import shapes
from .aoia import AoiaParams, aoia_infer
from .cluster import BfsParams, SelectionBand, bfs_cluster, select_optimal_samples
from .evaluation import evaluate
from .objectness import (
    RecomposeParams,
    center_sample,
    extract_samples,
    objectness_labels,
    objectness_labels_naive,
    recompose_scene,
)
from .pcio import (
    Clustering,
    SignalSet,
    default_config,
    read_cloud,
    read_config,
    read_labels,
    read_signals,
    read_supervoxels,
    write_cloud,
    write_clustering,
    write_signals,
)
from .signals import NoiseModel, oracle_offsets, perturb, smooth_by_supervoxel
from .spatial import project_birdview

PROG = "aoiaseg"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one diagnostic line, no usage dump
        self.exit(2, f"{self.prog}: error: {message}\n")


def _pair(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return lo, hi


def _config(args):
    return read_config(args.config) if args.config else default_config()


def _write_report(text: str, out) -> None:
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = args.min_gap_range
    params = RecomposeParams(grid=(3, 3), min_gap_range=(lo, hi), drop_prob=args.drop_prob)
    pool = None
    if args.source:
        pool = []
        for path in args.source:
            cloud = read_cloud(path)
            pool.extend(extract_samples(cloud, read_labels(path, _config(args).foreground)))
        if not pool:
            raise ValueError("source clouds contain no foreground instances")
    width = max(5, len(str(max(args.num_scenes - 1, 0))))
    for i in range(args.num_scenes):
        rng = np.random.default_rng([args.seed, i])
        if pool is None:
            samples = [shapes.random_sample(rng, args.density) for _ in range(params.slots)]
        else:
            picks = rng.integers(len(pool), size=params.slots)
            samples = [pool[k] for k in picks.tolist()]
        scene = recompose_scene(samples, params, rng)
        signals = SignalSet(oracle_offsets(scene.cloud), scene.objectness.ids)
        noise = NoiseModel(args.offset_sigma, args.flip_prob, int(rng.integers(2**63 - 1)))
        signals = perturb(signals, noise)
        stem = out / f"scene_{i:0{width}d}"
        write_cloud(scene.cloud, stem.with_suffix(".pcseg"))
        write_signals(signals, stem.with_suffix(".sig"))


def _bfs_params(args) -> BfsParams:
    return BfsParams(radius=args.radius, min_points=args.min_points)


def _stage1(cloud, config, args) -> Clustering:
    coords = project_birdview(cloud.coords) if args.birdview else cloud.coords
    clusters = bfs_cluster(coords, cloud.semantic, config.foreground, _bfs_params(args))
    return select_optimal_samples(clusters, SelectionBand(*args.band))


def cmd_pseudo_label(args) -> None:
    config = _config(args)
    cloud = read_cloud(args.cloud)
    if cloud.semantic is None:
        raise ValueError(f"{args.cloud}: semantic labels required")
    if args.stage == 1:
        result = _stage1(cloud, config, args)
    else:
        if not args.signals:
            raise ValueError("stage 2 needs --signals")
        signals = read_signals(args.signals)
        params = AoiaParams(
            core_radius=args.radius,
            objectness_threshold=args.obj_threshold,
            epsilon=args.epsilon,
            subsample_voxel=args.subsample_voxel,
            subsample_trigger=args.subsample_trigger,
            birdview=args.birdview,
            min_core_cluster=args.min_points,
        )
        result = aoia_infer(cloud, None, signals, config, params)
    write_clustering(result, args.out)


def cmd_cluster(args) -> None:
    config = _config(args)
    cloud = read_cloud(args.cloud)
    if cloud.semantic is None:
        raise ValueError(f"{args.cloud}: semantic labels required")
    coords = project_birdview(cloud.coords) if args.birdview else cloud.coords
    write_clustering(bfs_cluster(coords, cloud.semantic, config.foreground, _bfs_params(args)), args.out)


def cmd_objectness(args) -> None:
    cloud = read_cloud(args.cloud)
    label = objectness_labels_naive if args.naive else objectness_labels
    ids = np.full(len(cloud), -1, dtype=np.int64)
    if cloud.instance is None:
        if len(cloud):
            ids = label(center_sample(cloud.coords)).ids
    else:
        for k in np.unique(cloud.instance[cloud.instance >= 0]).tolist():
            idx = np.flatnonzero(cloud.instance == k)
            ids[idx] = label(center_sample(cloud.coords[idx])).ids
    write_signals(SignalSet(objectness=ids), args.out)


def cmd_eval(args) -> None:
    config = _config(args)
    pred = read_labels(args.pred, config.foreground)
    gt = read_labels(args.gt, config.foreground)
    report = evaluate(pred, gt, config)
    if args.json:
        text = report.to_json()
    else:
        text = report.to_keyvalue() + "\n\n" + report.table(config.names)
    _write_report(text, args.out)


def cmd_smooth(args) -> None:
    signals = read_signals(args.signals)
    if signals.sem_scores is None:
        raise ValueError(f"{args.signals}: no sem:<C> columns to smooth")
    partition = read_supervoxels(args.supervoxels)
    smoothed = smooth_by_supervoxel(signals.sem_scores, partition)
    write_signals(SignalSet(signals.offsets, signals.objectness, smoothed), args.out)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Weakly supervised point-cloud instance segmentation tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="category config (key=value); defaults to the 20-class layout")
        p.add_argument("--out", required=out_required, help="output path")

    def grouping(p):
        p.add_argument("--radius", type=float, default=0.05, help="grouping radius in meters (default 0.05)")
        p.add_argument("--min-points", type=int, default=50,
                       help="clusters need more than this many points (default 50)")
        p.add_argument("--birdview", action="store_true", help="drop the vertical axis before grouping")

    p = sub.add_parser("synth", help="write recomposed virtual scenes with signal targets")
    common(p)
    p.add_argument("--num-scenes", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-gap-range", type=_pair, default=(0.01, 0.10), metavar="LO,HI")
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--density", type=float, default=2000.0, help="points per square meter of procedural shapes")
    p.add_argument("--offset-sigma", type=float, default=0.0, help="Gaussian noise on written offsets")
    p.add_argument("--flip-prob", type=float, default=0.0, help="probability of re-drawing an objectness id")
    p.add_argument("--source", nargs="*", help="xyzsi clouds to cut samples from instead of procedural shapes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pseudo-label", help="stage 1 (BFS + selection) or stage 2 (AOIA) pseudo labels")
    p.add_argument("cloud")
    common(p)
    grouping(p)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--signals", help="sig file with off and obj columns (stage 2)")
    p.add_argument("--band", type=_pair, default=(0.3, 0.7), metavar="LO,HI", help="kept rank band (stage 1)")
    p.add_argument("--epsilon", type=float, default=3.0, help="influence kernel width (stage 2)")
    p.add_argument("--obj-threshold", type=int, default=1, help="lowest core objectness id (stage 2)")
    p.add_argument("--subsample-voxel", type=float, default=0.05)
    p.add_argument("--subsample-trigger", type=int, default=20000)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("cluster", help="plain BFS clustering")
    p.add_argument("cloud")
    common(p)
    grouping(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("objectness", help="objectness ids per instance (or for the whole cloud)")
    p.add_argument("cloud")
    common(p)
    p.add_argument("--naive", action="store_true", help="rank by distance to the centroid instead")
    p.set_defaults(func=cmd_objectness)

    p = sub.add_parser("eval", help="AP / precision / recall of a prediction against ground truth")
    p.add_argument("pred", help="clu file or xyzsi cloud")
    p.add_argument("gt", help="clu file or xyzsi cloud")
    common(p, out_required=False)
    p.add_argument("--json", action="store_true", help="emit one JSON object instead of text")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("smooth", help="average semantic scores within supervoxels")
    p.add_argument("signals", help="sig file with sem:<C> columns")
    p.add_argument("supervoxels", help="svx file")
    common(p)
    p.set_defaults(func=cmd_smooth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"{PROG}: error: {message}", file=sys.stderr)
        return 1
    return 0
