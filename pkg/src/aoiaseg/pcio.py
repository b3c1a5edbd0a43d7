"""Data model and text file formats for clouds, signals, clusterings and configs.

File formats (UTF-8, LF line endings):

``pcseg v1 <N> <cols>``
    cols is one of ``xyz``, ``xyzs``, ``xyzsi``; N rows follow.
``sig v1 <N> <cols>``
    cols is a comma-separated ordered subset of ``off``, ``obj``, ``sem:<C>``
    (or ``none``); each row carries the fields in declared order.
``clu v1 <N>``
    N rows of ``<instance id> <category id>``; ``-1 -1`` for ungrouped points.
``svx v1 <N>``
    N rows holding one supervoxel id each.

Config files are ``key=value`` lines (``num_categories``, ``foreground``,
optional ``names``); ``#`` starts a comment.

Reals are written with 9 significant digits.  Values that already have at
most 9 significant digits survive a write/read cycle unchanged, float32 values
come back as doubles that cast to the same float32, and re-serializing a parsed
file reproduces it byte for byte.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

OBJECTNESS_LEVELS = 5


class FormatError(ValueError):
    """Malformed file contents; carries the 1-based line number when known."""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _as_coords(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=np.float64)
    if c.size == 0:
        c = c.reshape(0, 3)
    if c.ndim != 2 or c.shape[1] != 3:
        raise ValueError(f"coordinates must have shape (N, 3), got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("coordinates contain NaN or Inf")
    return c


def _as_ids(values, n: int, name: str) -> np.ndarray:
    a = np.asarray(values)
    if a.size == 0:
        a = a.reshape(0)
    if a.ndim != 1 or len(a) != n:
        raise ValueError(f"{name} must have length {n}, got shape {a.shape}")
    if a.dtype.kind == "f":
        if not np.all(np.isfinite(a)) or np.any(a != np.round(a)):
            raise ValueError(f"{name} must hold integers")
    return a.astype(np.int64)


@dataclass(frozen=True, eq=False)
class LabeledCloud:
    """Point coordinates in meters with optional per-point labels.

    ``semantic`` holds category ids (-1 = unlabeled) and ``instance`` holds
    instance ids (-1 = none/ignore).
    """

    coords: np.ndarray
    semantic: Optional[np.ndarray] = None
    instance: Optional[np.ndarray] = None

    def __post_init__(self):
        coords = _as_coords(self.coords)
        n = len(coords)
        object.__setattr__(self, "coords", _frozen(coords))
        for name in ("semantic", "instance"):
            value = getattr(self, name)
            if value is not None:
                ids = _as_ids(value, n, name)
                if np.any(ids < -1):
                    raise ValueError(f"{name} ids must be >= -1")
                object.__setattr__(self, name, _frozen(ids))
        if self.instance is not None and self.semantic is None:
            raise ValueError("instance labels require semantic labels")

    def __len__(self) -> int:
        return len(self.coords)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledCloud):
            return NotImplemented
        return (
            np.array_equal(self.coords, other.coords)
            and _opt_equal(self.semantic, other.semantic)
            and _opt_equal(self.instance, other.instance)
        )


@dataclass(frozen=True, eq=False)
class SignalSet:
    """Per-point stand-ins for network outputs.

    offsets: (N, 3) predicted shift toward the instance centroid.
    objectness: (N,) ids in 0..4, -1 for background.
    sem_scores: (N, C) semantic scores.
    """

    offsets: Optional[np.ndarray] = None
    objectness: Optional[np.ndarray] = None
    sem_scores: Optional[np.ndarray] = None

    def __post_init__(self):
        n = None
        if self.offsets is not None:
            off = _as_coords(self.offsets)
            n = len(off)
            object.__setattr__(self, "offsets", _frozen(off))
        if self.objectness is not None:
            obj = np.asarray(self.objectness)
            m = len(obj) if obj.ndim == 1 else -1
            obj = _as_ids(obj, n if n is not None else m, "objectness")
            if np.any((obj < -1) | (obj >= OBJECTNESS_LEVELS)):
                raise ValueError("objectness ids must lie in {-1, 0..4}")
            n = len(obj)
            object.__setattr__(self, "objectness", _frozen(obj))
        if self.sem_scores is not None:
            sem = np.asarray(self.sem_scores, dtype=np.float64)
            if sem.ndim != 2 or (n is not None and sem.shape[0] != n):
                raise ValueError(f"sem_scores must have shape ({n}, C), got {sem.shape}")
            if not np.all(np.isfinite(sem)):
                raise ValueError("sem_scores contain NaN or Inf")
            n = sem.shape[0]
            object.__setattr__(self, "sem_scores", _frozen(sem))

    def __len__(self) -> int:
        for a in (self.offsets, self.objectness, self.sem_scores):
            if a is not None:
                return len(a)
        return 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignalSet):
            return NotImplemented
        return (
            _opt_equal(self.offsets, other.offsets)
            and _opt_equal(self.objectness, other.objectness)
            and _opt_equal(self.sem_scores, other.sem_scores)
        )


class Cluster(NamedTuple):
    id: int
    indices: np.ndarray
    category: int


@dataclass(frozen=True, eq=False)
class Clustering:
    """Partition of point indices into instance clusters.

    ``assignment[i]`` is the cluster id of point ``i`` or -1.  ``categories``
    maps each cluster id to its semantic category and ``scores`` to an optional
    confidence (defaults to 1.0).
    """

    assignment: np.ndarray
    categories: dict = field(default_factory=dict)
    scores: Optional[dict] = None

    def __post_init__(self):
        a = np.asarray(self.assignment)
        a = _as_ids(a, len(a) if a.ndim == 1 else -1, "assignment")
        if np.any(a < -1):
            raise ValueError("assignment ids must be >= -1")
        present = set(np.unique(a[a >= 0]).tolist())
        cats = {int(k): int(v) for k, v in self.categories.items()}
        if present != set(cats):
            missing = sorted(present - set(cats))
            extra = sorted(set(cats) - present)
            raise ValueError(
                f"clusters inconsistent with assignment (no category for {missing}, empty clusters {extra})"
            )
        object.__setattr__(self, "assignment", _frozen(a))
        object.__setattr__(self, "categories", dict(sorted(cats.items())))
        if self.scores is not None:
            scores = {int(k): float(v) for k, v in self.scores.items()}
            if set(scores) != set(cats):
                raise ValueError("scores must cover exactly the cluster ids")
            object.__setattr__(self, "scores", dict(sorted(scores.items())))

    @classmethod
    def empty(cls, n: int) -> "Clustering":
        return cls(np.full(n, -1, dtype=np.int64), {})

    @classmethod
    def from_labels(cls, instance, semantic, foreground=None) -> "Clustering":
        """Build a clustering from per-point instance and semantic ids.

        Instances whose category is outside ``foreground`` (when given) are
        dropped.  Raises if an instance mixes categories.
        """
        instance = np.asarray(instance, dtype=np.int64)
        semantic = np.asarray(semantic, dtype=np.int64)
        assignment = instance.copy()
        if foreground is not None:
            fg = np.isin(semantic, sorted(foreground))
            assignment[~fg] = -1
        assignment[semantic < 0] = -1
        cats = {}
        for cid in np.unique(assignment[assignment >= 0]):
            members = semantic[assignment == cid]
            if np.any(members != members[0]):
                raise ValueError(f"instance {cid} spans several semantic categories")
            cats[int(cid)] = int(members[0])
        return cls(assignment, cats)

    def __len__(self) -> int:
        return len(self.assignment)

    @property
    def num_clusters(self) -> int:
        return len(self.categories)

    def members(self, cid: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cid)

    @property
    def clusters(self) -> Iterator[Cluster]:
        order = np.argsort(self.assignment, kind="stable")
        sorted_ids = self.assignment[order]
        for cid, cat in self.categories.items():
            lo, hi = np.searchsorted(sorted_ids, [cid, cid + 1])
            yield Cluster(cid, order[lo:hi], cat)

    def score(self, cid: int) -> float:
        return 1.0 if self.scores is None else self.scores[cid]

    def canonical(self) -> "Clustering":
        """Relabel clusters 0..K-1 in order of their lowest member index."""
        a = self.assignment
        mask = a >= 0
        if not mask.any():
            return Clustering.empty(len(a))
        ids, first = np.unique(a[mask], return_index=True)
        first_point = np.flatnonzero(mask)[first]
        rank = np.empty(len(ids), dtype=np.int64)
        rank[np.argsort(first_point, kind="stable")] = np.arange(len(ids))
        new = np.full(len(a), -1, dtype=np.int64)
        new[mask] = rank[np.searchsorted(ids, a[mask])]
        cats = {int(rank[k]): self.categories[int(cid)] for k, cid in enumerate(ids)}
        scores = None
        if self.scores is not None:
            scores = {int(rank[k]): self.scores[int(cid)] for k, cid in enumerate(ids)}
        return Clustering(new, cats, scores)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Clustering):
            return NotImplemented
        return (
            np.array_equal(self.assignment, other.assignment)
            and self.categories == other.categories
            and (self.scores or {}) == (other.scores or {})
        )


@dataclass(frozen=True)
class CategoryConfig:
    num_categories: int
    foreground: frozenset
    names: Optional[dict] = None

    def __post_init__(self):
        if self.num_categories < 0:
            raise ValueError("num_categories must be >= 0")
        fg = frozenset(int(c) for c in self.foreground)
        bad = sorted(c for c in fg if not 0 <= c < self.num_categories)
        if bad:
            raise ValueError(f"foreground ids {bad} outside [0, {self.num_categories})")
        object.__setattr__(self, "foreground", fg)


SCANNET_NAMES = (
    "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door", "window",
    "bookshelf", "picture", "counter", "desk", "curtain", "refrigerator",
    "shower curtain", "toilet", "sink", "bathtub", "otherfurniture",
)


def default_config() -> CategoryConfig:
    """20 ScanNet-style categories with walls and floor as background."""
    return CategoryConfig(20, frozenset(range(2, 20)), dict(enumerate(SCANNET_NAMES)))


def _opt_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and np.array_equal(a, b)


# ---------------------------------------------------------------------------
# text encoding helpers


def fmt_real(x: float) -> str:
    s = format(float(x), ".9g")
    return "0" if s == "-0" else s


def _parse_real(token: str, path, line: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise FormatError(f"bad number {token!r}", path, line) from None
    if not math.isfinite(v):
        raise FormatError(f"non-finite value {token!r}", path, line)
    return v


def _parse_int(token: str, path, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"bad integer {token!r}", path, line) from None


def _read_lines(path) -> list:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _write_text(path, lines) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8", newline="\n")


def _header(lines, path, magic: str, min_fields: int):
    if not lines:
        raise FormatError("empty file", path, 1)
    parts = lines[0].split()
    if len(parts) < min_fields or parts[0] != magic or parts[1] != "v1":
        raise FormatError(f"expected '{magic} v1 ...' header", path, 1)
    n = _parse_int(parts[2], path, 1)
    if n < 0:
        raise FormatError("negative point count", path, 1)
    body = lines[1:]
    if len(body) < n:
        raise FormatError(f"header declares {n} rows but file ends after {len(body)}", path, len(lines) + 1)
    if len(body) > n:
        raise FormatError(f"header declares {n} rows, found extra data", path, n + 2)
    return parts, n, body


def compact_instances(instance: np.ndarray) -> np.ndarray:
    """Renumber non-negative ids 0..K-1 in order of first appearance."""
    out = np.full(len(instance), -1, dtype=np.int64)
    mask = instance >= 0
    if mask.any():
        ids, first, inv = np.unique(instance[mask], return_index=True, return_inverse=True)
        rank = np.empty(len(ids), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(ids))
        out[mask] = rank[inv]
    return out


# ---------------------------------------------------------------------------
# clouds

_CLOUD_COLS = {"xyz": 3, "xyzs": 4, "xyzsi": 5}


def write_cloud(cloud: LabeledCloud, path) -> None:
    if cloud.instance is not None:
        cols = "xyzsi"
    elif cloud.semantic is not None:
        cols = "xyzs"
    else:
        cols = "xyz"
    lines = [f"pcseg v1 {len(cloud)} {cols}"]
    inst = compact_instances(cloud.instance) if cloud.instance is not None else None
    for i, (x, y, z) in enumerate(cloud.coords.tolist()):
        row = f"{fmt_real(x)} {fmt_real(y)} {fmt_real(z)}"
        if cloud.semantic is not None:
            row += f" {cloud.semantic[i]}"
        if inst is not None:
            row += f" {inst[i]}"
        lines.append(row)
    _write_text(path, lines)


def read_cloud(path) -> LabeledCloud:
    path = Path(path)
    lines = _read_lines(path)
    parts, n, body = _header(lines, path, "pcseg", 4)
    cols = parts[3]
    if cols not in _CLOUD_COLS or len(parts) != 4:
        raise FormatError(f"unknown column spec {cols!r}", path, 1)
    width = _CLOUD_COLS[cols]
    coords = np.empty((n, 3), dtype=np.float64)
    labels = np.empty((n, width - 3), dtype=np.int64)
    for k, line in enumerate(body):
        lineno = k + 2
        tok = line.split()
        if len(tok) != width:
            raise FormatError(f"expected {width} fields, got {len(tok)}", path, lineno)
        coords[k] = [_parse_real(t, path, lineno) for t in tok[:3]]
        for j, t in enumerate(tok[3:]):
            v = _parse_int(t, path, lineno)
            if v < -1:
                raise FormatError(f"label {v} below -1", path, lineno)
            labels[k, j] = v
    semantic = labels[:, 0] if width >= 4 else None
    instance = labels[:, 1] if width == 5 else None
    return LabeledCloud(coords, semantic, instance)


# ---------------------------------------------------------------------------
# signals


def _signal_columns(signals: SignalSet) -> list:
    cols = []
    if signals.offsets is not None:
        cols.append("off")
    if signals.objectness is not None:
        cols.append("obj")
    if signals.sem_scores is not None:
        cols.append(f"sem:{signals.sem_scores.shape[1]}")
    return cols


def write_signals(signals: SignalSet, path) -> None:
    cols = _signal_columns(signals)
    n = len(signals)
    lines = [f"sig v1 {n} {','.join(cols) if cols else 'none'}"]
    off = signals.offsets.tolist() if signals.offsets is not None else None
    obj = signals.objectness.tolist() if signals.objectness is not None else None
    sem = signals.sem_scores.tolist() if signals.sem_scores is not None else None
    for i in range(n):
        fields = []
        if off is not None:
            fields.extend(fmt_real(v) for v in off[i])
        if obj is not None:
            fields.append(str(obj[i]))
        if sem is not None:
            fields.extend(fmt_real(v) for v in sem[i])
        lines.append(" ".join(fields))
    _write_text(path, lines)


def read_signals(path) -> SignalSet:
    path = Path(path)
    lines = _read_lines(path)
    parts, n, body = _header(lines, path, "sig", 4)
    if len(parts) != 4:
        raise FormatError("malformed header", path, 1)
    spec = [] if parts[3] == "none" else parts[3].split(",")
    layout = []
    for c in spec:
        if c in ("off", "obj") and c not in [name for name, _ in layout]:
            layout.append((c, 3 if c == "off" else 1))
        elif c.startswith("sem:") and "sem" not in [name for name, _ in layout]:
            ncls = _parse_int(c[4:], path, 1)
            if ncls < 1:
                raise FormatError("sem column needs at least one class", path, 1)
            layout.append(("sem", ncls))
        else:
            raise FormatError(f"bad column spec {c!r}", path, 1)
    width = sum(w for _, w in layout)
    data = {name: np.empty((n, w), dtype=np.float64 if name != "obj" else np.int64) for name, w in layout}
    for k, line in enumerate(body):
        lineno = k + 2
        tok = line.split()
        if len(tok) != width:
            raise FormatError(f"expected {width} fields, got {len(tok)}", path, lineno)
        pos = 0
        for name, w in layout:
            if name == "obj":
                v = _parse_int(tok[pos], path, lineno)
                if not -1 <= v < OBJECTNESS_LEVELS:
                    raise FormatError(f"objectness id {v} outside {{-1, 0..4}}", path, lineno)
                data[name][k, 0] = v
            else:
                data[name][k] = [_parse_real(t, path, lineno) for t in tok[pos:pos + w]]
            pos += w
    return SignalSet(
        offsets=data["off"] if "off" in data else None,
        objectness=data["obj"][:, 0] if "obj" in data else None,
        sem_scores=data["sem"] if "sem" in data else None,
    )


# ---------------------------------------------------------------------------
# clusterings


def write_clustering(clustering: Clustering, path) -> None:
    """Write a clustering with ids compacted to first-appearance order."""
    c = clustering.canonical()
    lines = [f"clu v1 {len(c)}"]
    cats = c.categories
    for cid in c.assignment.tolist():
        lines.append("-1 -1" if cid < 0 else f"{cid} {cats[cid]}")
    _write_text(path, lines)


def read_clustering(path) -> Clustering:
    path = Path(path)
    lines = _read_lines(path)
    parts, n, body = _header(lines, path, "clu", 3)
    if len(parts) != 3:
        raise FormatError("malformed header", path, 1)
    assignment = np.empty(n, dtype=np.int64)
    cats: dict = {}
    for k, line in enumerate(body):
        lineno = k + 2
        tok = line.split()
        if len(tok) != 2:
            raise FormatError(f"expected 2 fields, got {len(tok)}", path, lineno)
        cid, cat = _parse_int(tok[0], path, lineno), _parse_int(tok[1], path, lineno)
        if cid < -1 or (cid == -1) != (cat == -1) or cat < -1:
            raise FormatError(f"invalid row '{line}'", path, lineno)
        if cid >= 0 and cats.setdefault(cid, cat) != cat:
            raise FormatError(f"cluster {cid} has conflicting categories", path, lineno)
        assignment[k] = cid
    return Clustering(assignment, cats)


def read_labels(path, foreground=None) -> Clustering:
    """Read a clustering from either a ``clu`` file or a ``pcseg xyzsi`` cloud."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        magic = fh.readline().split()[:1]
    if magic == ["pcseg"]:
        cloud = read_cloud(path)
        if cloud.instance is None:
            raise FormatError("cloud has no instance column", path, 1)
        return Clustering.from_labels(cloud.instance, cloud.semantic, foreground)
    return read_clustering(path)


# ---------------------------------------------------------------------------
# supervoxels


def write_supervoxels(partition, path) -> None:
    ids = np.asarray(partition, dtype=np.int64)
    _write_text(path, [f"svx v1 {len(ids)}"] + [str(v) for v in ids.tolist()])


def read_supervoxels(path) -> np.ndarray:
    path = Path(path)
    lines = _read_lines(path)
    parts, n, body = _header(lines, path, "svx", 3)
    out = np.empty(n, dtype=np.int64)
    for k, line in enumerate(body):
        tok = line.split()
        if len(tok) != 1:
            raise FormatError("expected one supervoxel id", path, k + 2)
        v = _parse_int(tok[0], path, k + 2)
        if v < 0:
            raise FormatError("supervoxel ids must be >= 0", path, k + 2)
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# config


def read_config(path) -> CategoryConfig:
    path = Path(path)
    values = {}
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError("expected key=value", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ("num_categories", "foreground", "names"):
            raise FormatError(f"unknown key {key!r}", path, lineno)
        values[key] = (value, lineno)
    if "num_categories" not in values:
        raise FormatError("missing num_categories", path)
    value, lineno = values["num_categories"]
    num = _parse_int(value, path, lineno)
    fg: set = set()
    if "foreground" in values:
        value, lineno = values["foreground"]
        for tok in filter(None, (t.strip() for t in value.split(","))):
            if ".." in tok:
                lo, hi = tok.split("..", 1)
                fg.update(range(_parse_int(lo, path, lineno), _parse_int(hi, path, lineno) + 1))
            else:
                fg.add(_parse_int(tok, path, lineno))
    names = None
    if "names" in values:
        value, lineno = values["names"]
        parts = [t.strip() for t in value.split(",")]
        if len(parts) != num:
            raise FormatError(f"names lists {len(parts)} entries, expected {num}", path, lineno)
        names = dict(enumerate(parts))
    try:
        return CategoryConfig(num, frozenset(fg), names)
    except ValueError as exc:
        raise FormatError(str(exc), path, values.get("foreground", (None, None))[1]) from None


def write_config(config: CategoryConfig, path) -> None:
    lines = [f"num_categories={config.num_categories}",
             "foreground=" + ",".join(str(c) for c in sorted(config.foreground))]
    if config.names:
        lines.append("names=" + ",".join(config.names.get(i, "") for i in range(config.num_categories)))
    _write_text(path, lines)
