"""Procedural furniture-like instance samples built from box surfaces.

Used to seed recomposed scenes when no extracted samples are supplied, and
to build fixtures with known ground truth.  Category ids follow the ScanNet
20-class convention of :func:`aoiaseg.pcio.default_config`.
"""
from __future__ import annotations

import numpy as np

CABINET, BED, CHAIR, SOFA, TABLE, BOOKSHELF, DESK, TOILET = 2, 3, 4, 5, 6, 9, 12, 16


def box_surface(rng: np.random.Generator, lo, hi, density: float, skip_bottom: bool = False) -> np.ndarray:
    """Points sampled uniformly on the faces of an axis-aligned box."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    size = hi - lo
    faces = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        area = size[u] * size[v]
        sides = (1,) if (skip_bottom and axis == 2) else (0, 1)
        for side in sides:
            faces.append((axis, side, u, v, area))
    areas = np.array([f[4] for f in faces])
    counts = np.maximum(1, np.round(areas * density)).astype(int)
    out = []
    for (axis, side, u, v, _), n in zip(faces, counts):
        p = np.empty((n, 3))
        p[:, axis] = hi[axis] if side else lo[axis]
        p[:, u] = rng.uniform(lo[u], hi[u], n)
        p[:, v] = rng.uniform(lo[v], hi[v], n)
        out.append(p)
    return np.concatenate(out)


def _legs(rng, w, d, h, t, density, inset=0.02):
    legs = []
    for sx in (0, 1):
        for sy in (0, 1):
            x0 = inset if sx == 0 else w - inset - t
            y0 = inset if sy == 0 else d - inset - t
            legs.append(box_surface(rng, (x0, y0, 0.0), (x0 + t, y0 + t, h), density, skip_bottom=True))
    return legs


def chair(rng, density=2000.0):
    w = rng.uniform(0.40, 0.55)
    d = rng.uniform(0.40, 0.55)
    seat_h = rng.uniform(0.40, 0.50)
    back_h = rng.uniform(0.35, 0.50)
    parts = _legs(rng, w, d, seat_h, 0.04, density)
    parts.append(box_surface(rng, (0, 0, seat_h), (w, d, seat_h + 0.05), density))
    parts.append(box_surface(rng, (0, d - 0.05, seat_h + 0.05), (w, d, seat_h + 0.05 + back_h), density))
    return np.concatenate(parts)


def table(rng, density=2000.0):
    w = rng.uniform(0.9, 1.6)
    d = rng.uniform(0.6, 0.9)
    h = rng.uniform(0.70, 0.78)
    parts = _legs(rng, w, d, h - 0.04, 0.05, density)
    parts.append(box_surface(rng, (0, 0, h - 0.04), (w, d, h), density))
    return np.concatenate(parts)


def desk(rng, density=2000.0):
    w = rng.uniform(1.0, 1.5)
    d = rng.uniform(0.5, 0.7)
    h = rng.uniform(0.72, 0.78)
    parts = [
        box_surface(rng, (0, 0, h - 0.03), (w, d, h), density),
        box_surface(rng, (0, 0, 0), (0.4, d, h - 0.03), density, skip_bottom=True),
        box_surface(rng, (w - 0.04, 0, 0), (w, d, h - 0.03), density, skip_bottom=True),
    ]
    return np.concatenate(parts)


def cabinet(rng, density=2000.0):
    size = (rng.uniform(0.5, 1.0), rng.uniform(0.4, 0.6), rng.uniform(0.6, 1.0))
    return box_surface(rng, (0, 0, 0), size, density, skip_bottom=True)


def bookshelf(rng, density=2000.0):
    w, d, h = rng.uniform(0.6, 1.0), rng.uniform(0.28, 0.38), rng.uniform(1.4, 1.9)
    parts = [
        box_surface(rng, (0, 0, 0), (0.03, d, h), density, skip_bottom=True),
        box_surface(rng, (w - 0.03, 0, 0), (w, d, h), density, skip_bottom=True),
        box_surface(rng, (0, d - 0.02, 0), (w, d, h), density, skip_bottom=True),
    ]
    for z in np.linspace(0.05, h - 0.03, 5):
        parts.append(box_surface(rng, (0.03, 0, z), (w - 0.03, d - 0.02, z + 0.03), density))
    return np.concatenate(parts)


def sofa(rng, density=2000.0):
    w, d = rng.uniform(1.6, 2.2), rng.uniform(0.8, 1.0)
    parts = [
        box_surface(rng, (0, 0, 0), (w, d, 0.42), density, skip_bottom=True),
        box_surface(rng, (0, d - 0.2, 0.42), (w, d, 0.85), density),
        box_surface(rng, (0, 0, 0.42), (0.18, d - 0.2, 0.62), density),
        box_surface(rng, (w - 0.18, 0, 0.42), (w, d - 0.2, 0.62), density),
    ]
    return np.concatenate(parts)


def bed(rng, density=2000.0):
    w, d = rng.uniform(1.4, 1.9), rng.uniform(1.9, 2.1)
    parts = [
        box_surface(rng, (0, 0, 0), (w, d, 0.5), density, skip_bottom=True),
        box_surface(rng, (0, d - 0.06, 0.5), (w, d, 1.0), density),
    ]
    return np.concatenate(parts)


def toilet(rng, density=2000.0):
    parts = [
        box_surface(rng, (0.08, 0, 0), (0.32, 0.45, 0.40), density, skip_bottom=True),
        box_surface(rng, (0, 0.45, 0), (0.40, 0.65, 0.80), density, skip_bottom=True),
    ]
    return np.concatenate(parts)


LIBRARY = {
    "chair": (chair, CHAIR),
    "table": (table, TABLE),
    "desk": (desk, DESK),
    "cabinet": (cabinet, CABINET),
    "bookshelf": (bookshelf, BOOKSHELF),
    "sofa": (sofa, SOFA),
    "bed": (bed, BED),
    "toilet": (toilet, TOILET),
}


def random_sample(rng: np.random.Generator, density: float = 2000.0, kinds=None):
    """One ``(coords, category)`` sample of a randomly chosen kind."""
    names = sorted(LIBRARY) if kinds is None else list(kinds)
    make, category = LIBRARY[names[int(rng.integers(len(names)))]]
    return make(rng, density), category


def fragmented_cabinet(rng, gap: float, density=2000.0):
    """Tall cabinet with two horizontal bands of height ``gap`` missing.

    The bands are centered on the 1/3 and 2/3 quantiles of point height, so
    the three remaining fragments are of similar size and none holds half of
    the points; no single fragment overlaps the whole cabinet at IoU 0.5.
    """
    w, d = rng.uniform(0.5, 0.9), rng.uniform(0.4, 0.6)
    h = rng.uniform(1.8, 2.2)
    pts = box_surface(rng, (0, 0, 0), (w, d, h), density)
    keep = np.ones(len(pts), dtype=bool)
    for z in np.quantile(pts[:, 2], [1 / 3, 2 / 3]):
        keep &= np.abs(pts[:, 2] - z) > gap / 2
    return pts[keep]


def place(coords: np.ndarray, offset) -> np.ndarray:
    return np.asarray(coords) + np.asarray(offset, dtype=np.float64)
