"""Point sets on axis-aligned boxes: generation, quality metrics, neighbor search.

The spatial index is a uniform bucket grid whose cell side is at least the
query radius, so a ball query only has to scan the ``3**d`` cells around the
query point. All MLS queries in this package use a single support radius, so
one index per radius is built lazily and cached on the :class:`PointSet`.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import MultiIndexSet, eval_basis_batch

_QUERY_CHUNK = 4096


class GeometryError(ValueError):
    """Invalid point set or geometric query."""


@dataclass(frozen=True)
class DomainBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        up = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != up.shape or lo.ndim != 1:
            raise GeometryError("box bounds must be 1-d arrays of equal length")
        if not np.all(lo < up):
            raise GeometryError(f"box requires lower < upper, got {lo} and {up}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> DomainBox:
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def sides(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.sides))

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)


@dataclass(frozen=True)
class QualityMetrics:
    fill_distance: float
    separation_distance: float
    quasi_uniformity: float
    probe_spacing: float


class UniformGridIndex:
    """Bucket grid over a fixed point cloud for fixed-radius ball queries.

    Occupied cells are stored sorted by linear cell id; a padded table of
    point indices per occupied cell makes batch queries fully vectorized.
    """

    def __init__(self, points: np.ndarray, radius: float):
        if radius <= 0:
            raise GeometryError("query radius must be positive")
        self.points = points
        self.radius = float(radius)
        n, d = points.shape
        self.origin = points.min(axis=0)
        extent = points.max(axis=0) - self.origin
        # side >= radius keeps the 3**d stencil exact; widen it when the
        # radius is tiny so the id space stays bounded.
        side = max(self.radius, float(extent.max()) / max(1.0, n ** (1.0 / d)) / 4.0)
        self.side = side
        self.shape = np.floor(extent / side).astype(np.int64) + 1
        cells = self._cell_coords(points)
        ids = self._linear(cells)
        order = np.argsort(ids, kind="stable")
        sorted_ids = ids[order]
        self.cell_ids, starts, counts = np.unique(sorted_ids, return_index=True, return_counts=True)
        width = int(counts.max())
        table = np.full((self.cell_ids.size, width), -1, dtype=np.int64)
        slot = np.arange(n) - np.repeat(starts, counts)
        table[np.repeat(np.arange(self.cell_ids.size), counts), slot] = order
        self.table = table
        self.offsets = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)

    def _cell_coords(self, x: np.ndarray) -> np.ndarray:
        return np.floor((x - self.origin) / self.side).astype(np.int64)

    def _linear(self, cells: np.ndarray) -> np.ndarray:
        ids = np.zeros(cells.shape[:-1], dtype=np.int64)
        for axis in range(cells.shape[-1]):
            ids = ids * self.shape[axis] + cells[..., axis]
        return ids

    def query(self, x: np.ndarray, radius: float | None = None):
        """Ball query for a batch of points.

        Returns ``(idx, mask)`` of shape ``(B, K)``: neighbor indices in
        ascending order per row, padded with 0 where ``mask`` is False.
        ``K`` is the largest neighbor count in the batch.
        """
        r = self.radius if radius is None else float(radius)
        if r > self.side * (1 + 1e-12):
            raise GeometryError("query radius exceeds index cell side")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = self.points.shape[0]
        cells = self._cell_coords(x)[:, None, :] + self.offsets[None, :, :]
        inside = np.all((cells >= 0) & (cells < self.shape), axis=-1)
        ids = self._linear(np.clip(cells, 0, self.shape - 1))
        pos = np.searchsorted(self.cell_ids, ids)
        pos = np.minimum(pos, self.cell_ids.size - 1)
        hit = inside & (self.cell_ids[pos] == ids)
        cand = self.table[pos]
        cand[~hit] = -1
        cand = cand.reshape(x.shape[0], -1)
        valid = cand >= 0
        diff = x[:, None, :] - self.points[np.where(valid, cand, 0)]
        dist2 = np.einsum("bkd,bkd->bk", diff, diff)
        valid &= dist2 <= r * r
        keyed = np.where(valid, cand, n)
        keyed.sort(axis=1)
        k = int(valid.sum(axis=1).max()) if x.shape[0] else 0
        keyed = keyed[:, :k]
        mask = keyed < n
        return np.where(mask, keyed, 0), mask


@dataclass(eq=False)
class PointSet:
    """Scattered centers inside a box.

    Duplicates (closer than ``1e-14 * box.diameter``) and points outside the
    box are rejected at construction.
    """

    points: np.ndarray
    box: DomainBox
    _indexes: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] != self.box.dim:
            raise GeometryError(f"points must have shape (N, {self.box.dim})")
        if pts.shape[0] == 0:
            raise GeometryError("point set is empty")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("non-finite coordinates")
        tol = 1e-14 * self.box.diameter
        if not np.all(self.box.contains(pts, tol)):
            raise GeometryError("points must lie inside the domain box")
        pts.setflags(write=False)
        self.points = pts
        if pts.shape[0] > 1:
            q = _min_pair_distance(self, initial=None)
            if q <= tol:
                raise GeometryError("point set contains coincident points")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def index(self, radius: float) -> UniformGridIndex:
        key = float(radius)
        idx = self._indexes.get(key)
        if idx is None:
            idx = UniformGridIndex(self.points, key)
            self._indexes[key] = idx
        return idx

    def query_ball(self, x: np.ndarray, radius: float):
        """Vectorized :func:`neighbors_in_ball` returning padded ``(idx, mask)``."""
        return self.index(radius).query(x, radius)

    # -- serialization ---------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "points": self.points.tolist()})

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(self.to_json())
        else:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                for p in self.points:
                    w.writerow([repr(float(v)) for v in p])

    @classmethod
    def load(cls, path: str | Path, box: DomainBox | None = None) -> PointSet:
        path = Path(path)
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            pts = np.asarray(doc["points"], dtype=float).reshape(-1, int(doc["dim"]))
        else:
            pts = np.loadtxt(path, delimiter=",", ndmin=2)
        if box is None:
            box = DomainBox(pts.min(axis=0), pts.max(axis=0))
        return cls(pts, box)


def generate_regular_grid(box: DomainBox, spacing: float) -> PointSet:
    """Endpoint-inclusive tensor lattice, ordered lexicographically (first axis slowest)."""
    if not spacing > 0:
        raise GeometryError("spacing must be positive")
    if spacing > box.sides.min() * (1 + 1e-12):
        raise GeometryError("spacing exceeds the shortest box side")
    axes = []
    for lo, hi in zip(box.lower, box.upper):
        n = int(math.floor((hi - lo) / spacing + 1e-9))
        axes.append(lo + spacing * np.arange(n + 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return PointSet(pts, box)


def probe_lattice(box: DomainBox, resolution: int) -> np.ndarray:
    """``(resolution+1)**d`` equispaced probe points covering the closed box."""
    axes = [np.linspace(lo, hi, resolution + 1) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _nearest_distances(ps: PointSet, probes: np.ndarray) -> np.ndarray:
    n = len(ps)
    r = ps.box.diameter / max(1.0, n ** (1.0 / ps.dim))
    out = np.full(probes.shape[0], np.inf)
    todo = np.arange(probes.shape[0])
    while todo.size:
        for start in range(0, todo.size, _QUERY_CHUNK):
            sel = todo[start:start + _QUERY_CHUNK]
            idx, mask = ps.query_ball(probes[sel], r)
            if idx.shape[1] == 0:
                continue
            d = np.linalg.norm(probes[sel][:, None, :] - ps.points[idx], axis=-1)
            d[~mask] = np.inf
            out[sel] = d.min(axis=1)
        todo = todo[np.isinf(out[todo])]
        r *= 2.0
    return out


def fill_distance(points: PointSet, box: DomainBox | None = None, probe_resolution: int = 400) -> float:
    """Largest probe-to-nearest-center distance over a probe lattice.

    This underestimates the true supremum by at most the probe diagonal,
    ``diameter / probe_resolution``, and converges as the resolution grows.
    """
    if len(points) == 0:
        raise GeometryError("empty point set")
    box = points.box if box is None else box
    probes = probe_lattice(box, int(probe_resolution))
    best = 0.0
    for start in range(0, probes.shape[0], 65536):
        best = max(best, float(_nearest_distances(points, probes[start:start + 65536]).max()))
    return best


def _min_pair_distance(ps: PointSet, initial: float | None) -> float:
    pts = ps.points
    n, d = pts.shape
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    r = initial or max(extent, 1e-300) * 2.0 / max(1.0, n ** (1.0 / d) - 1.0)
    while True:
        best = np.inf
        for start in range(0, n, _QUERY_CHUNK):
            rows = np.arange(start, min(n, start + _QUERY_CHUNK))
            idx, mask = ps.query_ball(pts[rows], r)
            mask &= idx != rows[:, None]
            if not mask.any():
                continue
            dist = np.linalg.norm(pts[rows][:, None, :] - pts[idx], axis=-1)
            best = min(best, float(dist[mask].min()))
        if np.isfinite(best):
            return best
        r *= 2.0


def separation_distance(points: PointSet) -> float:
    """Half the smallest pairwise distance, found through the bucket grid."""
    if len(points) < 2:
        raise GeometryError("separation distance needs at least 2 points")
    return 0.5 * _min_pair_distance(points, initial=None)


def neighbors_in_ball(points: PointSet, x, radius: float) -> np.ndarray:
    """Indices ``j`` with ``||x - x_j|| <= radius``, ascending."""
    if not radius > 0:
        raise GeometryError("radius must be positive")
    idx, mask = points.query_ball(np.asarray(x, dtype=float).reshape(1, -1), radius)
    return idx[0][mask[0]]


def quality_metrics(points: PointSet, probe_resolution: int = 400) -> QualityMetrics:
    h = fill_distance(points, points.box, probe_resolution)
    q = separation_distance(points)
    return QualityMetrics(h, q, h / q, points.box.diameter / probe_resolution)


def check_unisolvency(points: PointSet | np.ndarray, indices, m: int, h: float, z) -> tuple[bool, float]:
    """Numerical P_m-unisolvency test of the selected centers.

    Returns ``(ok, sigma_min / sigma_max)`` for the ``Q x len(indices)``
    matrix of shifted-scaled basis values.
    """
    pts = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=float)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise GeometryError("indices must be non-empty")
    mset = MultiIndexSet(m, pts.shape[1])
    vals = eval_basis_batch(mset, (pts[indices] - np.asarray(z, dtype=float)) / h)
    sv = np.linalg.svd(vals.T, compute_uv=False)
    q = len(mset)
    if sv.size < q or sv[0] == 0.0:
        return False, 0.0
    tol = q * sv[0] * np.finfo(float).eps * 64
    rank = int(np.sum(sv > tol))
    return rank == q, float(sv[q - 1] / sv[0])
