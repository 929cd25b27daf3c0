"""Incremental world-frame point map.

Points are thinned on insertion to at most one per voxel (the first point
to reach a voxel stays). Nearest-neighbour search is exact over a short
forest of k-d trees on consecutive slices of the map, built lazily at query
time and merged so tree sizes at least halve from oldest to newest. Each
point is therefore re-indexed O(log n) times however the inserts are split.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable, NamedTuple

import numpy as np
from scipy.spatial import cKDTree

_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


@dataclass(frozen=True)
class MapConfig:
    downsample_voxel: float = 0.05
    knn_k: int = 5
    plane_threshold: float = 0.05
    max_neighbor_dist: float = 1.0
    # reject neighbourhoods whose second spread axis is below this fraction of the first
    # (near-collinear points leave the normal free to spin about the line); 0 disables
    min_spread_ratio: float = 0.0

    def __post_init__(self):
        if min(self.downsample_voxel, self.plane_threshold, self.max_neighbor_dist) <= 0:
            raise ValueError("map parameters must be positive")
        if not 0.0 <= self.min_spread_ratio <= 1.0:
            raise ValueError("min_spread_ratio must lie in [0, 1]")
        if self.knn_k < 3:
            raise ValueError("knn_k must be at least 3 to define a plane")


class InsertReport(NamedTuple):
    accepted: int
    rejected: int


@dataclass(frozen=True, eq=False)
class PlaneFit:
    normal: np.ndarray
    point: np.ndarray        # nearest map point
    valid: bool
    rms_residual: float


@dataclass(frozen=True, eq=False)
class PlaneFits:
    """Vectorised plane fits for a batch of queries."""
    normals: np.ndarray      # (m, 3)
    points: np.ndarray       # (m, 3)
    valid: np.ndarray        # (m,) bool
    rms_residual: np.ndarray # (m,)


def voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    """Pack integer voxel coordinates into one int64 per point."""
    idx = np.floor(np.asarray(points, dtype=float) / voxel).astype(np.int64) + _KEY_OFFSET
    if idx.size and (idx.min() < 0 or idx.max() > _KEY_MASK):
        raise ValueError("point outside the representable voxel range")
    return (idx[:, 0] << (2 * _KEY_BITS)) | (idx[:, 1] << _KEY_BITS) | idx[:, 2]


class PointMap:
    def __init__(self, cfg: MapConfig | None = None):
        self.cfg = cfg or MapConfig()
        self._pts = np.empty((1024, 3))
        self._n = 0
        self._voxels: set[int] = set()
        # (first index, tree) over consecutive slices of the point buffer, oldest first
        self._forest: list[tuple[int, cKDTree]] = []
        self._n_indexed = 0

    def __len__(self) -> int:
        return self._n

    def size(self) -> int:
        return self._n

    @property
    def points(self) -> np.ndarray:
        return self._pts[:self._n]

    def voxel_set(self) -> set[int]:
        return set(self._voxels)

    # --- insertion ---------------------------------------------------------

    def insert(self, points: Iterable) -> InsertReport:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            return InsertReport(0, 0)
        if not np.all(np.isfinite(pts)):
            raise ValueError("cannot insert non-finite points")
        keys = voxel_keys(pts, self.cfg.downsample_voxel)
        # np.unique reports the first occurrence, which keeps first-come order
        _, first = np.unique(keys, return_index=True)
        first.sort()
        fresh = [i for i in first.tolist() if int(keys[i]) not in self._voxels]
        self._voxels.update(int(keys[i]) for i in fresh)
        self._append(pts[fresh])
        return InsertReport(len(fresh), len(pts) - len(fresh))

    def _append(self, pts: np.ndarray) -> None:
        need = self._n + len(pts)
        if need > len(self._pts):
            cap = len(self._pts)
            while cap < need:
                cap *= 2
            grown = np.empty((cap, 3))
            grown[:self._n] = self._pts[:self._n]
            self._pts = grown
        self._pts[self._n:need] = pts
        self._n = need

    def _index(self) -> None:
        """Index pending points lazily; merge trees so sizes at least halve down the forest."""
        if self._n_indexed == self._n:
            return
        self._forest.append((self._n_indexed, cKDTree(self._pts[self._n_indexed:self._n].copy())))
        self._n_indexed = self._n
        while len(self._forest) > 1 and self._forest[-2][1].n < 2 * self._forest[-1][1].n:
            start = self._forest[-2][0]
            del self._forest[-2:]
            self._forest.append((start, cKDTree(self._pts[start:self._n].copy())))

    # --- queries -----------------------------------------------------------

    def knn_batch(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices (m, min(k, size)), ascending per row."""
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        kk = min(k, self._n)
        if kk == 0:
            return np.empty((len(q), 0)), np.empty((len(q), 0), dtype=np.int64)

        self._index()
        cand_d, cand_i = [], []
        for base, tree in self._forest:
            kt = min(kk, tree.n)
            d, i = tree.query(q, k=kt)
            cand_d.append(np.asarray(d, dtype=float).reshape(len(q), kt))
            cand_i.append(np.asarray(i, dtype=np.int64).reshape(len(q), kt) + base)

        d = np.concatenate(cand_d, axis=1)
        i = np.concatenate(cand_i, axis=1)
        order = np.lexsort((i, d), axis=1)[:, :kk]
        return np.take_along_axis(d, order, axis=1), np.take_along_axis(i, order, axis=1)

    def knn(self, query, k: int) -> np.ndarray:
        """The min(k, size) nearest map points, closest first, as an (n, 3) array."""
        _, idx = self.knn_batch(np.asarray(query, dtype=float)[None, :], k)
        return self._pts[idx[0]].copy()

    def fit_planes(self, queries, cfg: MapConfig | None = None) -> PlaneFits:
        cfg = cfg or self.cfg
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        m = len(q)
        normals = np.zeros((m, 3))
        nearest = np.zeros((m, 3))
        valid = np.zeros(m, dtype=bool)
        rms = np.full(m, np.inf)
        if m == 0 or self._n < cfg.knn_k:
            return PlaneFits(normals, nearest, valid, rms)

        d, idx = self.knn_batch(q, cfg.knn_k)
        nbrs = self._pts[idx]                                   # (m, k, 3)
        nearest = nbrs[:, 0, :].copy()
        centered = nbrs - nbrs.mean(axis=1, keepdims=True)
        cov = np.einsum('mki,mkj->mij', centered, centered)
        evals, vecs = np.linalg.eigh(cov)
        normals = vecs[:, :, 0]
        # deterministic sign: largest-magnitude component positive
        big = np.argmax(np.abs(normals), axis=1)
        sign = np.sign(normals[np.arange(m), big])
        normals = normals * np.where(sign == 0, 1.0, sign)[:, None]

        dist = np.abs(np.einsum('mki,mi->mk', centered, normals))
        rms = np.sqrt((dist ** 2).mean(axis=1))
        valid = (d[:, 0] <= cfg.max_neighbor_dist) & (dist.max(axis=1) <= cfg.plane_threshold)
        if cfg.min_spread_ratio > 0.0:
            spread = np.sqrt(np.clip(evals[:, 1], 0.0, None) / np.maximum(evals[:, 2], 1e-300))
            valid &= spread >= cfg.min_spread_ratio
        return PlaneFits(normals, nearest, valid, rms)

    def fit_plane(self, query, cfg: MapConfig | None = None) -> PlaneFit:
        f = self.fit_planes(np.asarray(query, dtype=float)[None, :], cfg)
        return PlaneFit(f.normals[0], f.points[0], bool(f.valid[0]), float(f.rms_residual[0]))

    # --- export ------------------------------------------------------------

    def export(self, sink: IO[str], ply: bool = False) -> int:
        return write_points(sink, self.points, ply=ply)


def write_points(sink: IO[str], points: np.ndarray, ply: bool = False) -> int:
    """Write ``x y z`` lines (6 decimals), optionally behind an ASCII PLY header."""
    if ply:
        sink.write("ply\nformat ascii 1.0\n"
                   f"element vertex {len(points)}\n"
                   "property float x\nproperty float y\nproperty float z\nend_header\n")
    for x, y, z in points:
        sink.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
    return len(points)


def read_points(source: IO[str]) -> np.ndarray:
    """Inverse of :func:`write_points`; a PLY header is skipped if present."""
    lines = source.read().splitlines()
    if lines and lines[0].strip() == "ply":
        lines = lines[lines.index("end_header") + 1:]
    rows = [list(map(float, ln.split())) for ln in lines if ln.strip()]
    return np.asarray(rows, dtype=float).reshape(-1, 3)
