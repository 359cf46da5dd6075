"""Multi-resolution hash-voxel world map.

The map keeps one hash table per resolution level. Each inserted point
lands in exactly one level, chosen from its sensor-range-dependent search
radius, so nearby geometry stays dense while distant geometry is stored
coarsely. Queries gather candidates from a voxel and its six face
neighbors, then rank by Euclidean distance.

Batched variants (``insert_batch``, ``neighbors_batch``,
``fit_planes_batched``) exist because the per-frame association loop is
the hot path; they are exact re-implementations of the scalar operations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateGeometryError

DEFAULT_RESOLUTIONS = (0.2, 0.5, 1.2)
DEFAULT_CAPACITY = 20
DEFAULT_RADIUS_SCALE = 1.5  # R_i = 1.5 * d_i
DEFAULT_D_NEAR = 5.0
DEFAULT_D_FAR = 60.0
DEFAULT_KNN = 5

# center voxel plus the six face-adjacent voxels
_FACE_OFFSETS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [-1, 0, 0],
        [0, 1, 0],
        [0, -1, 0],
        [0, 0, 1],
        [0, 0, -1],
    ],
    dtype=np.int64,
)

# packed voxel keys: 21 bits per axis, biased to stay non-negative
_KEY_BIAS = 1 << 20


def _pack_keys(keys: np.ndarray) -> np.ndarray:
    """Fold (n, 3) integer voxel coordinates into sortable int64 scalars."""
    k = keys + _KEY_BIAS
    if np.any((k < 0) | (k >= (1 << 21))):
        raise ValueError("voxel coordinate out of packable range")
    return (k[:, 0] << 42) | (k[:, 1] << 21) | k[:, 2]


@dataclass(frozen=True)
class ResolutionLadder:
    """Ascending voxel side lengths with per-level capacity and query radius."""

    resolutions: Tuple[float, ...] = DEFAULT_RESOLUTIONS
    capacities: Tuple[int, ...] = ()
    radii: Tuple[float, ...] = ()

    def __post_init__(self):
        res = tuple(float(d) for d in self.resolutions)
        if not res or any(d <= 0 for d in res):
            raise ValueError("resolutions must be positive")
        if list(res) != sorted(res):
            raise ValueError("resolutions must be ascending")
        object.__setattr__(self, "resolutions", res)
        caps = self.capacities or tuple(DEFAULT_CAPACITY for _ in res)
        radii = self.radii or tuple(DEFAULT_RADIUS_SCALE * d for d in res)
        if len(caps) != len(res) or len(radii) != len(res):
            raise ValueError("capacities/radii must match ladder length")
        if any(c < 1 for c in caps):
            raise ValueError("voxel capacity must be >= 1")
        object.__setattr__(self, "capacities", tuple(int(c) for c in caps))
        object.__setattr__(self, "radii", tuple(float(r) for r in radii))

    @property
    def n_levels(self) -> int:
        return len(self.resolutions)


def search_radius(
    p,
    r_min: float,
    r_max: float,
    d_near: float = DEFAULT_D_NEAR,
    d_far: float = DEFAULT_D_FAR,
):
    """Distance-adaptive search radius, linear between d_near and d_far.

    ``p`` may be a sensor-frame point (norm is taken over the last axis) or
    a precomputed range. rho = beta*r_max + (1-beta)*r_min with beta the
    clamped position of the range between the near and far bounds.
    """
    if not (0 < r_min <= r_max):
        raise ValueError("need 0 < r_min <= r_max")
    if not d_near < d_far:
        raise ValueError("need d_near < d_far")
    p = np.asarray(p, dtype=float)
    dist = np.linalg.norm(p, axis=-1) if p.ndim >= 1 and p.shape[-1] == 3 else p
    beta = np.clip((dist - d_near) / (d_far - d_near), 0.0, 1.0)
    return beta * r_max + (1.0 - beta) * r_min


def select_level(rho, ladder: ResolutionLadder):
    """Index of the first ladder resolution >= rho, clamped to the coarsest."""
    res = np.asarray(ladder.resolutions)
    idx = np.searchsorted(res, np.asarray(rho, dtype=float), side="left")
    return np.minimum(idx, ladder.n_levels - 1)


class MultiResMap:
    """Hash-voxel map with one table per resolution level."""

    def __init__(
        self,
        ladder: Optional[ResolutionLadder] = None,
        d_near: float = DEFAULT_D_NEAR,
        d_far: float = DEFAULT_D_FAR,
    ):
        self.ladder = ladder or ResolutionLadder()
        self.d_near = float(d_near)
        self.d_far = float(d_far)
        # per level: {(ix,iy,iz): list of (x, y, z) tuples, FIFO order}
        self.tables: List[dict] = [dict() for _ in self.ladder.resolutions]
        self.n_inserted = 0
        self.n_evicted = 0
        # flat per-level snapshots for batch queries, rebuilt after inserts
        self._cache: List[Optional[tuple]] = [None for _ in self.ladder.resolutions]
        self._dirty: List[bool] = [True for _ in self.ladder.resolutions]

    @property
    def r_min(self) -> float:
        return self.ladder.resolutions[0]

    @property
    def r_max(self) -> float:
        return self.ladder.resolutions[-1]

    def point_count(self) -> int:
        return sum(len(v) for t in self.tables for v in t.values())

    def level_counts(self) -> List[int]:
        return [sum(len(v) for v in t.values()) for t in self.tables]

    def level_for_range(self, sensor_range) -> np.ndarray:
        rho = search_radius(
            np.asarray(sensor_range, dtype=float),
            self.r_min,
            self.r_max,
            self.d_near,
            self.d_far,
        )
        return select_level(rho, self.ladder)

    def insert(self, p_world, sensor_range: float) -> int:
        """Insert one world point; level follows the sensor-frame range.

        Returns the level the point went to.
        """
        p = np.asarray(p_world, dtype=float)
        level = int(self.level_for_range(float(sensor_range)))
        d = self.ladder.resolutions[level]
        key = (int(np.floor(p[0] / d)), int(np.floor(p[1] / d)), int(np.floor(p[2] / d)))
        voxel = self.tables[level].setdefault(key, [])
        voxel.append((p[0], p[1], p[2]))
        self.n_inserted += 1
        self._dirty[level] = True
        if len(voxel) > self.ladder.capacities[level]:
            voxel.pop(0)
            self.n_evicted += 1
        return level

    def insert_batch(self, points_world: np.ndarray, sensor_ranges: np.ndarray) -> None:
        points_world = np.asarray(points_world, dtype=float)
        if points_world.size == 0:
            return
        levels = self.level_for_range(sensor_ranges)
        res = np.asarray(self.ladder.resolutions)[levels]
        keys = np.floor(points_world / res[:, None]).astype(np.int64)
        caps = self.ladder.capacities
        for i in range(points_world.shape[0]):
            lvl = int(levels[i])
            key = (int(keys[i, 0]), int(keys[i, 1]), int(keys[i, 2]))
            voxel = self.tables[lvl].setdefault(key, [])
            voxel.append((points_world[i, 0], points_world[i, 1], points_world[i, 2]))
            if len(voxel) > caps[lvl]:
                voxel.pop(0)
                self.n_evicted += 1
        self.n_inserted += points_world.shape[0]
        for lvl in np.unique(levels):
            self._dirty[lvl] = True

    def neighbors(
        self,
        p_world,
        level: int,
        k: int = DEFAULT_KNN,
        max_r: Optional[float] = None,
    ) -> np.ndarray:
        """Up to k nearest stored points around ``p_world`` at one level.

        Candidates come from the query's voxel and its 6 face neighbors.
        Result is (m, 3), ascending distance, m <= k, all within max_r
        (level default when None). Ties keep insertion order.
        """
        if k < 3:
            raise ValueError("k must be >= 3")
        p = np.asarray(p_world, dtype=float)
        d = self.ladder.resolutions[level]
        if max_r is None:
            max_r = self.ladder.radii[level]
        base = np.floor(p / d).astype(np.int64)
        table = self.tables[level]
        cand: List[tuple] = []
        for off in _FACE_OFFSETS:
            voxel = table.get((base[0] + off[0], base[1] + off[1], base[2] + off[2]))
            if voxel:
                cand.extend(voxel)
        if not cand:
            return np.zeros((0, 3))
        pts = np.asarray(cand)
        d2 = np.einsum("ij,ij->i", pts - p, pts - p)
        ok = d2 <= max_r * max_r
        pts, d2 = pts[ok], d2[ok]
        if pts.shape[0] == 0:
            return np.zeros((0, 3))
        order = np.argsort(d2, kind="stable")[:k]
        return pts[order]

    def _level_cache(self, lvl: int) -> Optional[tuple]:
        """Flat snapshot of one level: sorted packed cell keys plus ragged
        (start, length) index pairs into a dense point array. Point order
        inside each cell is the FIFO insertion order of the voxel list."""
        if self._dirty[lvl]:
            table = self.tables[lvl]
            if not table:
                self._cache[lvl] = None
            else:
                keys = np.array(list(table.keys()), dtype=np.int64)
                lens = np.array([len(v) for v in table.values()], dtype=np.int64)
                pts = np.concatenate(
                    [np.asarray(v, dtype=float) for v in table.values()], axis=0
                )
                starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
                packed = _pack_keys(keys)
                order = np.argsort(packed)
                self._cache[lvl] = (packed[order], starts[order], lens[order], pts)
            self._dirty[lvl] = False
        return self._cache[lvl]

    def neighbors_batch(
        self,
        points_world: np.ndarray,
        levels: np.ndarray,
        k: int = DEFAULT_KNN,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized 7-voxel k-NN for many queries at once.

        Returns (neigh, counts): neigh is (M, k, 3) padded with zeros,
        counts is (M,) valid neighbor counts. Equivalent to calling
        ``neighbors`` per point with the level's default radius.
        """
        points_world = np.asarray(points_world, dtype=float)
        M = points_world.shape[0]
        neigh = np.zeros((M, k, 3))
        counts = np.zeros(M, dtype=np.int64)
        levels = np.asarray(levels)
        for lvl in np.unique(levels):
            sel = np.flatnonzero(levels == lvl)
            cache = self._level_cache(lvl)
            if cache is None:
                continue
            packed, cell_start, cell_len, pts = cache
            d = self.ladder.resolutions[lvl]
            max_r2 = self.ladder.radii[lvl] ** 2
            base = np.floor(points_world[sel] / d).astype(np.int64)
            # candidate cells in (query-major, offset-minor) order, matching
            # the scalar lookup order so distance ties break identically
            cand = (base[:, None, :] + _FACE_OFFSETS[None, :, :]).reshape(-1, 3)
            pc = _pack_keys(cand)
            pos = np.searchsorted(packed, pc)
            pos[pos >= packed.shape[0]] = 0
            hit = packed[pos] == pc
            if not hit.any():
                continue
            qh = np.repeat(np.arange(sel.shape[0]), _FACE_OFFSETS.shape[0])[hit]
            ci = pos[hit]
            lens = cell_len[ci]
            total = int(lens.sum())
            if total == 0:
                continue
            ends = np.cumsum(lens)
            offs = np.arange(total) - np.repeat(ends - lens, lens)
            flat = pts[np.repeat(cell_start[ci], lens) + offs]
            own = np.repeat(qh, lens)
            diff = flat - points_world[sel][own]
            d2 = np.einsum("ij,ij->i", diff, diff)
            ok = d2 <= max_r2
            flat, own, d2 = flat[ok], own[ok], d2[ok]
            if flat.shape[0] == 0:
                continue
            # rank candidates per owner: stable sort keeps insertion order on ties
            arrival = np.arange(flat.shape[0])
            order = np.lexsort((arrival, d2, own))
            own_s = own[order]
            # rank within each owner group
            group_start = np.ones(own_s.shape[0], dtype=bool)
            group_start[1:] = own_s[1:] != own_s[:-1]
            starts = np.flatnonzero(group_start)
            rank = np.arange(own_s.shape[0]) - np.repeat(starts, np.diff(np.append(starts, own_s.shape[0])))
            keep = rank < k
            oi = own_s[keep]
            neigh[sel[oi], rank[keep]] = flat[order][keep]
            np.add.at(counts, sel[oi], 1)
        return neigh, counts

    def all_points(self) -> List[Tuple[int, tuple, tuple]]:
        out = []
        for lvl, table in enumerate(self.tables):
            for key, voxel in table.items():
                for p in voxel:
                    out.append((lvl, key, p))
        return out

    def dump_csv(self, path) -> None:
        """One row per stored point: level, voxel coords, position."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "vx", "vy", "vz", "x", "y", "z"])
            for lvl, key, p in self.all_points():
                w.writerow([lvl, key[0], key[1], key[2], repr(p[0]), repr(p[1]), repr(p[2])])


def fit_plane(points: np.ndarray, origin=None):
    """Least-squares plane through >= 3 points.

    Returns (unit normal, centroid, planarity) where planarity is
    1 - lambda_min/lambda_mid of the point covariance. The normal is
    flipped to face ``origin`` (the sensor) when given. Raises
    DegenerateGeometryError for under-determined or collinear sets.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 3:
        raise DegenerateGeometryError("plane fit needs at least 3 points")
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = d.T @ d / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] < 1e-12:
        raise DegenerateGeometryError("collinear points")
    normal = evecs[:, 0]
    if origin is not None:
        if normal @ (np.asarray(origin, dtype=float) - centroid) < 0:
            normal = -normal
    elif normal[np.argmax(np.abs(normal))] < 0:
        normal = -normal
    planarity = 1.0 - evals[0] / evals[1]
    return normal, centroid, float(planarity)


def fit_planes_batched(neigh: np.ndarray, counts: np.ndarray, origins: np.ndarray):
    """Plane fits for padded neighbor sets from ``neighbors_batch``.

    neigh: (M, K, 3) zero-padded, counts: (M,), origins: (M, 3) sensor
    positions for normal orientation. Returns (normals, centroids,
    planarity, valid) where valid marks fits with >= 3 points and
    non-collinear spread. Matches ``fit_plane`` on the valid rows.
    """
    M, K, _ = neigh.shape
    counts = np.asarray(counts)
    valid = counts >= 3
    cnt = np.maximum(counts, 1).astype(float)
    mask = np.arange(K)[None, :] < counts[:, None]
    msk3 = mask[:, :, None]
    centroids = (neigh * msk3).sum(axis=1) / cnt[:, None]
    d = (neigh - centroids[:, None, :]) * msk3
    cov = np.einsum("mki,mkj->mij", d, d) / cnt[:, None, None]
    evals, evecs = np.linalg.eigh(cov)
    valid = valid & (evals[:, 1] >= 1e-12)
    normals = evecs[:, :, 0]
    flip = np.einsum("mi,mi->m", normals, origins - centroids) < 0
    normals[flip] = -normals[flip]
    with np.errstate(divide="ignore", invalid="ignore"):
        planarity = 1.0 - evals[:, 0] / np.where(evals[:, 1] > 0, evals[:, 1], 1.0)
    planarity = np.where(valid, planarity, 0.0)
    return normals, centroids, planarity, valid
