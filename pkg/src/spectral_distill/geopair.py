"""Geospatial pairing of laboratory and satellite samples, and spatial splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0088
DEFAULT_TAU = 0.000157
SPLITS = ("train", "validation", "test")
DEFAULT_STRATA_EDGES = (0.0, 2.0, 10.0)


@dataclass(frozen=True)
class GeoPoint:
    lat_rad: float
    lon_rad: float

    def __post_init__(self):
        if not -math.pi / 2 <= self.lat_rad <= math.pi / 2:
            raise ValueError(f"latitude {self.lat_rad} rad outside [-pi/2, pi/2]")
        if not -math.pi <= self.lon_rad <= math.pi:
            raise ValueError(f"longitude {self.lon_rad} rad outside [-pi, pi]")

    @classmethod
    def from_degrees(cls, lat: float, lon: float) -> "GeoPoint":
        return cls(math.radians(lat), math.radians(lon))


def haversine_rad(lat1, lon1, lat2, lon2):
    """Great-circle central angle between points given in radians; broadcasts."""
    s_lat = np.sin((np.asarray(lat2) - lat1) * 0.5)
    s_lon = np.sin((np.asarray(lon2) - lon1) * 0.5)
    h = s_lat * s_lat + np.cos(lat1) * np.cos(lat2) * s_lon * s_lon
    return 2.0 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    return float(haversine_rad(a.lat_rad, a.lon_rad, b.lat_rad, b.lon_rad))


def central_angle_to_km(angle: float) -> float:
    return angle * EARTH_RADIUS_KM


# -- ball tree -----------------------------------------------------------------
class BallTree:
    """Metric ball tree over the haversine distance with median splits.

    Points are split on the Cartesian axis (of their unit-sphere embedding)
    with the widest spread, so depth is ceil(log2(n / leaf_size)) at most.
    """

    def __init__(self, lat_rad, lon_rad, leaf_size: int = 16):
        self.lat = np.asarray(lat_rad, dtype=np.float64).ravel()
        self.lon = np.asarray(lon_rad, dtype=np.float64).ravel()
        if len(self.lat) == 0:
            raise ValueError("cannot index an empty point set")
        if len(self.lat) != len(self.lon):
            raise ValueError("latitude/longitude length mismatch")
        self.leaf_size = max(1, int(leaf_size))
        xyz = np.stack(
            [np.cos(self.lat) * np.cos(self.lon), np.cos(self.lat) * np.sin(self.lon), np.sin(self.lat)], axis=1
        )
        # node arrays: center lat/lon, radius, children (-1 for leaf), index slice
        self._center, self._radius, self._children, self._slice = [], [], [], []
        self._order = np.arange(len(self.lat))
        self._build(xyz, 0, len(self.lat))
        self.height = self._height(0)

    def __len__(self):
        return len(self.lat)

    def _build(self, xyz, start, stop) -> int:
        node = len(self._radius)
        idx = self._order[start:stop]
        m = xyz[idx].mean(axis=0)
        norm = np.linalg.norm(m)
        if norm > 1e-12:
            m = m / norm
            c_lat, c_lon = math.asin(max(-1.0, min(1.0, m[2]))), math.atan2(m[1], m[0])
        else:
            c_lat, c_lon = self.lat[idx[0]], self.lon[idx[0]]
        radius = float(haversine_rad(c_lat, c_lon, self.lat[idx], self.lon[idx]).max())
        self._center.append((c_lat, c_lon))
        self._radius.append(radius)
        self._children.append((-1, -1))
        self._slice.append((start, stop))
        if stop - start > self.leaf_size:
            spread = xyz[idx].max(axis=0) - xyz[idx].min(axis=0)
            axis = int(np.argmax(spread))
            order = np.argsort(xyz[idx, axis], kind="stable")
            self._order[start:stop] = idx[order]
            mid = start + (stop - start) // 2
            left = self._build(xyz, start, mid)
            right = self._build(xyz, mid, stop)
            self._children[node] = (left, right)
        return node

    def _height(self, node) -> int:
        left, right = self._children[node]
        if left < 0:
            return 0
        return 1 + max(self._height(left), self._height(right))

    def query(self, lat_rad: float, lon_rad: float) -> tuple:
        """Nearest indexed point: returns (index, central angle). Ties go to the lower index."""
        best = [math.inf, -1]
        stack = [0]
        while stack:
            node = stack.pop()
            c_lat, c_lon = self._center[node]
            lower = float(haversine_rad(lat_rad, lon_rad, c_lat, c_lon)) - self._radius[node]
            # slack absorbs rounding in the triangle-inequality bound
            if lower - 1e-12 > best[0]:
                continue
            left, right = self._children[node]
            if left < 0:
                start, stop = self._slice[node]
                idx = self._order[start:stop]
                d = haversine_rad(lat_rad, lon_rad, self.lat[idx], self.lon[idx])
                for j in np.flatnonzero(d <= best[0]):
                    dj, ij = float(d[j]), int(idx[j])
                    if dj < best[0] or (dj == best[0] and ij < best[1]):
                        best = [dj, ij]
                continue
            dl = float(haversine_rad(lat_rad, lon_rad, *self._center[left])) - self._radius[left]
            dr = float(haversine_rad(lat_rad, lon_rad, *self._center[right])) - self._radius[right]
            # push the farther child first so the nearer one is explored first
            stack.extend([left, right] if dl > dr else [right, left])
        return best[1], best[0]

    def query_many(self, lat_rad, lon_rad) -> tuple:
        idx = np.empty(len(lat_rad), dtype=np.int64)
        dist = np.empty(len(lat_rad))
        for i, (la, lo) in enumerate(zip(lat_rad, lon_rad)):
            idx[i], dist[i] = self.query(float(la), float(lo))
        return idx, dist


def build_index(points: Sequence[GeoPoint], leaf_size: int = 16) -> BallTree:
    if len(points) == 0:
        raise ValueError("cannot index an empty point set")
    return BallTree([p.lat_rad for p in points], [p.lon_rad for p in points], leaf_size)


# -- pairing -------------------------------------------------------------------
@dataclass
class PairedSample:
    ftir_id: int
    sat_id: int
    distance_rad: float
    ftir: object = None
    sat: object = None


def _locations(items):
    """Accept a table with lat/lon columns (degrees) or a list of objects with ``.location``."""
    if hasattr(items, "lat") and hasattr(items, "lon"):
        return np.asarray(items.lat, dtype=np.float64), np.asarray(items.lon, dtype=np.float64)
    locs = np.array([it.location for it in items], dtype=np.float64).reshape(-1, 2)
    return locs[:, 0], locs[:, 1]


def _values(items):
    if hasattr(items, "values"):
        return items.values
    out = []
    for it in items:
        out.append(getattr(it, "absorbance", None) if hasattr(it, "absorbance") else it.reflectance)
    return out


def valid_for_pairing(items, require_corrected: bool = False, corrected_bands: int = 218) -> np.ndarray:
    """Pair-validity conditions: complete measurements, a usable geolocation, and
    (for satellite spectra) water-absorption band removal already applied."""
    lat, lon = _locations(items)
    ok = np.isfinite(lat) & np.isfinite(lon) & (np.abs(lat) <= 90) & (np.abs(lon) <= 180)
    vals = _values(items)
    ok &= np.array([np.all(np.isfinite(v)) for v in vals], dtype=bool)
    if require_corrected:
        ok &= np.array([len(v) == corrected_bands for v in vals], dtype=bool)
    return ok


def make_pairs(ftir, sat, tau: float = DEFAULT_TAU, check_validity: bool = True) -> list:
    """Pair each laboratory sample with its nearest satellite sample within ``tau`` radians."""
    f_lat, f_lon = (np.radians(a) for a in _locations(ftir))
    s_lat, s_lon = (np.radians(a) for a in _locations(sat))
    f_ok = valid_for_pairing(ftir) if check_validity else np.ones(len(f_lat), bool)
    s_ok = valid_for_pairing(sat, require_corrected=True) if check_validity else np.ones(len(s_lat), bool)
    s_ids = np.flatnonzero(s_ok)
    if len(s_ids) == 0:
        return []
    tree = BallTree(s_lat[s_ids], s_lon[s_ids])
    pairs = []
    for i in np.flatnonzero(f_ok):
        j, d = tree.query(float(f_lat[i]), float(f_lon[i]))
        if d <= tau:
            pairs.append(PairedSample(int(i), int(s_ids[j]), float(d)))
    return pairs


def write_pairs_csv(path, pairs: Sequence[PairedSample]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ftir_id", "sat_id", "distance_rad"])
        for p in pairs:
            w.writerow([p.ftir_id, p.sat_id, repr(float(p.distance_rad))])


def read_pairs_csv(path) -> list:
    with open(path, newline="") as fh:
        return [PairedSample(int(r["ftir_id"]), int(r["sat_id"]), float(r["distance_rad"])) for r in csv.DictReader(fh)]


# -- k-means and spatial split -------------------------------------------------
def kmeans(X, k: int, seed: int = 0, max_iter: int = 50, tol: float = 1e-6) -> tuple:
    """Lloyd's algorithm with k-means++ seeding. Returns (labels, centroids)."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if k < 1 or k > n:
        raise ValueError(f"k={k} invalid for {n} samples")
    rng = np.random.default_rng(seed)
    centroids = [X[rng.integers(n)]]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        j = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centroids.append(X[j])
        d2 = np.minimum(d2, ((X - X[j]) ** 2).sum(axis=1))
    C = np.array(centroids)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        new = C.copy()
        for c in range(k):
            members = X[labels == c]
            if len(members):
                new[c] = members.mean(axis=0)
            else:
                new[c] = X[dist.min(axis=1).argmax()]
        shift = np.sqrt(((new - C) ** 2).sum(axis=1)).max()
        C = new
        if shift < tol:
            break
    labels = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2).argmin(axis=1)
    return labels, C


def salinity_strata(labels, edges: Sequence[float] = DEFAULT_STRATA_EDGES) -> np.ndarray:
    """Stratum index: 0 for exactly zero, then (edges[0], edges[1]], ..., and the open top bin."""
    y = np.asarray(labels, dtype=np.float64)
    strata = np.zeros(len(y), dtype=np.int64)
    for i, lo in enumerate(edges):
        strata[y > lo] = i + 1
    return strata


def allocate_counts(n: int, fractions: Sequence[float]) -> list:
    """Largest-remainder rounding: every count is within one of ``f * n``."""
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


@dataclass
class SplitAssignment:
    split: np.ndarray  # per sample, index into SPLITS
    cluster: np.ndarray
    stratum: np.ndarray
    centroids: np.ndarray
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(len(self.split))

    def indices(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLITS.index(name))

    @property
    def train(self):
        return self.indices("train")

    @property
    def validation(self):
        return self.indices("validation")

    @property
    def test(self):
        return self.indices("test")


def spatial_split(
    lat,
    lon,
    labels,
    k: int = 3,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    strata_edges: Sequence[float] = DEFAULT_STRATA_EDGES,
    max_iter: int = 50,
    tol: float = 1e-6,
) -> SplitAssignment:
    """k-means over (lat, lon), then a stratified split inside every cluster."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    n = len(lat)
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} samples")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    cluster, centroids = kmeans(np.stack([lat, lon], axis=1), k, seed, max_iter, tol)
    strata = salinity_strata(labels, strata_edges)
    rng = np.random.default_rng(seed)
    split = np.full(n, -1, dtype=np.int64)
    for c in range(k):
        for s in np.unique(strata[cluster == c]):
            group = np.flatnonzero((cluster == c) & (strata == s))
            group = group[rng.permutation(len(group))]
            start = 0
            for which, count in enumerate(allocate_counts(len(group), fractions)):
                split[group[start : start + count]] = which
                start += count
    return SplitAssignment(split, cluster, strata, centroids)


def audit_leakage(assign: SplitAssignment, lat, lon) -> int:
    """Count samples whose recorded cluster disagrees with their nearest centroid,
    or that were assigned to no split or to more than one."""
    X = np.stack([np.asarray(lat, float), np.asarray(lon, float)], axis=1)
    nearest = ((X[:, None, :] - assign.centroids[None]) ** 2).sum(axis=2).argmin(axis=1)
    bad = int(np.sum(nearest != assign.cluster))
    bad += int(np.sum((assign.split < 0) | (assign.split >= len(SPLITS))))
    return bad


def undersample_zeros(labels, keep_fraction: float = 0.10, seed: int = 0) -> np.ndarray:
    """Indices to keep: a seeded ``keep_fraction`` of zero-label samples plus every nonzero one."""
    y = np.asarray(labels, dtype=np.float64)
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in [0, 1]")
    zeros = np.flatnonzero(y == 0)
    rng = np.random.default_rng(seed)
    kept = rng.permutation(zeros)[: int(round(keep_fraction * len(zeros)))]
    return np.sort(np.concatenate([np.flatnonzero(y != 0), kept]))


def write_split_csv(path, assign: SplitAssignment) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster", "stratum", "split"])
        for i, c, s, sp in zip(assign.ids, assign.cluster, assign.stratum, assign.split):
            w.writerow([int(i), int(c), int(s), SPLITS[sp]])


def read_split_csv(path) -> SplitAssignment:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = np.array([int(r["id"]) for r in rows], dtype=np.int64)
    cluster = np.array([int(r["cluster"]) for r in rows], dtype=np.int64)
    stratum = np.array([int(r["stratum"]) for r in rows], dtype=np.int64)
    split = np.array([SPLITS.index(r["split"]) for r in rows], dtype=np.int64)
    return SplitAssignment(split, cluster, stratum, np.empty((0, 2)), ids)
