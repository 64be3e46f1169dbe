"""Pre-training DBSCAN over invariant client characteristics.

Each clustering dimension (location, orientation) is clustered on its own, so
one client can hold a cluster in both. Neighbourhood counts include the point
itself. Clusters are numbered in discovery order over clients sorted by id,
and a border point reachable from several clusters joins the one with the
lowest such number.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

EARTH_RADIUS_KM = 6371.0
NOISE = -1


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClientProfile:
    client_id: str
    latitude: float
    longitude: float
    orientation_azimuth: float
    kwp: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude < 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")
        if not 0.0 <= self.orientation_azimuth < 360.0:
            raise ValueError(f"azimuth out of range: {self.orientation_azimuth}")
        if not self.kwp > 0:
            raise ValueError("kwp must be positive")


def location_distance(a: ClientProfile, b: ClientProfile) -> float:
    """Great-circle distance in kilometres (haversine)."""
    phi1, phi2 = math.radians(a.latitude), math.radians(b.latitude)
    dphi = phi2 - phi1
    dlmb = math.radians(b.longitude - a.longitude)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def orientation_distance(a: ClientProfile, b: ClientProfile) -> float:
    """Smallest angle between two azimuths, in [0, 180] degrees."""
    d = abs(a.orientation_azimuth - b.orientation_azimuth) % 360.0
    return min(d, 360.0 - d)


class Dimension(str, enum.Enum):
    LOCATION = "location"
    ORIENTATION = "orientation"


METRICS: dict[str, Callable[[ClientProfile, ClientProfile], float]] = {
    "haversine_km": location_distance,
    "azimuth_deg": orientation_distance,
}


@dataclass(frozen=True)
class ClusteringDimension:
    name: Dimension
    eps: float
    min_pts: int
    metric: str = ""

    def __post_init__(self):
        object.__setattr__(self, "name", Dimension(self.name))
        if not self.metric:
            default = "haversine_km" if self.name is Dimension.LOCATION else "azimuth_deg"
            object.__setattr__(self, "metric", default)
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")

    def distance(self, a: ClientProfile, b: ClientProfile) -> float:
        return METRICS[self.metric](a, b)


DEFAULT_LOCATION = ClusteringDimension(Dimension.LOCATION, eps=50.0, min_pts=3)
DEFAULT_ORIENTATION = ClusteringDimension(Dimension.ORIENTATION, eps=15.0, min_pts=3)


def cluster_key(dim: Dimension | str, cluster_id: int) -> str:
    return f"{Dimension(dim).value}:{cluster_id}"


def _neighbour_lists(profiles: list[ClientProfile], dim: ClusteringDimension) -> list[list[int]]:
    n = len(profiles)
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            if dim.distance(profiles[i], profiles[j]) <= dim.eps:
                nbrs[i].append(j)
                if j != i:
                    nbrs[j].append(i)
    for lst in nbrs:
        lst.sort()
    return nbrs


def dbscan(profiles: Iterable[ClientProfile], dim: ClusteringDimension) -> dict[str, int]:
    """Batch DBSCAN; returns client_id -> cluster id, or NOISE (-1)."""
    pts = sorted(profiles, key=lambda p: p.client_id)
    if not pts:
        raise ClusteringError("cannot cluster an empty profile set")
    if len({p.client_id for p in pts}) != len(pts):
        raise ClusteringError("duplicate client ids")
    nbrs = _neighbour_lists(pts, dim)
    core = [len(nb) >= dim.min_pts for nb in nbrs]
    labels = [None] * len(pts)
    next_id = 0
    for i in range(len(pts)):
        if labels[i] is not None or not core[i]:
            continue
        cid = next_id
        next_id += 1
        labels[i] = cid
        frontier = list(nbrs[i])
        while frontier:
            j = frontier.pop(0)
            if labels[j] is not None:
                continue
            labels[j] = cid
            if core[j]:
                frontier.extend(k for k in nbrs[j] if labels[k] is None)
    return {p.client_id: (NOISE if lab is None else lab) for p, lab in zip(pts, labels)}


@dataclass(frozen=True)
class MergeEvent:
    survivor: int
    retired: tuple[int, ...]


@dataclass
class InsertResult:
    label: int
    changed: dict[str, tuple[int, int]] = field(default_factory=dict)
    merges: list[MergeEvent] = field(default_factory=list)
    created: list[int] = field(default_factory=list)


class IncrementalDBSCAN:
    """DBSCAN state that accepts one point at a time.

    Insertions only add points, so cores never demote and core components can
    only grow or merge. Components are tracked with union-find; each keeps a
    stable public id. When components merge, the one with more members keeps
    its id (ties go to the lower id) and the rest are retired, with aliases
    left behind so old ids still resolve.
    """

    def __init__(self, dim: ClusteringDimension):
        self.dim = dim
        self.profiles: list[ClientProfile] = []
        self.index: dict[str, int] = {}
        self.nbrs: list[list[int]] = []
        self.core: list[bool] = []
        self._parent: list[int] = []
        self._root_id: dict[int, int] = {}
        self._next_id = 0
        self.aliases: dict[int, int] = {}
        self.merge_log: list[MergeEvent] = []

    @classmethod
    def from_profiles(cls, profiles: Iterable[ClientProfile],
                      dim: ClusteringDimension) -> "IncrementalDBSCAN":
        state = cls(dim)
        for p in sorted(profiles, key=lambda p: p.client_id):
            state.insert(p)
        return state

    def __len__(self) -> int:
        return len(self.profiles)

    def _find(self, i: int) -> int:
        while self._parent[i] != i:
            self._parent[i] = self._parent[self._parent[i]]
            i = self._parent[i]
        return i

    def resolve(self, cluster_id: int) -> int:
        while cluster_id in self.aliases:
            cluster_id = self.aliases[cluster_id]
        return cluster_id

    def _min_member_key(self) -> dict[int, str]:
        # canonical order of components: smallest core client_id, as batch discovers them
        best: dict[int, str] = {}
        for i, is_core in enumerate(self.core):
            if is_core:
                r = self._find(i)
                cid = self.profiles[i].client_id
                if r not in best or cid < best[r]:
                    best[r] = cid
        return best

    def labels(self) -> dict[str, int]:
        order = self._min_member_key()
        out: dict[str, int] = {}
        for i, p in enumerate(self.profiles):
            if self.core[i]:
                out[p.client_id] = self._root_id[self._find(i)]
                continue
            roots = {self._find(j) for j in self.nbrs[i] if self.core[j]}
            if not roots:
                out[p.client_id] = NOISE
            else:
                out[p.client_id] = self._root_id[min(roots, key=order.__getitem__)]
        return out

    def members(self) -> dict[int, list[str]]:
        groups: dict[int, list[str]] = {}
        for cid, lab in self.labels().items():
            if lab != NOISE:
                groups.setdefault(lab, []).append(cid)
        return groups

    def insert(self, p: ClientProfile, dim: ClusteringDimension | None = None) -> InsertResult:
        if dim is not None and dim != self.dim:
            raise ClusteringError(f"dimension mismatch: state is {self.dim}, got {dim}")
        if p.client_id in self.index:
            raise ClusteringError(f"client {p.client_id!r} already clustered")
        before = self.labels()
        sizes = {k: len(v) for k, v in self.members().items()}

        new = len(self.profiles)
        self.profiles.append(p)
        self.index[p.client_id] = new
        self._parent.append(new)
        self.core.append(False)
        mine = [new]
        for j in range(new):
            if self.dim.distance(p, self.profiles[j]) <= self.dim.eps:
                mine.append(j)
                self.nbrs[j].append(new)
        self.nbrs.append(sorted(mine))

        promoted = [j for j in self.nbrs[new]
                    if not self.core[j] and len(self.nbrs[j]) >= self.dim.min_pts]
        for j in promoted:
            self.core[j] = True

        result = InsertResult(label=NOISE)
        for j in promoted:
            for k in self.nbrs[j]:
                if self.core[k]:
                    self._union(k, j, sizes, result)
        for j in promoted:
            r = self._find(j)
            if r not in self._root_id:
                self._root_id[r] = self._next_id
                result.created.append(self._next_id)
                self._next_id += 1

        after = self.labels()
        result.label = after[p.client_id]
        for cid, old in before.items():
            new_lab = after[cid]
            if old != new_lab and not (old != NOISE and self.resolve(old) == new_lab):
                result.changed[cid] = (old, new_lab)
        return result

    def _union(self, a: int, b: int, sizes: dict[int, int], result: InsertResult) -> None:
        ra, rb = self._find(a), self._find(b)
        if ra == rb:
            return
        ia, ib = self._root_id.get(ra), self._root_id.get(rb)
        if ia is not None and ib is not None:
            # larger membership survives; ties keep the lower id
            sa, sb = sizes.get(ia, 0), sizes.get(ib, 0)
            keep_a = (sa, -ia) >= (sb, -ib)
            survivor, retired = (ia, ib) if keep_a else (ib, ia)
            root, child = (ra, rb) if keep_a else (rb, ra)
            self.aliases[retired] = survivor
            sizes[survivor] = sa + sb
            event = MergeEvent(survivor, (retired,))
            self.merge_log.append(event)
            result.merges.append(event)
            del self._root_id[child]
        else:
            root, child = (ra, rb) if ia is not None or ib is None else (rb, ra)
            self._root_id.pop(child, None)
        self._parent[child] = root


def incremental_insert(state: IncrementalDBSCAN, p: ClientProfile,
                       dim: ClusteringDimension) -> tuple[IncrementalDBSCAN, InsertResult]:
    result = state.insert(p, dim)
    return state, result


def same_partition(a: Mapping[str, int], b: Mapping[str, int]) -> bool:
    """True if two labelings agree up to a renaming of cluster ids."""
    if set(a) != set(b):
        return False

    def blocks(lab):
        out: dict[int, set] = {}
        for k, v in lab.items():
            out.setdefault(v, set()).add(k)
        noise = frozenset(out.pop(NOISE, set()))
        return noise, {frozenset(s) for s in out.values()}

    return blocks(a) == blocks(b)


def assignments_to_csv(assignments: Mapping[str, Mapping[str, int]]) -> str:
    """Rows of client_id, dimension, cluster_id|NOISE."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["client_id", "dimension", "cluster_id"])
    for client_id in sorted(assignments):
        for dim_name in sorted(assignments[client_id]):
            lab = assignments[client_id][dim_name]
            w.writerow([client_id, dim_name, "NOISE" if lab == NOISE else lab])
    return buf.getvalue()


def assignments_from_csv(text: str) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        lab = row["cluster_id"]
        out.setdefault(row["client_id"], {})[row["dimension"]] = (
            NOISE if lab == "NOISE" else int(lab))
    return out


CLEAR_SKY_CLOUDS = 5.0


def solar_noon_minute(longitude: float | None) -> float:
    """Clock minute of solar noon for a zone centred on 15 degrees east."""
    if longitude is None:
        return 720.0
    return 720.0 - 4.0 * (longitude - 15.0)


def infer_orientation(series, longitude: float | None = None,
                      clear_threshold: float = CLEAR_SKY_CLOUDS) -> float:
    """Estimate panel azimuth from the timing of clear-sky production peaks.

    A day counts as clear when cloud cover stays below ``clear_threshold``
    at every daylight step. The median clock time of the (lightly smoothed)
    daily peak is mapped to an azimuth at 15 degrees per hour, with a peak
    at solar noon meaning due south (180).
    """
    steps = 96
    power = np.asarray(series.production_kw, dtype=float)
    clouds = np.asarray(series.clouds, dtype=float)
    ghi = np.asarray(series.ghi, dtype=float)
    n_days = len(power) // steps
    kernel = np.ones(3) / 3.0
    peaks = []
    for d in range(n_days):
        sl = slice(d * steps, (d + 1) * steps)
        day_p, day_c, lit = power[sl], clouds[sl], ghi[sl] > 0
        if not lit.any() or day_p.max() <= 0 or (day_c[lit] >= clear_threshold).any():
            continue
        smooth = np.convolve(day_p, kernel, mode="same")
        peaks.append(int(np.argmax(smooth)) * 15.0)
    if not peaks:
        raise ClusteringError("no clear-sky day in series; cannot infer orientation")
    offset_h = (float(np.median(peaks)) - solar_noon_minute(longitude)) / 60.0
    return (180.0 + 15.0 * offset_h) % 360.0
