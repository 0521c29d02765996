"""Great-circle kernels and country-boundary handling.

Everything here works on a spherical Earth of mean radius
``EARTH_RADIUS_KM``.  Point collections are passed around as ``(n, 2)``
float arrays of ``(lat, lon)`` in degrees; the :class:`GeoPoint` dataclass
is the scalar form used at API boundaries.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
FIBER_KM_PER_MS = 199.86
HALF_CIRCUMFERENCE_KM = math.pi * EARTH_RADIUS_KM

DEFAULT_RESOLUTION_KM = 25.0
FINE_RESOLUTION_KM = 5.0

BUNDLED_BOUNDARIES = Path(__file__).parent / "data" / "ne_10m_admin0_countries.topo.json"


class BoundaryError(ValueError):
    """Raised for unreadable or geometrically invalid boundary input."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        if self.lon == 180.0:
            object.__setattr__(self, "lon", -180.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.lat, self.lon], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "GeoPoint":
        return cls(float(arr[0]), normalize_lon(float(arr[1])))


def normalize_lon(lon):
    """Wrap longitudes into [-180, 180)."""
    return (np.asarray(lon, dtype=float) + 180.0) % 360.0 - 180.0 if np.ndim(lon) else (
        (float(lon) + 180.0) % 360.0 - 180.0
    )


# ---------------------------------------------------------------------------
# distance kernels


def to_unit_vectors(points: np.ndarray) -> np.ndarray:
    """(n, 2) lat/lon degrees -> (n, 3) unit vectors."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    lat = np.radians(pts[:, 0])
    lon = np.radians(pts[:, 1])
    clat = np.cos(lat)
    return np.column_stack([clat * np.cos(lon), clat * np.sin(lon), np.sin(lat)])


def from_unit_vectors(vecs: np.ndarray) -> np.ndarray:
    v = np.asarray(vecs, dtype=float).reshape(-1, 3)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    lat = np.degrees(np.arcsin(np.clip(v[:, 2], -1.0, 1.0)))
    lon = np.degrees(np.arctan2(v[:, 1], v[:, 0]))
    return np.column_stack([lat, normalize_lon(lon)])


def haversine_km(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in km; inputs in degrees, broadcastable."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def great_circle_km(a: GeoPoint, b: GeoPoint) -> float:
    return float(haversine_km(a.lat, a.lon, b.lat, b.lon))


def chord_to_km(chord):
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.clip(np.asarray(chord) / 2, 0.0, 1.0))


def km_to_chord(km):
    return 2 * np.sin(np.asarray(km, dtype=float) / (2 * EARTH_RADIUS_KM))


def pairwise_km(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Great-circle distance matrix between two sets of unit vectors."""
    diff2 = np.maximum(2.0 - 2.0 * (u @ v.T), 0.0)
    return chord_to_km(np.sqrt(diff2))


def km_to_ms(d_km):
    """One-way propagation delay in fibre for a distance in km."""
    if np.any(np.asarray(d_km) < 0):
        raise ValueError("distance must be non-negative")
    out = np.asarray(d_km, dtype=float) / FIBER_KM_PER_MS
    return float(out) if out.ndim == 0 else out


def ms_to_km(ms):
    out = np.asarray(ms, dtype=float) * FIBER_KM_PER_MS
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# rings and polygons


def _ring_array(coords) -> np.ndarray:
    """GeoJSON [lon, lat] list -> closed (n, 2) lat/lon array."""
    arr = np.asarray(coords, dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise BoundaryError("ring is not a list of coordinate pairs")
    ring = arr[:, [1, 0]].copy()
    if len(ring) and not np.array_equal(ring[0], ring[-1]):
        ring = np.vstack([ring, ring[:1]])
    return ring


def distinct_vertices(ring: np.ndarray) -> int:
    return len(np.unique(np.round(ring, 9), axis=0))


def spherical_ring_area_km2(ring: np.ndarray) -> float:
    """Unsigned area enclosed by a closed ring, by summed spherical excess.

    Each edge contributes the signed excess of the quadrilateral between the
    edge and the equator.  Rings that wind around a pole are corrected by
    the hemisphere area; the smaller of the two complementary regions is
    returned.
    """
    lat = np.radians(ring[:, 0])
    lon = np.radians(ring[:, 1])
    dl = np.diff(lon)
    dl = (dl + np.pi) % (2 * np.pi) - np.pi
    t1 = np.tan(lat[:-1] / 2)
    t2 = np.tan(lat[1:] / 2)
    excess = 2 * np.arctan2(np.tan(dl / 2) * (t1 + t2), 1 + t1 * t2)
    total = float(np.sum(excess))
    if abs(float(np.sum(dl))) > np.pi:  # winds around a pole
        total = 2 * np.pi - abs(total)
    total = abs(total) % (4 * np.pi)
    return min(total, 4 * np.pi - total) * EARTH_RADIUS_KM**2


def split_antimeridian(ring: np.ndarray) -> list[np.ndarray]:
    """Split a ring whose edges jump across lon = +-180 into closed pieces."""
    lon = ring[:, 1]
    if not np.any(np.abs(np.diff(lon)) > 180.0):
        return [ring]
    from shapely.geometry import Polygon, box

    unwrapped = np.concatenate([[lon[0]], lon[0] + np.cumsum(((np.diff(lon) + 180) % 360) - 180)])
    poly = Polygon(np.column_stack([unwrapped, ring[:, 0]])).buffer(0)
    pieces = []
    for k in range(-2, 3):
        part = poly.intersection(box(-180 + 360 * k, -90, 180 + 360 * k, 90))
        geoms = getattr(part, "geoms", [part])
        for g in geoms:
            if g.is_empty or g.geom_type != "Polygon":
                continue
            xy = np.asarray(g.exterior.coords)
            piece = np.column_stack([xy[:, 1], xy[:, 0] - 360 * k])
            piece[:, 1] = np.clip(piece[:, 1], -180.0, 180.0)
            pieces.append(piece)
    return pieces or [ring]


@dataclass
class Polygon:
    """A polygon: closed outer ring plus optional closed holes, (n, 2) lat/lon."""

    ring: np.ndarray
    holes: list[np.ndarray] = field(default_factory=list)

    @property
    def rings(self) -> list[np.ndarray]:
        return [self.ring, *self.holes]

    def area_km2(self) -> float:
        return spherical_ring_area_km2(self.ring) - sum(spherical_ring_area_km2(h) for h in self.holes)


@dataclass
class Country:
    name: str
    iso_code: str
    polygons: list[Polygon]
    mainland_index: int = 0

    @property
    def mainland(self) -> Polygon:
        return self.polygons[self.mainland_index]

    def parts(self, mode: str = "mainland") -> list[Polygon]:
        if mode == "mainland":
            return [self.mainland]
        if mode == "entire":
            return list(self.polygons)
        raise ValueError(f"unknown mode {mode!r}; expected 'mainland' or 'entire'")


@dataclass
class CountryBoundarySet:
    countries: list[Country]
    source: str = ""

    def __post_init__(self):
        self._by_key = {}
        for c in self.countries:
            for key in (c.name, c.iso_code):
                if key:
                    self._by_key.setdefault(key.lower(), c)

    def __len__(self):
        return len(self.countries)

    def __iter__(self):
        return iter(self.countries)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.countries]

    def get(self, key: str) -> Country:
        try:
            return self._by_key[key.lower()]
        except KeyError:
            raise KeyError(f"unknown country {key!r}; valid names: {', '.join(sorted(self.names))}") from None

    def __contains__(self, key: str) -> bool:
        return key.lower() in self._by_key


def _mainland_index(polygons: Sequence[Polygon]) -> int:
    areas = [p.area_km2() for p in polygons]
    # np.argmax returns the first maximum, which is the tie-break we want
    return int(np.argmax(areas))


def _polygons_from_geometry(name: str, geom: dict) -> list[Polygon]:
    gtype = geom.get("type")
    if gtype == "Polygon":
        polys = [geom["coordinates"]]
    elif gtype == "MultiPolygon":
        polys = geom["coordinates"]
    else:
        raise BoundaryError(f"{name}: unsupported geometry type {gtype!r}")
    out, degenerate = [], []
    for rings in polys:
        if not rings:
            raise BoundaryError(f"{name}: polygon without rings")
        try:
            outer = _ring_array(rings[0])
            holes = [_ring_array(h) for h in rings[1:]]
        except (BoundaryError, ValueError, TypeError) as exc:
            raise BoundaryError(f"{name}: malformed ring ({exc})") from exc
        if np.any(np.abs(outer[:, 0]) > 90) or np.any(np.abs(outer[:, 1]) > 180):
            raise BoundaryError(f"{name}: coordinates out of range")
        if distinct_vertices(outer) < 3:
            # quantisation slivers; not an error unless nothing else remains
            log.debug("%s: dropping degenerate ring", name)
            degenerate.append(Polygon(outer))
            continue
        holes = [h for h in holes if distinct_vertices(h) >= 3]
        pieces = split_antimeridian(outer)
        for i, piece in enumerate(pieces):
            out.append(Polygon(piece, holes if i == 0 else []))
    if not out and degenerate:
        # a country smaller than the quantisation grid is still a location
        log.warning("%s: only degenerate rings; keeping them as point-like polygons", name)
        return degenerate
    if not out:
        raise BoundaryError(f"{name}: no usable polygon")
    return out


def topojson_to_features(topo: dict, object_name: str | None = None) -> list[dict]:
    """Decode a TopoJSON topology into GeoJSON-style feature dicts."""
    transform = topo.get("transform")
    arcs = []
    for arc in topo["arcs"]:
        a = np.asarray(arc, dtype=float)
        if transform:
            a = np.cumsum(a, axis=0)
            a = a * transform["scale"] + transform["translate"]
        arcs.append(a)

    def ring(indices):
        parts = []
        for i in indices:
            a = arcs[i] if i >= 0 else arcs[~i][::-1]
            parts.append(a if not parts else a[1:])
        return np.vstack(parts).tolist()

    if object_name is None:
        object_name = "countries" if "countries" in topo["objects"] else next(iter(topo["objects"]))
    feats = []
    for g in topo["objects"][object_name]["geometries"]:
        props = dict(g.get("properties") or {})
        if g.get("id") is not None:
            props.setdefault("iso_code", str(g["id"]))
        if g["type"] == "Polygon":
            coords = [ring(r) for r in g["arcs"]]
        elif g["type"] == "MultiPolygon":
            coords = [[ring(r) for r in poly] for poly in g["arcs"]]
        else:
            coords = None
        feats.append({"type": "Feature", "properties": props, "geometry": {"type": g["type"], "coordinates": coords}})
    return feats


_NAME_KEYS = ("name", "NAME", "ADMIN", "admin", "NAME_LONG", "name_long")
_ISO_KEYS = ("iso_code", "ISO_A3", "iso_a3", "ADM0_A3", "ISO_N3", "iso_n3", "id")


def _first(props: dict, keys) -> str:
    for k in keys:
        v = props.get(k)
        if v not in (None, "", "-99"):
            return str(v)
    return ""


def load_boundaries(path=None) -> CountryBoundarySet:
    """Read a GeoJSON FeatureCollection (or TopoJSON topology) of countries.

    Without a path the bundled Natural Earth 1:10m Admin-0 topology is used.
    Features sharing a name are merged into one country.
    """
    path = Path(path) if path is not None else BUNDLED_BOUNDARIES
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise BoundaryError(f"{path}: empty boundary file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BoundaryError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("type") == "Topology":
        features = topojson_to_features(doc)
    elif doc.get("type") == "FeatureCollection":
        features = doc.get("features") or []
    else:
        raise BoundaryError(f"{path}: expected a FeatureCollection or Topology")
    if not features:
        raise BoundaryError(f"{path}: no features")

    merged: dict[str, tuple[str, list[Polygon]]] = {}
    for i, feat in enumerate(features):
        props = feat.get("properties") or {}
        name = _first(props, _NAME_KEYS) or f"feature-{i}"
        geom = feat.get("geometry")
        if not geom:
            raise BoundaryError(f"{name}: missing geometry")
        polys = _polygons_from_geometry(name, geom)
        iso, acc = merged.get(name, (_first(props, _ISO_KEYS), []))
        acc.extend(polys)
        merged[name] = (iso, acc)

    countries = [Country(n, iso, polys, _mainland_index(polys)) for n, (iso, polys) in merged.items()]
    log.info("loaded %d countries from %s", len(countries), path)
    return CountryBoundarySet(countries, source=str(path))


# ---------------------------------------------------------------------------
# sampling


def _slerp_edge(u0: np.ndarray, u1: np.ndarray, n_inner: int) -> np.ndarray:
    """n_inner evenly spaced interior points on the great circle u0 -> u1."""
    omega = math.acos(max(-1.0, min(1.0, float(u0 @ u1))))
    ts = np.arange(1, n_inner + 1) / (n_inner + 1)
    if omega < 1e-12:
        return np.repeat(u0[None, :], n_inner, axis=0)
    s = math.sin(omega)
    return (np.sin((1 - ts) * omega)[:, None] * u0 + np.sin(ts * omega)[:, None] * u1) / s


def sample_boundary(ring: np.ndarray, resolution_km: float) -> np.ndarray:
    """Densify a closed ring so consecutive points are at most resolution_km apart.

    All original vertices are kept; interior points are inserted along the
    great-circle edges.  Returns a closed (n, 2) lat/lon array.
    """
    if resolution_km <= 0:
        raise ValueError("resolution_km must be positive")
    ring = np.asarray(ring, dtype=float)
    if distinct_vertices(ring) < 3:
        raise BoundaryError("degenerate ring: fewer than 3 distinct vertices")
    u = to_unit_vectors(ring)
    seg = chord_to_km(np.linalg.norm(np.diff(u, axis=0), axis=1))
    out = [u[:1]]
    for i, length in enumerate(seg):
        n_inner = max(int(math.ceil(length / resolution_km - 1e-9)) - 1, 0)
        if n_inner:
            out.append(_slerp_edge(u[i], u[i + 1], n_inner))
        out.append(u[i + 1 : i + 2])
    pts = from_unit_vectors(np.vstack(out))
    # keep the original vertices bit-identical
    return _restore_vertices(pts, ring, seg, resolution_km)


def _restore_vertices(pts, ring, seg, resolution_km):
    idx = 0
    pts[0] = ring[0]
    for i, length in enumerate(seg):
        idx += max(int(math.ceil(length / resolution_km - 1e-9)) - 1, 0) + 1
        pts[idx] = ring[i + 1]
    return pts


def resample_ring(ring: np.ndarray, spacing_km: float) -> np.ndarray:
    """Points at (near) uniform arc-length spacing along a closed ring.

    Unlike :func:`sample_boundary` this drops vertices: it is the grid the
    pairwise searches run on.  Consecutive output points are at most
    ``spacing_km`` apart along the ring (open array, no closing repeat).
    """
    u = to_unit_vectors(ring)
    seg = chord_to_km(np.linalg.norm(np.diff(u, axis=0), axis=1))
    total = float(seg.sum())
    if total == 0:
        return ring[:1].copy()
    n = max(int(math.ceil(total / spacing_km)), 3)
    targets = np.arange(n) * (total / n)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    j = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    frac = np.where(seg[j] > 0, (targets - cum[j]) / np.where(seg[j] > 0, seg[j], 1), 0.0)
    v = u[j] * (1 - frac)[:, None] + u[j + 1] * frac[:, None]
    return from_unit_vectors(v)


def boundary_points(polygons: Iterable[Polygon], spacing_km: float) -> np.ndarray:
    """All rings of the given polygons resampled at spacing_km, stacked."""
    chunks = [resample_ring(r, spacing_km) for p in polygons for r in p.rings]
    return np.vstack(chunks)


def country_points(country: Country, spacing_km: float, mode: str = "mainland") -> np.ndarray:
    return boundary_points(country.parts(mode), spacing_km)


def dense_country_points(country: Country, spacing_km: float, mode: str = "mainland") -> np.ndarray:
    """Every boundary vertex plus densification to spacing_km (used by fine passes)."""
    chunks = []
    for p in country.parts(mode):
        for r in p.rings:
            chunks.append(sample_boundary(r, spacing_km) if distinct_vertices(r) >= 3 else r)
    return np.vstack(chunks)


# ---------------------------------------------------------------------------
# intra / inter country distances


def farthest_pair(u: np.ndarray, block: int = 2048) -> tuple[float, int, int]:
    """Largest great-circle distance within a set of unit vectors (blocked brute force)."""
    best, bi, bj = -1.0, 0, 0
    for s in range(0, len(u), block):
        dots = u[s : s + block] @ u.T
        k = int(np.argmin(dots))
        r, c = divmod(k, dots.shape[1])
        val = float(chord_to_km(math.sqrt(max(2 - 2 * dots[r, c], 0.0))))
        if val > best:
            best, bi, bj = val, s + r, c
    return best, bi, bj


def _near(points_u: np.ndarray, centre_u: np.ndarray, radius_km: float) -> np.ndarray:
    return points_u[np.linalg.norm(points_u - centre_u, axis=1) <= km_to_chord(radius_km)]


def max_intra_distance(
    country: Country,
    resolution_km: float = DEFAULT_RESOLUTION_KM,
    mode: str = "mainland",
    fine_km: float | None = FINE_RESOLUTION_KM,
) -> tuple[float, tuple[GeoPoint, GeoPoint]]:
    """Largest pairwise distance between boundary points of a country.

    The search runs on a ``resolution_km`` grid; with ``fine_km`` set the
    best pair is then re-searched on a ``fine_km`` grid within two coarse
    steps of each endpoint.
    """
    pts = country_points(country, resolution_km, mode)
    u = to_unit_vectors(pts)
    best, i, j = farthest_pair(u)
    a, b = u[i], u[j]
    if fine_km and fine_km < resolution_km:
        fu = to_unit_vectors(dense_country_points(country, fine_km, mode))
        na, nb = _near(fu, a, 2 * resolution_km), _near(fu, b, 2 * resolution_km)
        if len(na) and len(nb):
            d = pairwise_km(na, nb)
            k = int(np.argmax(d))
            r, c = divmod(k, d.shape[1])
            if d[r, c] > best:
                best, a, b = float(d[r, c]), na[r], nb[c]
    pa, pb = from_unit_vectors(np.vstack([a, b]))
    return best, (GeoPoint.from_array(pa), GeoPoint.from_array(pb))


class BoundaryIndex:
    """Per-country boundary samples with KD-trees for nearest-point queries."""

    def __init__(self, boundaries: CountryBoundarySet, resolution_km=DEFAULT_RESOLUTION_KM, mode="mainland"):
        self.boundaries = boundaries
        self.resolution_km = resolution_km
        self.mode = mode
        self.points = {c.name: country_points(c, resolution_km, mode) for c in boundaries}
        self.units = {k: to_unit_vectors(v) for k, v in self.points.items()}
        self._trees: dict[str, cKDTree] = {}

    def tree(self, name: str) -> cKDTree:
        if name not in self._trees:
            self._trees[name] = cKDTree(self.units[name])
        return self._trees[name]

    def nearest_pair(self, a: str, b: str) -> tuple[float, int, int]:
        """(distance km, index in a, index in b) of the closest sample pair."""
        ua = self.units[a]
        small, big = (a, b) if len(ua) <= len(self.units[b]) else (b, a)
        d, idx = self.tree(big).query(self.units[small])
        k = int(np.argmin(d))
        dist = float(chord_to_km(d[k]))
        if small == a:
            return dist, k, int(idx[k])
        return dist, int(idx[k]), k


def min_inter_distance(
    c1: Country,
    c2: Country,
    resolution_km: float = DEFAULT_RESOLUTION_KM,
    mode: str = "mainland",
    fine_km: float | None = FINE_RESOLUTION_KM,
    index: BoundaryIndex | None = None,
) -> tuple[float, tuple[GeoPoint, GeoPoint]]:
    """Smallest distance between boundary points of two different countries."""
    if c1.name == c2.name:
        raise ValueError("min_inter_distance needs two distinct countries")
    if index is not None:
        u1, u2 = index.units[c1.name], index.units[c2.name]
        best, i, j = index.nearest_pair(c1.name, c2.name)
    else:
        u1 = to_unit_vectors(country_points(c1, resolution_km, mode))
        u2 = to_unit_vectors(country_points(c2, resolution_km, mode))
        d, idx = cKDTree(u2).query(u1)
        i = int(np.argmin(d))
        j = int(idx[i])
        best = float(chord_to_km(d[i]))
    a, b = u1[i], u2[j]
    if fine_km and fine_km < resolution_km:
        f1 = _near(to_unit_vectors(dense_country_points(c1, fine_km, mode)), a, 2 * resolution_km)
        f2 = _near(to_unit_vectors(dense_country_points(c2, fine_km, mode)), b, 2 * resolution_km)
        if len(f1) and len(f2):
            d = pairwise_km(f1, f2)
            k = int(np.argmin(d))
            r, c = divmod(k, d.shape[1])
            if d[r, c] < best:
                best, a, b = float(d[r, c]), f1[r], f2[c]
    pa, pb = from_unit_vectors(np.vstack([a, b]))
    return best, (GeoPoint.from_array(pa), GeoPoint.from_array(pb))


@dataclass
class DistanceRow:
    country: str
    mode: str
    max_intra_km: float
    nearest_country: str
    min_inter_km: float


def distance_table(
    boundaries: CountryBoundarySet,
    mode: str = "mainland",
    resolution_km: float = DEFAULT_RESOLUTION_KM,
    fine_km: float | None = FINE_RESOLUTION_KM,
) -> tuple[list[DistanceRow], np.ndarray]:
    """Per-country max intra distance, nearest neighbour, and the full min-inter matrix."""
    index = BoundaryIndex(boundaries, resolution_km, mode)
    names = boundaries.names
    n = len(names)
    inter = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d, _, _ = index.nearest_pair(names[i], names[j])
            inter[i, j] = inter[j, i] = d
    rows = []
    for i, c in enumerate(boundaries):
        intra, _ = max_intra_distance(c, resolution_km, mode, fine_km)
        if n < 2:
            rows.append(DistanceRow(c.name, mode, intra, "", float("nan")))
            continue
        others = np.where(np.arange(n) == i, np.inf, inter[i])
        j = int(np.argmin(others))
        # refinement only lowers a pair's value, so the argmin is unchanged
        d, _ = min_inter_distance(c, boundaries.countries[j], resolution_km, mode, fine_km, index)
        inter[i, j] = inter[j, i] = min(inter[i, j], d)
        rows.append(DistanceRow(c.name, mode, intra, names[j], float(inter[i, j])))
    return rows, inter


def write_distance_csv(rows: Sequence[DistanceRow], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["country", "mode", "max_intra_km", "nearest_country", "min_inter_km"])
        for r in rows:
            w.writerow([r.country, r.mode, f"{r.max_intra_km:.3f}", r.nearest_country, f"{r.min_inter_km:.3f}"])
