"""Optimal interception attacks, coverage analytics, and the mid-attack RTT bound.

An attack on a (victim, threat) country pair places source S and
destination D on the victim's boundary and the interceptor A on the threat's
boundary.  Pre-attack round-trip distance is ``2 d(S,D)``; mid-attack it is
``d(S,D) + d(S,A) + d(D,A)``.  The optimal attack minimises the difference.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from .geodesy import (
    DEFAULT_RESOLUTION_KM,
    EARTH_RADIUS_KM,
    FIBER_KM_PER_MS,
    FINE_RESOLUTION_KM,
    Country,
    CountryBoundarySet,
    GeoPoint,
    Polygon,
    boundary_points,
    chord_to_km,
    country_points,
    farthest_pair,
    from_unit_vectors,
    km_to_chord,
    pairwise_km,
    to_unit_vectors,
)

log = logging.getLogger(__name__)

COARSE_FACTOR = 4
EXHAUSTIVE_BUDGET = 4e7


@dataclass
class OptimalAttack:
    victim: str
    threat: str
    s: GeoPoint
    d: GeoPoint
    a: GeoPoint
    delta_pre_km: float
    delta_mid_km: float
    delta_dev_km: float
    tau_pre_ms: float
    tau_mid_ms: float
    tau_dev_ms: float

    @classmethod
    def from_points(cls, victim: str, threat: str, s, d, a) -> "OptimalAttack":
        """Build from three unit vectors (or lat/lon GeoPoints)."""
        pts = [p if isinstance(p, GeoPoint) else GeoPoint.from_array(from_unit_vectors(p)[0]) for p in (s, d, a)]
        u = to_unit_vectors(np.array([p.as_array() for p in pts]))
        dist = pairwise_km(u, u)
        d_sd, d_sa, d_da = float(dist[0, 1]), float(dist[0, 2]), float(dist[1, 2])
        pre = 2 * d_sd
        mid = d_sd + d_sa + d_da
        dev = max(mid - pre, 0.0)
        return cls(
            victim, threat, *pts,
            delta_pre_km=pre, delta_mid_km=mid, delta_dev_km=dev,
            tau_pre_ms=pre / FIBER_KM_PER_MS, tau_mid_ms=mid / FIBER_KM_PER_MS, tau_dev_ms=dev / FIBER_KM_PER_MS,
        )

    @property
    def d_sd_km(self) -> float:
        return self.delta_pre_km / 2

    def leg_distances(self) -> tuple[float, float, float]:
        """(d(S,D), d(S,A), d(D,A)) in km."""
        u = to_unit_vectors(np.array([self.s.as_array(), self.d.as_array(), self.a.as_array()]))
        dist = pairwise_km(u, u)
        return float(dist[0, 1]), float(dist[0, 2]), float(dist[1, 2])

    @property
    def ratio(self) -> float:
        return self.tau_mid_ms / self.tau_pre_ms if self.tau_pre_ms > 0 else math.inf


def deviation_ms(d_sd: float, d_sa: float, d_da: float) -> float:
    """Round-trip delay added by routing S->D through A, in ms."""
    dev = (d_sa + d_da - d_sd) / FIBER_KM_PER_MS
    if dev < 0:
        log.warning("negative deviation %.3f ms for infeasible distances; clamped to 0", dev)
        return 0.0
    return dev


def deviation_surface(x_grid, y_grid) -> np.ndarray:
    """Deviation in ms for host separation x and mean host-attacker distance y (km).

    Returns an array of shape ``(len(y_grid), len(x_grid))``.
    """
    x = np.asarray(x_grid, dtype=float)[None, :]
    y = np.asarray(y_grid, dtype=float)[:, None]
    return np.maximum(2 * y - x, 0.0) / FIBER_KM_PER_MS


# ---------------------------------------------------------------------------
# search kernels


@nb.njit(cache=True)
def _best_pairs(pu, dss, au, thr):
    """For each attacker point, min over victim pairs S<=D of d(S,A)+d(D,A)-d(S,D).

    Only values below ``thr`` are reported (others stay inf).
    """
    n = pu.shape[0]
    m = au.shape[0]
    vals = np.full(m, np.inf)
    si = np.full(m, -1, np.int64)
    di = np.full(m, -1, np.int64)
    da = np.empty(n)
    for k in range(m):
        for i in range(n):
            dx = pu[i, 0] - au[k, 0]
            dy = pu[i, 1] - au[k, 1]
            dz = pu[i, 2] - au[k, 2]
            c = 0.5 * math.sqrt(dx * dx + dy * dy + dz * dz)
            da[i] = 2.0 * EARTH_RADIUS_KM * math.asin(min(c, 1.0))
        best = thr[k]
        bs = -1
        bd = -1
        for i in range(n):
            ai = da[i]
            row = dss[i]
            for j in range(i, n):
                f = ai + da[j] - row[j]
                if f < best:
                    best = f
                    bs = i
                    bd = j
        if bs >= 0:
            vals[k] = best
            si[k] = bs
            di[k] = bd
    return vals, si, di


def _triple_min(su, du, au):
    """Exhaustive min over S in su, D in du, A in au; returns (value, i, j, k)."""
    d_sa = pairwise_km(su, au)
    d_da = pairwise_km(du, au)
    d_sd = pairwise_km(su, du)
    best = (math.inf, 0, 0, 0)
    for i in range(len(su)):
        f = d_sa[i][None, :] + d_da - d_sd[i][:, None]
        k = int(np.argmin(f))
        j, a = divmod(k, f.shape[1])
        if f[j, a] < best[0]:
            best = (float(f[j, a]), i, j, a)
    return best


class _PointSet:
    """Unit-vector samples of one country with a KD-tree for ball queries."""

    def __init__(self, polygons: Sequence[Polygon], spacing_km: float):
        pts = boundary_points(polygons, spacing_km)
        self.u = to_unit_vectors(pts)
        self.tree = cKDTree(self.u)

    def ball(self, centre, radius_km: float) -> np.ndarray:
        idx = self.tree.query_ball_point(centre, float(km_to_chord(radius_km)))
        if not idx:
            _, i = self.tree.query(centre)
            idx = [i]
        return self.u[np.sort(idx)]


def _refine(victim_sets, threat_sets, s, d, a, value, radius_km):
    """Local exhaustive search around (s, d, a) on successively finer grids."""
    for (vset, tset), radius in zip(zip(victim_sets, threat_sets), radius_km):
        for _ in range(6):
            su, du, au = vset.ball(s, radius), vset.ball(d, radius), tset.ball(a, radius)
            val, i, j, k = _triple_min(su, du, au)
            if val < value - 1e-9:
                value, s, d, a = val, su[i], du[j], au[k]
            else:
                break
    return value, s, d, a


def _distinct_candidates(vals, au, k, sep_km):
    """Indices of up to k smallest vals whose attacker points are sep_km apart."""
    order = np.argsort(vals)
    chosen = []
    sep = km_to_chord(sep_km)
    for idx in order:
        if not np.isfinite(vals[idx]):
            break
        if all(np.linalg.norm(au[idx] - au[c]) > sep for c in chosen):
            chosen.append(int(idx))
            if len(chosen) == k:
                break
    return chosen


class AttackSearch:
    """Optimal-attack search over a boundary set.

    The global pass evaluates every victim boundary pair against every
    attacker sample on a grid ``COARSE_FACTOR`` times coarser than
    ``resolution_km``; the best few triples per threat are then refined on
    the ``resolution_km`` grid and finally on the ``fine_km`` grid.  Small
    instances (pairs x attackers under ``EXHAUSTIVE_BUDGET``) are searched
    exhaustively at ``resolution_km`` before refinement.
    """

    def __init__(
        self,
        boundaries: CountryBoundarySet,
        resolution_km: float = DEFAULT_RESOLUTION_KM,
        fine_km: float | None = FINE_RESOLUTION_KM,
        mode: str = "mainland",
        candidates: int = 3,
    ):
        self.boundaries = boundaries
        self.resolution_km = resolution_km
        self.fine_km = fine_km if fine_km and fine_km < resolution_km else None
        self.coarse_km = resolution_km * COARSE_FACTOR
        self.mode = mode
        self.candidates = candidates
        self._sets: dict[tuple[str, float], _PointSet] = {}

    def _set(self, country: Country, spacing: float) -> _PointSet:
        key = (country.name, spacing)
        if key not in self._sets:
            self._sets[key] = _PointSet(country.parts(self.mode), spacing)
        return self._sets[key]

    def _ladders(self, victim: Country, threat: Country):
        spacings = [self.resolution_km] + ([self.fine_km] if self.fine_km else [])
        radii = [2 * self.coarse_km] + ([2 * self.resolution_km] if self.fine_km else [])
        return (
            [self._set(victim, sp) for sp in spacings],
            [self._set(threat, sp) for sp in spacings],
            radii,
        )

    def _seed(self, vset: _PointSet, tset: _PointSet, far=None):
        """Farthest victim pair with the attacker point closest to both."""
        _, i, j = far if far is not None else farthest_pair(vset.u)
        s, d = vset.u[i], vset.u[j]
        f = pairwise_km(tset.u, s[None, :])[:, 0] + pairwise_km(tset.u, d[None, :])[:, 0]
        k = int(np.argmin(f))
        return float(f[k] - pairwise_km(s[None, :], d[None, :])[0, 0]), s, d, tset.u[k]

    def attack(self, victim: Country | str, threat: Country | str) -> OptimalAttack:
        victim = self._country(victim)
        threat = self._country(threat)
        if victim.name == threat.name:
            raise ValueError("victim and threat must differ")
        vsets, tsets, radii = self._ladders(victim, threat)
        base_v, base_t = vsets[0], tsets[0]
        n, m = len(base_v.u), len(base_t.u)
        if n * n / 2 * m <= EXHAUSTIVE_BUDGET:
            value, i, j, k = _triple_min(base_v.u, base_v.u, base_t.u)
            starts = [(value, base_v.u[i], base_v.u[j], base_t.u[k])]
            # the exhaustive optimum needs no further coarse-grid refinement
            vsets, tsets, radii = vsets[1:], tsets[1:], radii[1:]
        else:
            cv, ct = self._set(victim, self.coarse_km), self._set(threat, self.coarse_km)
            dss = pairwise_km(cv.u, cv.u)
            vals, si, di = _best_pairs(cv.u, dss, ct.u, np.full(len(ct.u), np.inf))
            starts = [
                (vals[c], cv.u[si[c]], cv.u[di[c]], ct.u[c])
                for c in _distinct_candidates(vals, ct.u, self.candidates, 2 * self.coarse_km)
            ]
            starts.append(self._seed(base_v, base_t))
        return self._finish(victim, threat, starts, vsets, tsets, radii)

    def _finish(self, victim, threat, starts, vsets, tsets, radii) -> OptimalAttack:
        best = None
        for value, s, d, a in starts:
            if vsets:
                value, s, d, a = _refine(vsets, tsets, s, d, a, value, radii)
            if best is None or value < best[0]:
                best = (value, s, d, a)
        _, s, d, a = best
        return OptimalAttack.from_points(victim.name, threat.name, s, d, a)

    def victim_attacks(self, victim: Country | str, threats: Iterable[Country | str] | None = None) -> list[OptimalAttack]:
        """Optimal attacks on one victim from every threat (default: all others)."""
        victim = self._country(victim)
        if threats is None:
            threats = [c for c in self.boundaries if c.name != victim.name]
        threats = [self._country(t) for t in threats]
        cv = self._set(victim, self.coarse_km)
        dss = pairwise_km(cv.u, cv.u)
        csets = [self._set(t, self.coarse_km) for t in threats]
        all_au = np.vstack([c.u for c in csets])
        owner = np.repeat(np.arange(len(threats)), [len(c.u) for c in csets])
        vals, si, di = _best_pairs(cv.u, dss, all_au, np.full(len(all_au), np.inf))
        far = farthest_pair(self._set(victim, self.resolution_km).u)
        out = []
        for t_idx, threat in enumerate(threats):
            sel = np.flatnonzero(owner == t_idx)
            vsets, tsets, radii = self._ladders(victim, threat)
            chosen = _distinct_candidates(vals[sel], all_au[sel], self.candidates, 2 * self.coarse_km)
            starts = [(vals[sel[c]], cv.u[si[sel[c]]], cv.u[di[sel[c]]], all_au[sel[c]]) for c in chosen]
            starts.append(self._seed(vsets[0], tsets[0], far))
            out.append(self._finish(victim, threat, starts, vsets, tsets, radii))
        return out

    def all_attacks(self, progress=None) -> list[OptimalAttack]:
        """Optimal attacks for every ordered (victim, threat) pair."""
        out = []
        for i, victim in enumerate(self.boundaries):
            out.extend(self.victim_attacks(victim))
            if progress:
                progress(i + 1, len(self.boundaries), victim.name)
        return out

    def _country(self, c) -> Country:
        return c if isinstance(c, Country) else self.boundaries.get(c)


def optimal_attack(
    boundaries: CountryBoundarySet,
    victim: str,
    threat: str,
    resolution_km: float = DEFAULT_RESOLUTION_KM,
    fine_km: float | None = FINE_RESOLUTION_KM,
    mode: str = "mainland",
) -> OptimalAttack:
    return AttackSearch(boundaries, resolution_km, fine_km, mode).attack(victim, threat)


def brute_force_attack(victim_pts: np.ndarray, threat_pts: np.ndarray) -> tuple[float, int, int, int]:
    """Reference enumeration over all (S, D, A) in lat/lon arrays; returns (deviation km, s, d, a)."""
    pu, au = to_unit_vectors(victim_pts), to_unit_vectors(threat_pts)
    best = (math.inf, 0, 0, 0)
    for i in range(len(pu)):
        for j in range(len(pu)):
            for k in range(len(au)):
                sd = chord_to_km(np.linalg.norm(pu[i] - pu[j]))
                sa = chord_to_km(np.linalg.norm(pu[i] - au[k]))
                da = chord_to_km(np.linalg.norm(pu[j] - au[k]))
                f = float(sa + da - sd)
                if f < best[0]:
                    best = (f, i, j, k)
    return best


# ---------------------------------------------------------------------------
# location-based lower bound on mid-attack RTT


def _geodesic_points(s: np.ndarray, d: np.ndarray, step_km: float = 1.0) -> np.ndarray:
    omega = math.acos(max(-1.0, min(1.0, float(s @ d))))
    n = max(int(omega * EARTH_RADIUS_KM / step_km), 1)
    if omega < 1e-12:
        return s[None, :]
    ts = np.linspace(0.0, 1.0, n + 1)
    return (np.sin((1 - ts) * omega)[:, None] * s + np.sin(ts * omega)[:, None] * d) / math.sin(omega)


def _polygons_touch_path(polygons: Sequence[Polygon], path_u: np.ndarray) -> bool:
    from shapely import contains_xy
    from shapely.geometry import Polygon as ShapelyPolygon

    ll = from_unit_vectors(path_u)
    for poly in polygons:
        shp = ShapelyPolygon(poly.ring[:, ::-1], [h[:, ::-1] for h in poly.holes])
        if not shp.is_valid:
            shp = shp.buffer(0)
        if np.any(contains_xy(shp, ll[:, 1], ll[:, 0])):
            return True
    return False


def lower_bound_mid_rtt(
    src: GeoPoint,
    dst: GeoPoint,
    threat_regions: Sequence[Polygon | Country],
    resolution_km: float = DEFAULT_RESOLUTION_KM,
    fine_km: float | None = FINE_RESOLUTION_KM,
    mode: str = "mainland",
) -> float:
    """Smallest possible mid-attack RTT (ms) via any point of the threat regions.

    If the src-dst geodesic passes through a threat region the attacker can
    sit on the path and the bound equals the pre-attack RTT.
    """
    polys: list[Polygon] = []
    for r in threat_regions:
        polys.extend(r.parts(mode) if isinstance(r, Country) else [r])
    if not polys:
        raise ValueError("at least one threat region is required")
    s = to_unit_vectors(src.as_array())[0]
    d = to_unit_vectors(dst.as_array())[0]
    d_sd = float(pairwise_km(s[None], d[None])[0, 0])
    if _polygons_touch_path(polys, _geodesic_points(s, d)):
        return 2 * d_sd / FIBER_KM_PER_MS
    coarse = _PointSet(polys, resolution_km)
    f = pairwise_km(coarse.u, s[None])[:, 0] + pairwise_km(coarse.u, d[None])[:, 0]
    best = float(f.min())
    if fine_km and fine_km < resolution_km:
        fine = _PointSet(polys, fine_km)
        # d(S,A)+d(D,A) is 2-Lipschitz in A, so only samples within reach can improve
        lim = (best - f) / 2 + resolution_km
        for k in np.flatnonzero(f - 2 * resolution_km <= best):
            au = fine.ball(coarse.u[k], max(float(lim[k]), resolution_km))
            g = pairwise_km(au, s[None])[:, 0] + pairwise_km(au, d[None])[:, 0]
            best = min(best, float(g.min()))
    return (d_sd + best) / FIBER_KM_PER_MS


# ---------------------------------------------------------------------------
# coverage


@dataclass
class CoverageReport:
    condition_ms: float
    overall_pct: float
    per_victim: dict[str, float]
    deviations_ms: np.ndarray = field(repr=False)
    ratios: np.ndarray = field(repr=False)

    def countries_defended_pct(self, attacks_pct: float) -> float:
        """Percentage of countries defendable against at least attacks_pct % of attacks."""
        v = np.array(list(self.per_victim.values()))
        return float(100.0 * np.mean(v >= attacks_pct - 1e-9))

    def attacks_defended_by_all(self) -> float:
        """Largest attack percentage every country can be defended against."""
        return float(min(self.per_victim.values()))

    def countries_curve(self, grid=None) -> tuple[np.ndarray, np.ndarray]:
        grid = np.linspace(0, 100, 101) if grid is None else np.asarray(grid, dtype=float)
        return grid, np.array([self.countries_defended_pct(x) for x in grid])

    def deviation_at_coverage(self, coverage_pct: float) -> float:
        """Deviation threshold (ms) met by coverage_pct % of attacks."""
        return float(np.percentile(self.deviations_ms, 100 - coverage_pct))

    def ratio_at_coverage(self, coverage_pct: float) -> float:
        """Mid/pre RTT ratio met by coverage_pct % of attacks."""
        return float(np.percentile(self.ratios, 100 - coverage_pct))

    def ratio_curve(self, grid=None):
        grid = np.linspace(0, 100, 101) if grid is None else np.asarray(grid, dtype=float)
        return grid, np.array([self.ratio_at_coverage(c) for c in grid])

    def deviation_curve(self, grid=None):
        grid = np.linspace(0, 100, 101) if grid is None else np.asarray(grid, dtype=float)
        return grid, np.array([self.deviation_at_coverage(c) for c in grid])

    def to_dict(self, curve_points: int = 21) -> dict:
        grid = np.linspace(0, 100, curve_points)
        return {
            "condition_ms": self.condition_ms,
            "overall_pct": self.overall_pct,
            "attacks": int(len(self.deviations_ms)),
            "min_victim_pct": self.attacks_defended_by_all(),
            "per_victim": dict(sorted(self.per_victim.items())),
            "countries_vs_attacks": [[float(x), self.countries_defended_pct(x)] for x in grid],
            "ratio_vs_coverage": [[float(c), _finite(self.ratio_at_coverage(c))] for c in grid],
            "deviation_ms_vs_coverage": [[float(c), self.deviation_at_coverage(c)] for c in grid],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _finite(x: float):
    return x if math.isfinite(x) else None


def coverage_from_values(victims, pre_ms, mid_ms, condition_ms: float) -> CoverageReport:
    victims = np.asarray(victims)
    pre = np.asarray(pre_ms, dtype=float)
    mid = np.asarray(mid_ms, dtype=float)
    dev = mid - pre
    ok = dev >= condition_ms
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(pre > 0, mid / np.where(pre > 0, pre, 1), np.inf)
    per_victim = {str(v): float(100.0 * ok[victims == v].mean()) for v in dict.fromkeys(victims.tolist())}
    overall = float(100.0 * ok.mean()) if len(ok) else float("nan")
    return CoverageReport(condition_ms, overall, per_victim, dev, ratio)


def coverage_report(attacks: Sequence[OptimalAttack], condition_ms: float = 5.0) -> CoverageReport:
    """Coverage of optimal attacks whose RTT deviation meets condition_ms."""
    return coverage_from_values(
        [a.victim for a in attacks],
        [a.tau_pre_ms for a in attacks],
        [a.tau_mid_ms for a in attacks],
        condition_ms,
    )


# ---------------------------------------------------------------------------
# attack table IO

ATTACK_COLUMNS = [
    "victim", "threat", "s_lat", "s_lon", "d_lat", "d_lon", "a_lat", "a_lon",
    "delta_pre_km", "delta_mid_km", "delta_dev_km", "tau_pre_ms", "tau_mid_ms", "tau_dev_ms",
]


def write_attacks_csv(attacks: Iterable[OptimalAttack], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(ATTACK_COLUMNS)
        for a in attacks:
            w.writerow([
                a.victim, a.threat,
                f"{a.s.lat:.6f}", f"{a.s.lon:.6f}", f"{a.d.lat:.6f}", f"{a.d.lon:.6f}", f"{a.a.lat:.6f}", f"{a.a.lon:.6f}",
                f"{a.delta_pre_km:.4f}", f"{a.delta_mid_km:.4f}", f"{a.delta_dev_km:.4f}",
                f"{a.tau_pre_ms:.5f}", f"{a.tau_mid_ms:.5f}", f"{a.tau_dev_ms:.5f}",
            ])


def read_attacks_csv(path) -> list[OptimalAttack]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(r for r in fh if not r.startswith("#")):
            out.append(OptimalAttack(
                row["victim"], row["threat"],
                GeoPoint(float(row["s_lat"]), float(row["s_lon"])),
                GeoPoint(float(row["d_lat"]), float(row["d_lon"])),
                GeoPoint(float(row["a_lat"]), float(row["a_lon"])),
                *(float(row[c]) for c in ATTACK_COLUMNS[8:]),
            ))
    return out


def attack_to_dict(a: OptimalAttack) -> dict:
    d = asdict(a)
    for k in ("s", "d", "a"):
        d[k] = [d[k]["lat"], d[k]["lon"]]
    return d
