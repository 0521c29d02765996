"""Empirical distance-to-delay model built from per-bin minOWD percentiles.

Samples are (great-circle distance km, minimum one-way delay ms) pairs.
They are binned by distance, each populated bin contributes its p-th
percentile minOWD at the bin midpoint, and one least-squares line is fit
per percentile p = 1..100.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from .attackgeo import CoverageReport, OptimalAttack, coverage_from_values
from .geodesy import FIBER_KM_PER_MS

log = logging.getLogger(__name__)

BIN_WIDTH_KM = 200.0
MAX_KM = 20075.0
PERCENTILES = np.arange(1, 101)


class ModelError(ValueError):
    pass


@dataclass
class PercentileDelayModel:
    slopes: np.ndarray  # ms per km, index p-1
    intercepts: np.ndarray  # ms
    bin_width_km: float = BIN_WIDTH_KM
    max_km: float = MAX_KM
    populated_bins: int = 0
    excluded: int = 0
    raw_slopes: np.ndarray | None = field(default=None, repr=False)
    raw_intercepts: np.ndarray | None = field(default=None, repr=False)

    def owd(self, p: int, distance_km):
        """Estimated one-way delay (ms) at percentile p for a distance."""
        if not 1 <= p <= 100:
            raise ValueError("percentile must be in 1..100")
        return self.slopes[p - 1] * np.asarray(distance_km, dtype=float) + self.intercepts[p - 1]

    @classmethod
    def speed_of_light(cls) -> "PercentileDelayModel":
        """Degenerate model where every percentile is the fibre propagation delay."""
        return cls(np.full(100, 1 / FIBER_KM_PER_MS), np.zeros(100))

    @classmethod
    def from_lines(cls, lines: dict[int, tuple[float, float]]) -> "PercentileDelayModel":
        """Model from a few (slope, intercept) anchors, linearly interpolated across p."""
        ps = np.array(sorted(lines))
        sl = np.interp(PERCENTILES, ps, [lines[p][0] for p in ps])
        ic = np.interp(PERCENTILES, ps, [lines[p][1] for p in ps])
        return cls(sl, ic)

    def to_rows(self) -> list[tuple[int, float, float]]:
        return [(int(p), float(s), float(i)) for p, s, i in zip(PERCENTILES, self.slopes, self.intercepts)]

    def write_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["percentile", "slope_ms_per_km", "intercept_ms"])
            for p, s, i in self.to_rows():
                w.writerow([p, repr(s), repr(i)])

    @classmethod
    def read_csv(cls, path) -> "PercentileDelayModel":
        with open(path, newline="") as fh:
            reader = csv.DictReader(line for line in fh if not line.startswith("#"))
            rows = sorted((int(r["percentile"]), float(r["slope_ms_per_km"]), float(r["intercept_ms"])) for r in reader)
        if [r[0] for r in rows] != list(range(1, 101)):
            raise ModelError(f"{path}: expected percentiles 1..100")
        return cls(np.array([r[1] for r in rows]), np.array([r[2] for r in rows]))


def physically_possible(distance_km, owd_ms) -> np.ndarray:
    """Mask of samples not faster than light in fibre."""
    return np.asarray(owd_ms, dtype=float) >= np.asarray(distance_km, dtype=float) / FIBER_KM_PER_MS


def _monotone_lines(slopes, intercepts, max_km):
    """Make lines non-decreasing in p at every distance in [0, max_km], with slope >= 0.

    Linear functions ordered at both ends of the interval stay ordered in
    between, so the correction works on the two endpoint values.
    """
    at0 = isotonic_regression(intercepts).x
    at_max = np.maximum(slopes * max_km + intercepts, at0)
    at_max = np.maximum(isotonic_regression(at_max).x, at0)
    return (at_max - at0) / max_km, at0


def fit_percentile_model(samples, bin_width_km: float = BIN_WIDTH_KM, max_km: float = MAX_KM) -> PercentileDelayModel:
    """Fit one line per percentile across populated distance bins.

    ``samples`` is an (n, 2) array-like of (distance km, minOWD ms).
    Physically impossible samples are dropped before binning.
    """
    arr = np.asarray(samples, dtype=float).reshape(-1, 2)
    dist, owd = arr[:, 0], arr[:, 1]
    keep = physically_possible(dist, owd) & (dist >= 0) & (dist <= max_km)
    excluded = int((~keep).sum())
    if excluded:
        log.info("excluded %d physically impossible or out-of-range samples", excluded)
    dist, owd = dist[keep], owd[keep]

    n_bins = int(np.ceil(max_km / bin_width_km))
    bins = np.minimum((dist // bin_width_km).astype(int), n_bins - 1)
    mids, pct = [], []
    for b in np.unique(bins):
        vals = owd[bins == b]
        mids.append((b + 0.5) * bin_width_km)
        pct.append(np.percentile(vals, PERCENTILES))
    if len(mids) < 2:
        raise ModelError(f"need at least 2 populated distance bins, got {len(mids)}")
    x = np.asarray(mids)
    y = np.asarray(pct)  # (bins, 100)
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    raw_s, raw_i = coef[0], coef[1]
    slopes, intercepts = _monotone_lines(raw_s, raw_i, max_km)
    return PercentileDelayModel(
        slopes, intercepts, bin_width_km, max_km,
        populated_bins=len(mids), excluded=excluded, raw_slopes=raw_s, raw_intercepts=raw_i,
    )


def realistic_defendability(
    model: PercentileDelayModel,
    attacks: Sequence[OptimalAttack],
    condition_ms: float = 5.0,
    pre_percentile: int = 75,
    mid_percentile: int = 25,
) -> CoverageReport:
    """Coverage when pre-attack minRTT is pessimistic and mid-attack optimistic.

    Pre-attack minRTT is twice the upper-quartile OWD of d(S,D); mid-attack
    minRTT sums lower-quartile OWDs of the three legs.
    """
    legs = np.array([a.leg_distances() for a in attacks]).reshape(-1, 3)
    pre = 2 * model.owd(pre_percentile, legs[:, 0])
    mid = model.owd(mid_percentile, legs).sum(axis=1)
    return coverage_from_values([a.victim for a in attacks], pre, mid, condition_ms)
