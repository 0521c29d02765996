"""Geodesic feasibility analysis and minRTT changepoint detection for BGP interception."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .attackgeo import (
    AttackSearch,
    CoverageReport,
    OptimalAttack,
    coverage_report,
    deviation_ms,
    deviation_surface,
    lower_bound_mid_rtt,
    optimal_attack,
)
from .delaymodel import PercentileDelayModel, fit_percentile_model, realistic_defendability
from .detector import AttackEvent, Detector, DetectorConfig, check_surge, is_defendable, probe_schedule
from .geodesy import GeoPoint, great_circle_km, km_to_ms, load_boundaries
from .prefixtable import PrefixTable, TableConfig
from .rttsource import RttSample, classify_direction, extract_rtt_samples, prefix_signature, read_rtt_csv
from .simulator import AttackSpec, PathModel, ScenarioMetrics, gen_benign_stream, inject_attack, run_scenario
