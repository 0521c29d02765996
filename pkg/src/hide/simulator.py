"""Synthetic RTT streams, attack injection and end-to-end detector evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
import yaml

from .detector import (
    AttackEvent,
    Detector,
    DetectorConfig,
    WindowRecord,
    config_from_mapping,
    ConfigError,
)
from .prefixtable import PrefixTable, TableConfig
from .rttsource import PrefixSig, RttSample, hash_index, parse_prefix, prefix_label

log = logging.getLogger(__name__)

US = 1_000_000
NOISE_KINDS = ("none", "lognormal", "pareto", "spike-mixture")
BUNDLED_SCENARIOS = ("iperf-like", "bitcoin-like")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Additive queueing noise in ms; every draw is >= 0.

    lognormal: exp(mu + sigma*Z). pareto: Lomax with ``scale`` and ``shape``.
    spike-mixture: lognormal body plus, with probability ``p_spike``, an
    exponential spike of mean ``spike_ms``.
    """

    kind: str = "spike-mixture"
    mu: float = 0.0
    sigma: float = 1.0
    scale: float = 1.0
    shape: float = 2.5
    p_spike: float = 0.02
    spike_ms: float = 20.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {', '.join(NOISE_KINDS)}")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(n)
        if self.kind == "pareto":
            return self.scale * rng.pareto(self.shape, n)
        body = rng.lognormal(self.mu, self.sigma, n)
        if self.kind == "lognormal":
            return body
        spikes = rng.random(n) < self.p_spike
        return body + spikes * rng.exponential(self.spike_ms, n)


@dataclass(frozen=True)
class PathModel:
    base_rtt_ms: float
    noise: NoiseSpec = NoiseSpec()
    sample_rate_hz: float = 40.0  # per flow
    anchor_noise_scale: float = 0.1  # noise multiplier for the first flow
    floor_shifts: tuple[tuple[float, float, float], ...] = ()  # benign (t_start_s, t_end_s, +ms)

    def __post_init__(self):
        if not self.base_rtt_ms > 0:
            raise ValueError("base_rtt_ms must be positive")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")

    def floor_at(self, t_s) -> np.ndarray:
        t = np.asarray(t_s, dtype=float)
        f = np.full(t.shape, self.base_rtt_ms)
        for a, b, d in self.floor_shifts:
            f = f + d * ((t >= a) & (t < b))
        return f


@dataclass(frozen=True)
class AttackSpec:
    prefix: int
    t_start: float  # seconds
    t_end: float
    delta_ms: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("attack t_start must precede t_end")
        if not self.delta_ms > 0:
            raise ValueError("attack delta_ms must be positive")

    def active(self, t_s) -> np.ndarray:
        t = np.asarray(t_s, dtype=float)
        return (t >= self.t_start) & (t < self.t_end)


def _sig(prefix: int, slots: int = 65536) -> PrefixSig:
    return PrefixSig(hash_index(prefix, 0, slots), prefix)


def _host_ip(prefix: int, host: int = 10) -> str:
    k = (prefix << 8) | host
    return ".".join(str((k >> s) & 255) for s in (24, 16, 8, 0))


def gen_benign_stream(model: PathModel, duration_s: float, flow_count: int, rng: np.random.Generator,
                      prefix: int = 0xC0000200, t0_s: float = 0.0, flow_prefix: str = "f") -> list[RttSample]:
    """Poisson-timed samples for ``flow_count`` flows sharing one prefix.

    Flow 0 is an anchor whose noise is scaled down, so window minima of the
    prefix sit near the floor.
    """
    if flow_count < 1:
        raise ValueError("flow_count must be >= 1")
    sig = _sig(prefix)
    ip = _host_ip(prefix)
    out = []
    for f in range(flow_count):
        n = rng.poisson(model.sample_rate_hz * duration_s)
        t = np.sort(rng.uniform(t0_s, t0_s + duration_s, n))
        noise = model.noise.draw(rng, n)
        if f == 0:
            noise = noise * model.anchor_noise_scale
        rtt = model.floor_at(t) + noise
        t_us = np.round(t * US).astype(np.int64)
        fid = f"{flow_prefix}{prefix_label(prefix)}#{f}"
        out.extend(RttSample(sig, fid, int(a), float(r), ip) for a, r in zip(t_us, rtt))
    out.sort(key=lambda s: (s.t_ack, s.flow_id))
    return out


def _check_overlaps(specs: Sequence[AttackSpec]) -> None:
    by_prefix: dict[int, list[AttackSpec]] = {}
    for sp in specs:
        by_prefix.setdefault(sp.prefix, []).append(sp)
    for p, lst in by_prefix.items():
        lst.sort(key=lambda s: s.t_start)
        for a, b in zip(lst, lst[1:]):
            if b.t_start < a.t_end:
                raise ScenarioError(f"overlapping attacks on {prefix_label(p)}: [{a.t_start}, {a.t_end}) and [{b.t_start}, {b.t_end})")


def inject_attack(stream: Iterable[RttSample], spec: AttackSpec | Sequence[AttackSpec]) -> list[RttSample]:
    """Add each attack's delta to samples of its prefix inside [t_start, t_end)."""
    specs = [spec] if isinstance(spec, AttackSpec) else list(spec)
    _check_overlaps(specs)
    out = []
    for s in stream:
        add = 0.0
        if s.prefix_sig is not None:
            for sp in specs:
                if sp.prefix == s.prefix_sig.key and sp.t_start * US <= s.t_ack < sp.t_end * US:
                    add += sp.delta_ms
        out.append(s if add == 0 else RttSample(s.prefix_sig, s.flow_id, s.t_ack, s.rtt_ms + add, s.ip))
    return out


@dataclass
class ScenarioMetrics:
    detection_latency_s: dict[int, float | None] = field(default_factory=dict)  # per attack index
    fpr: float = 0.0
    fnr: float = 0.0
    false_positives: int = 0
    benign_windows: int = 0
    downtime_s: list[float] = field(default_factory=list)
    covered_attacks: int = 0
    uncovered_attacks: int = 0
    defendable_prefixes: int = 0
    profiled_prefixes: int = 0
    eligible_prefixes: int = 0
    seed: int | None = None
    verdicts: dict[str, str] = field(default_factory=dict)

    @property
    def coverage_pct(self) -> float:
        return 100.0 * self.defendable_prefixes / self.eligible_prefixes if self.eligible_prefixes else 0.0

    @property
    def median_downtime_s(self) -> float | None:
        return float(np.median(self.downtime_s)) if self.downtime_s else None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "detection_latency_s": {str(k): v for k, v in self.detection_latency_s.items()},
            "fpr": self.fpr,
            "fnr": self.fnr,
            "false_positives": self.false_positives,
            "benign_windows": self.benign_windows,
            "downtime_s": self.downtime_s,
            "median_downtime_s": self.median_downtime_s,
            "covered_attacks": self.covered_attacks,
            "uncovered_attacks": self.uncovered_attacks,
            "eligible_prefixes": self.eligible_prefixes,
            "profiled_prefixes": self.profiled_prefixes,
            "defendable_prefixes": self.defendable_prefixes,
            "coverage_pct": self.coverage_pct,
            "verdicts": self.verdicts,
        }


@dataclass
class ScenarioResult:
    metrics: ScenarioMetrics
    events: list[AttackEvent]
    windows: list[WindowRecord]
    detector: Detector


class ProbeResponder:
    """Probe answers from the path floor, shifted while an attack is active."""

    def __init__(self, paths: dict[int, PathModel], attacks: Sequence[AttackSpec], rng: np.random.Generator, noisy: bool = True):
        self.paths = paths
        self.attacks = attacks
        self.rng = rng
        self.noisy = noisy

    def __call__(self, prefix: int, t_us: int, ip) -> float | None:
        path = self.paths.get(prefix)
        if path is None:
            return None
        t = t_us / US
        rtt = float(path.floor_at(t))
        for a in self.attacks:
            if a.prefix == prefix and a.t_start <= t < a.t_end:
                rtt += a.delta_ms
        if self.noisy:
            rtt += float(path.noise.draw(self.rng, 1)[0]) * path.anchor_noise_scale
        return rtt


def _in_attack(attacks: Sequence[AttackSpec], prefix: int, t0: int, t1: int) -> bool:
    return any(a.prefix == prefix and a.t_start * US < t1 and t0 < a.t_end * US for a in attacks)


def run_scenario(
    streams: Iterable[RttSample],
    attacks: Sequence[AttackSpec],
    cfg: DetectorConfig,
    tau_table: dict[int, float],
    profile_until_s: float | None,
    paths: dict[int, PathModel] | None = None,
    seed: int | None = None,
    eligible: set[int] | None = None,
    end_s: float | None = None,
    table_cfg: TableConfig | None = None,
) -> ScenarioResult:
    """Profile, detect and score one scenario.

    Detections overlapping an attack interval on their prefix are true
    positives; all others are false positives.
    """
    _check_overlaps(attacks)
    samples = sorted(streams, key=lambda s: (s.t_ack, s.flow_id))
    if profile_until_s is not None:
        for a in attacks:
            if a.t_start < profile_until_s:
                raise ScenarioError(f"attack on {prefix_label(a.prefix)} starts at {a.t_start} s, inside the profiling span")
    rng = np.random.default_rng(seed)
    det = Detector(cfg, tau_table, PrefixTable(table_cfg or TableConfig()),
                   profile_until=None if profile_until_s is None else int(round(profile_until_s * US)),
                   eligible=eligible, record_windows=True)
    responder = ProbeResponder(paths or {}, attacks, rng) if paths else None
    end_us = int(round(end_s * US)) if end_s is not None else (samples[-1].t_ack if samples else 0)
    det.run(samples, responder, until=end_us)
    if det.profiling:
        det.end_profiling()

    m = ScenarioMetrics(seed=seed)
    m.verdicts = {prefix_label(k): v.reason for k, v in sorted(det.verdicts.items())}
    m.profiled_prefixes = sum(1 for k, (p, _) in det.frozen.items() if p.valid_window_count > 0)
    m.eligible_prefixes = len(det.verdicts) if profile_until_s is not None else len({s.prefix_sig.key for s in samples})
    m.defendable_prefixes = sum(1 for v in det.verdicts.values() if v)

    detections = det.detections()
    true_pos = set()
    missed = 0
    for i, a in enumerate(attacks):
        covered = det.armed(a.prefix)
        if not covered:
            m.uncovered_attacks += 1
            m.detection_latency_s[i] = None
            continue
        m.covered_attacks += 1
        first = next((s.t_ack for s in samples if s.prefix_sig.key == a.prefix and s.t_ack >= a.t_start * US), None)
        hit = None
        for j, e in enumerate(detections):
            # detection may land just after t_end, when the last attack window closes
            if e.prefix == a.prefix and a.t_start * US <= e.t <= a.t_end * US + 2 * cfg.window_us:
                hit = e
                true_pos.add(j)
                break
        if hit is None or first is None:
            missed += 1
            m.detection_latency_s[i] = None
        else:
            m.detection_latency_s[i] = (hit.t - first) / US
    fps = [e for j, e in enumerate(detections) if j not in true_pos]
    m.false_positives = len(fps)
    m.fnr = missed / m.covered_attacks if m.covered_attacks else 0.0
    m.benign_windows = sum(1 for w in det.windows if w.checked and not _in_attack(attacks, w.prefix, w.t_start, w.t_start + cfg.window_us))
    m.fpr = m.false_positives / m.benign_windows if m.benign_windows else 0.0
    fp_set = {(e.prefix, e.t) for e in fps}
    for prefix, t_block, t_unblock in det.block_log:
        if (prefix, t_block) in fp_set and t_unblock is not None:
            m.downtime_s.append((t_unblock - t_block) / US)
    return ScenarioResult(m, det.events, det.windows, det)


def activity_buckets(samples: Iterable[RttSample], t0: int, t1: int, bucket_s: float = 60.0) -> dict[int, int]:
    """Number of distinct one-minute buckets in [t0, t1) with a sample, per prefix."""
    b = int(round(bucket_s * US))
    seen: dict[int, set] = {}
    for s in samples:
        if t0 <= s.t_ack < t1:
            seen.setdefault(s.prefix_sig.key, set()).add((s.t_ack - t0) // b)
    return {k: len(v) for k, v in seen.items()}


def replay_evaluation(
    samples: Sequence[RttSample],
    tau_table: dict[int, float],
    cfg: DetectorConfig,
    vulnerable: set[int] | None = None,
    min_buckets: int = 10,
    profile_fraction: float = 0.5,
    probe_paths: dict[int, PathModel] | None = None,
    seed: int | None = None,
) -> ScenarioResult:
    """Benign trace replay: every detection counts as a false positive.

    Prefixes must be vulnerable (if a set is given), have a tau_mid, and be
    active in at least ``min_buckets`` one-minute buckets.
    """
    samples = sorted((s for s in samples if s.prefix_sig is not None), key=lambda s: (s.t_ack, s.flow_id))
    if not samples:
        return run_scenario([], [], cfg, tau_table, None, seed=seed)
    t0, t1 = samples[0].t_ack, samples[-1].t_ack + 1
    active = activity_buckets(samples, t0, t1)
    eligible = {k for k, n in active.items() if n >= min_buckets and k in tau_table and (vulnerable is None or k in vulnerable)}
    split = (t0 + profile_fraction * (t1 - t0)) / US
    kept = [s for s in samples if s.prefix_sig.key in eligible]
    res = run_scenario(kept, [], cfg, tau_table, split, paths=probe_paths, seed=seed, eligible=eligible, end_s=t1 / US)
    res.metrics.eligible_prefixes = len(eligible)
    return res


def coverage_curve(samples, tau_table, cfg: DetectorConfig, lambdas=(5, 10, 20, 30), **kw) -> list[tuple[float, float, float]]:
    """(lambda, coverage %, FPR) for each surge threshold."""
    from .detector import with_lambda

    out = []
    for lam in lambdas:
        m = replay_evaluation(samples, tau_table, with_lambda(cfg, lam), **kw).metrics
        out.append((float(lam), m.coverage_pct, m.fpr))
    return out


def synthetic_benign_suite(seed: int = 0, n_prefixes: int = 24, duration_s: float = 1200.0,
                           flows: int = 3, rate_hz: float = 8.0) -> tuple[list[RttSample], dict[int, float], dict[int, PathModel]]:
    """Benign prefixes with mixed tau margins and occasional benign floor shifts.

    Shifts stay below 28 ms, so prefixes whose margin exceeds 30 ms never
    cross their threshold.
    """
    rng = np.random.default_rng(seed)
    samples, taus, paths = [], {}, {}
    for i in range(n_prefixes):
        prefix = (198 << 16) | (51 << 8) | i
        base = float(rng.uniform(20, 200))
        margin = float(rng.uniform(6, 45))
        shifts = []
        if rng.random() < 0.6:
            for _ in range(int(rng.integers(1, 4))):
                a = float(rng.uniform(duration_s * 0.55, duration_s * 0.95))
                shifts.append((a, a + float(rng.uniform(0.5, 3.0)), float(rng.uniform(5, 28))))
        path = PathModel(base, NoiseSpec("spike-mixture", mu=-0.5, sigma=1.0, p_spike=0.03, spike_ms=15.0),
                         sample_rate_hz=rate_hz, floor_shifts=tuple(shifts))
        samples.extend(gen_benign_stream(path, duration_s, flows, rng, prefix))
        taus[prefix] = base + margin
        paths[prefix] = path
    samples.sort(key=lambda s: (s.t_ack, s.flow_id))
    return samples, taus, paths


def write_windows_csv(windows: Iterable[WindowRecord], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["t_start", "prefix", "count", "min_rtt_ms", "valid", "checked", "phase"])
        for r in windows:
            w.writerow([f"{r.t_start / US:.6f}", prefix_label(r.prefix), r.count,
                        "" if math.isinf(r.min_ms) else f"{r.min_ms:.4f}", int(r.valid), int(r.checked), r.phase])


# -- scenario files

class _Node(dict):
    """Mapping that remembers the source line of each key."""

    line = 0
    lines: dict


def _construct(node):
    if isinstance(node, yaml.MappingNode):
        d = _Node()
        d.line = node.start_mark.line + 1
        d.lines = {}
        for k, v in node.value:
            key = k.value
            d[key] = _construct(v)
            d.lines[key] = k.start_mark.line + 1
        return d
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v) for v in node.value]
    return yaml.constructor.SafeConstructor().construct_object(node, deep=True)


@dataclass
class PathSpec:
    prefix: int
    model: PathModel
    flows: int
    tau_mid_ms: float | None


@dataclass
class Scenario:
    name: str
    seed: int
    duration_s: float
    profile_until_s: float
    detector: DetectorConfig
    paths: list[PathSpec]
    attacks: list[AttackSpec]
    source: str = ""

    def tau_table(self) -> dict[int, float]:
        return {p.prefix: p.tau_mid_ms for p in self.paths if p.tau_mid_ms is not None}

    def path_models(self) -> dict[int, PathModel]:
        return {p.prefix: p.model for p in self.paths}


_TOP_KEYS = {"name", "seed", "duration_s", "profile_until_s", "detector", "paths", "attacks"}
_PATH_KEYS = {"prefix", "base_rtt_ms", "tau_mid_ms", "flows", "sample_rate_hz", "noise", "anchor_noise_scale", "floor_shifts"}
_ATTACK_KEYS = {"prefix", "t_start", "t_end", "delta_ms"}


def _err(src, line, msg):
    return ScenarioError(f"{src}:{line}: {msg}")


def _need(d: _Node, key, src, typ=None):
    if key not in d:
        raise _err(src, d.line, f"missing required key '{key}'")
    v = d[key]
    if typ is not None and not isinstance(v, typ):
        raise _err(src, d.lines[key], f"'{key}' must be {typ.__name__ if isinstance(typ, type) else 'a number'}")
    return v


def _keys_ok(d, allowed, src, where):
    if not isinstance(d, _Node):
        raise ScenarioError(f"{src}: {where} must be a mapping")
    for k in d:
        if k not in allowed:
            raise _err(src, d.lines[k], f"unknown key '{k}' in {where}")


_NUM = (int, float)


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        raise ScenarioError(f"{source}: {e}") from e
    if root is None:
        raise ScenarioError(f"{source}: empty scenario")
    d = _construct(root)
    _keys_ok(d, _TOP_KEYS, source, "scenario")
    seed = _need(d, "seed", source, int)
    duration = float(_need(d, "duration_s", source, _NUM))
    prof = float(d.get("profile_until_s", duration / 2))
    det_map = d.get("detector", _Node())
    try:
        cfg = config_from_mapping(dict(det_map))
    except (ConfigError, ValueError) as e:
        raise _err(source, getattr(det_map, "line", 0), str(e)) from e

    paths = []
    for p in _need(d, "paths", source, list):
        _keys_ok(p, _PATH_KEYS, source, "path")
        try:
            prefix = parse_prefix(str(_need(p, "prefix", source)))
        except ValueError as e:
            raise _err(source, p.lines["prefix"], f"bad prefix: {e}") from e
        nz = p.get("noise", _Node())
        try:
            noise = NoiseSpec(**dict(nz)) if nz else NoiseSpec()
            shifts = tuple(tuple(float(x) for x in s) for s in p.get("floor_shifts", []))
            model = PathModel(float(_need(p, "base_rtt_ms", source, _NUM)), noise,
                              float(p.get("sample_rate_hz", 40.0)), float(p.get("anchor_noise_scale", 0.1)), shifts)
        except (TypeError, ValueError) as e:
            raise _err(source, p.line, str(e)) from e
        tau = p.get("tau_mid_ms")
        paths.append(PathSpec(prefix, model, int(p.get("flows", 3)), None if tau is None else float(tau)))

    attacks = []
    for a in d.get("attacks", []) or []:
        _keys_ok(a, _ATTACK_KEYS, source, "attack")
        try:
            attacks.append(AttackSpec(parse_prefix(str(_need(a, "prefix", source))), float(_need(a, "t_start", source, _NUM)),
                                      float(_need(a, "t_end", source, _NUM)), float(_need(a, "delta_ms", source, _NUM))))
        except ValueError as e:
            raise _err(source, a.line, str(e)) from e
    known = {p.prefix for p in paths}
    for a, node in zip(attacks, d.get("attacks", []) or []):
        if a.prefix not in known:
            raise _err(source, node.line, f"attack on {prefix_label(a.prefix)} which has no path")
        if a.t_end > duration:
            raise _err(source, node.line, "attack ends after duration_s")
    try:
        _check_overlaps(attacks)
    except ScenarioError as e:
        raise ScenarioError(f"{source}: {e}") from e
    return Scenario(str(d.get("name", source)), seed, duration, prof, cfg, paths, attacks, source)


def load_scenario(path_or_name: str) -> Scenario:
    """Scenario from a YAML file, or a bundled one by name."""
    if path_or_name in BUNDLED_SCENARIOS:
        ref = resources.files("hide") / "scenarios" / f"{path_or_name}.yaml"
        return parse_scenario(ref.read_text(), path_or_name)
    with open(path_or_name) as fh:
        return parse_scenario(fh.read(), str(path_or_name))


def scenario_streams(sc: Scenario, seed: int | None = None) -> list[RttSample]:
    rng = np.random.default_rng(sc.seed if seed is None else seed)
    out = []
    for p in sc.paths:
        out.extend(gen_benign_stream(p.model, sc.duration_s, p.flows, rng, p.prefix))
    out.sort(key=lambda s: (s.t_ack, s.flow_id))
    return inject_attack(out, sc.attacks)


def simulate(sc: Scenario, seed: int | None = None, cfg: DetectorConfig | None = None) -> ScenarioResult:
    seed = sc.seed if seed is None else seed
    samples = scenario_streams(sc, seed)
    return run_scenario(samples, sc.attacks, cfg or sc.detector, sc.tau_table(), sc.profile_until_s,
                        paths=sc.path_models(), seed=seed, end_s=sc.duration_s)
