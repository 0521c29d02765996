"""Tumbling-window minRTT changepoint detection with mitigation and FP correction.

Rollover is lazy: a window closes when the first sample of a later window
arrives for the same prefix. At each rollover the closed window is compared
with the one before it, and an attack is flagged when the minimum crosses
the prefix's absolute threshold (tau_mid) upward by more than the surge
threshold (lambda).
"""

from __future__ import annotations

import csv
import heapq
import ipaddress
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import yaml

from .prefixtable import PrefixSlot, PrefixTable, TableConfig
from .rttsource import FlowKey, RttSample, parse_prefix, prefix_label

log = logging.getLogger(__name__)

US = 1_000_000
EVENT_COLUMNS = ["t", "prefix", "kind", "min_prev", "min_cur", "tau_mid", "lambda"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    window_s: float = 0.25
    lambda_ms: float = 5.0
    lambda_pct: float | None = None  # if set, lambda = pct/100 * max_of_min, frozen at profile end
    min_samples: int = 5
    probe_fast_period_s: float | None = None  # defaults to one probe per window
    probe_slow_after_s: float = 300.0
    probe_slow_period_s: float = 60.0
    continuous_profiling: bool = False
    default_tau_mid_ms: float | None = None

    def __post_init__(self):
        if not self.window_s > 0:
            raise ConfigError("window_s must be positive")
        if self.lambda_pct is None and not self.lambda_ms > 0:
            raise ConfigError("lambda_ms must be positive")
        if self.lambda_pct is not None and not self.lambda_pct > 0:
            raise ConfigError("lambda pct must be positive")
        if self.min_samples < 1:
            raise ConfigError("min_samples must be >= 1")

    @property
    def window_us(self) -> int:
        return int(round(self.window_s * US))

    @property
    def fast_period_s(self) -> float:
        return self.probe_fast_period_s or self.window_s

    def lambda_for(self, max_of_min: float) -> float:
        if self.lambda_pct is None:
            return self.lambda_ms
        return self.lambda_pct / 100.0 * max_of_min

    def lambda_text(self) -> str:
        return f"pct:{self.lambda_pct:g}" if self.lambda_pct is not None else f"{self.lambda_ms:g}"


def parse_lambda(text) -> tuple[float, float | None]:
    """'5' -> (5.0, None); 'pct:3' -> (default ms, 3.0)."""
    s = str(text).strip()
    if s.startswith("pct:"):
        return DetectorConfig.lambda_ms, float(s[4:])
    return float(s), None


_CONFIG_KEYS = {"window_s", "lambda", "lambda_ms", "lambda_pct", "min_samples", "probe_fast_period_s",
                "probe_slow_after_s", "probe_slow_period_s", "continuous_profiling", "default_tau_mid_ms"}


def config_from_mapping(m: dict) -> DetectorConfig:
    unknown = set(m) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown detector keys: {', '.join(sorted(unknown))}")
    kw = {k: v for k, v in m.items() if k not in ("lambda",)}
    if "lambda" in m:
        kw["lambda_ms"], kw["lambda_pct"] = parse_lambda(m["lambda"])
    try:
        return DetectorConfig(**kw)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> DetectorConfig:
    """Detector config from a YAML mapping (``lambda`` may be ms or 'pct:N')."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return config_from_mapping(data.get("detector", data))


class TauTableError(ValueError):
    pass


def read_tau_table(path) -> dict[int, float]:
    out = {}
    with open(path, newline="") as fh:
        rows = csv.DictReader(r for r in fh if not r.startswith("#"))
        if not {"prefix", "tau_mid_ms"} <= set(rows.fieldnames or []):
            raise TauTableError(f"{path}: need columns prefix,tau_mid_ms")
        for r in rows:
            try:
                out[parse_prefix(r["prefix"])] = float(r["tau_mid_ms"])
            except (TypeError, ValueError) as e:
                raise TauTableError(f"{path}:{rows.line_num}: {e}") from e
    return out


def write_tau_table(rows: Iterable[tuple[str, float]], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["prefix", "tau_mid_ms"])
        for p, t in rows:
            w.writerow([p, f"{t:.4f}"])


@dataclass
class ProfileStats:
    max_of_min: float
    min_of_min: float
    valid_window_count: int

    @classmethod
    def of(cls, slot: PrefixSlot) -> "ProfileStats":
        return cls(slot.max_of_min, slot.min_of_min, slot.valid_windows)


@dataclass(frozen=True)
class AttackEvent:
    prefix: int
    t: int  # microseconds
    kind: str  # detected | unblocked_fp | probe_sent
    min_prev: float = math.nan
    min_cur: float = math.nan
    tau_mid: float = math.nan
    lam: float = math.nan

    def row(self) -> list:
        return [f"{self.t / US:.6f}", prefix_label(self.prefix), self.kind,
                _fmt(self.min_prev), _fmt(self.min_cur), _fmt(self.tau_mid), _fmt(self.lam)]


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"


def write_event_log(events: Iterable[AttackEvent], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(EVENT_COLUMNS)
        for e in events:
            w.writerow(e.row())


@dataclass
class BlockTable:
    blocked: dict[int, int] = field(default_factory=dict)  # prefix -> t_block

    def block(self, prefix: int, now: int) -> bool:
        if prefix in self.blocked:
            return False
        self.blocked[prefix] = now
        return True

    def unblock(self, prefix: int) -> int | None:
        return self.blocked.pop(prefix, None)

    def __contains__(self, prefix: int) -> bool:
        return prefix in self.blocked


def check_surge(min_prev: float, min_cur: float, tau_mid: float, lam: float) -> bool:
    return min_prev < tau_mid < min_cur and min_cur - min_prev > lam


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str  # defendable | no_profile | floor_above_tau | margin

    def __bool__(self):
        return self.ok


def is_defendable(profile: ProfileStats, tau_mid: float, lam: float) -> Verdict:
    if profile.valid_window_count < 1 or not math.isfinite(profile.max_of_min):
        return Verdict(False, "no_profile")
    if profile.min_of_min > tau_mid:
        return Verdict(False, "floor_above_tau")
    if not tau_mid - profile.max_of_min > lam:
        return Verdict(False, "margin")
    return Verdict(True, "defendable")


def probe_schedule(t_since_block_s: float, cfg: DetectorConfig) -> float:
    """Offset to the next probe: one per window, then one per minute after five minutes."""
    if t_since_block_s < 0:
        raise ValueError("time since block must be non-negative")
    if t_since_block_s < cfg.probe_slow_after_s:
        return cfg.fast_period_s
    return cfg.probe_slow_period_s


def select_vulnerable(flows: Iterable[FlowKey], internal_prefix, access_networks=(), include_access=False) -> set[int]:
    """External /24 keys with at least one flow towards an external server port.

    Flows from internal hosts inside ``access_networks`` (WiFi, cellular)
    do not count unless ``include_access`` is set.
    """
    net = ipaddress.IPv4Network(internal_prefix, strict=False)
    access = [ipaddress.IPv4Network(a, strict=False) for a in access_networks]
    out = set()
    for f in flows:
        if ipaddress.IPv4Address(f.src_ip) in net:
            iip, eip, iport, eport = f.src_ip, f.dst_ip, f.src_port, f.dst_port
        else:
            iip, eip, iport, eport = f.dst_ip, f.src_ip, f.dst_port, f.src_port
        if not (eport < 1024 and iport >= 1024):
            continue
        if not include_access and any(ipaddress.IPv4Address(iip) in a for a in access):
            continue
        out.add(int(ipaddress.IPv4Address(eip)) >> 8)
    return out


@dataclass
class WindowRecord:
    prefix: int
    t_start: int
    count: int
    min_ms: float
    valid: bool
    checked: bool  # compared against its predecessor
    phase: str


@dataclass
class DetectorCounters:
    samples: int = 0
    clamped: int = 0
    blocked_samples: int = 0
    no_tau: int = 0
    surge_checks: int = 0


class Detector:
    """Per-prefix detection over a prefix table.

    ``profile_until`` (microseconds) ends the profiling phase at the first
    sample at or after it; ``None`` means detection from the first sample
    with no defendability gating.
    """

    def __init__(
        self,
        cfg: DetectorConfig,
        tau_table: dict[int, float],
        table: PrefixTable | None = None,
        profile_until: int | None = None,
        eligible: set[int] | None = None,
        record_windows: bool = False,
    ):
        self.cfg = cfg
        self.tau = dict(tau_table)
        self.table = table or PrefixTable(TableConfig())
        self.profile_until = profile_until
        self.profiling = profile_until is not None
        self.eligible = eligible
        self.blocks = BlockTable()
        self.events: list[AttackEvent] = []
        self.counters = DetectorCounters()
        self.verdicts: dict[int, Verdict] = {}
        self.frozen: dict[int, tuple[ProfileStats, float]] = {}  # prefix -> (profile, lambda)
        self.windows: list[WindowRecord] | None = [] if record_windows else None
        self.block_log: list[tuple[int, int, int | None]] = []  # prefix, t_block, t_unblock
        self._probes: list[tuple[int, int, int]] = []  # heap of (t, prefix, t_block)
        self._W = cfg.window_us

    # -- phase handling

    def _maybe_end_profiling(self, now: int) -> None:
        if self.profiling and now >= self.profile_until:
            # windows that closed inside the profiling span still count
            self.flush(self.profile_until)
            self.end_profiling()

    def end_profiling(self) -> None:
        """Freeze profiles, resolve lambda per prefix and decide defendability."""
        self.profiling = False
        for slot in self.table.live():
            tau = self.tau_for(slot.key)
            prof = ProfileStats.of(slot)
            lam = self.cfg.lambda_for(prof.max_of_min) if prof.valid_window_count else self.cfg.lambda_ms
            self.frozen[slot.key] = (prof, lam)
            if tau is None:
                self.verdicts[slot.key] = Verdict(False, "no_tau")
            elif self.eligible is not None and slot.key not in self.eligible:
                self.verdicts[slot.key] = Verdict(False, "not_eligible")
            else:
                self.verdicts[slot.key] = is_defendable(prof, tau, lam)

    def tau_for(self, prefix: int) -> float | None:
        return self.tau.get(prefix, self.cfg.default_tau_mid_ms)

    def lambda_for(self, prefix: int, slot: PrefixSlot | None = None) -> float:
        if prefix in self.frozen:
            return self.frozen[prefix][1]
        if self.cfg.lambda_pct is not None and slot is not None and slot.valid_windows:
            return self.cfg.lambda_for(slot.max_of_min)
        return self.cfg.lambda_ms

    def armed(self, prefix: int) -> bool:
        if self.profiling:
            return False
        if self.profile_until is None:
            return self.tau_for(prefix) is not None and (self.eligible is None or prefix in self.eligible)
        v = self.verdicts.get(prefix)
        return bool(v)

    # -- sample path

    def process(self, s: RttSample) -> list[AttackEvent]:
        """Feed one sample (fires due probes first when a responder is set)."""
        if s.prefix_sig is None:
            raise ValueError(f"sample from flow {s.flow_id} has no prefix signature")
        now = s.t_ack
        self._maybe_end_profiling(now)
        key = s.prefix_sig.key
        self.counters.samples += 1
        if key in self.blocks:
            self.counters.blocked_samples += 1
            return []
        slot = self.table.access(s.prefix_sig, now)
        if s.ip is not None:
            slot.last_ip = s.ip
        return self.observe_sample(slot, s, now)

    def observe_sample(self, slot: PrefixSlot, s: RttSample, now: int | None = None) -> list[AttackEvent]:
        now = s.t_ack if now is None else now
        if now < slot.t_last:
            self.counters.clamped += 1
            now = slot.t_last
        out = []
        if now >= slot.t_window_start + self._W:
            ev = self.roll_window(slot, now)
            if ev is not None:
                out.append(ev)
                if slot.attacked:
                    # the triggering sample belongs to a now-blocked prefix
                    slot.t_last = now
                    return out
        slot.t_last = now
        slot.window_count += 1
        if s.rtt_ms < slot.min_rtt_cur:
            slot.min_rtt_cur = s.rtt_ms
        return out

    def roll_window(self, slot: PrefixSlot, now: int) -> AttackEvent | None:
        elapsed = (now - slot.t_window_start) // self._W
        if elapsed < 1:
            raise ValueError("roll_window called before the window ended")
        cur_valid = slot.window_count >= self.cfg.min_samples
        key = slot.key
        event = None
        checked = False
        if cur_valid and slot.prev_valid and not slot.attacked and self.armed(key):
            tau = self.tau_for(key)
            lam = self.lambda_for(key, slot)
            checked = True
            self.counters.surge_checks += 1
            if check_surge(slot.min_rtt_prev, slot.min_rtt_cur, tau, lam):
                event = AttackEvent(key, now, "detected", slot.min_rtt_prev, slot.min_rtt_cur, tau, lam)
        profiling_now = self.profiling or self.profile_until is None or self.cfg.continuous_profiling
        if cur_valid and not slot.attacked and profiling_now:
            slot.max_of_min = max(slot.max_of_min, slot.min_rtt_cur)
            slot.min_of_min = min(slot.min_of_min, slot.min_rtt_cur)
            slot.valid_windows += 1
        if self.windows is not None:
            phase = "profiling" if self.profiling else "detection"
            self.windows.append(WindowRecord(key, slot.t_window_start, slot.window_count, slot.min_rtt_cur, cur_valid, checked, phase))
        slot.min_rtt_prev = slot.min_rtt_cur
        slot.prev_valid = cur_valid and elapsed == 1
        slot.min_rtt_cur = math.inf
        slot.window_count = 0
        slot.t_window_start += elapsed * self._W
        if event is not None:
            self.events.append(event)
            self.mitigate(slot, now)
        return event

    # -- mitigation and FP correction

    def mitigate(self, slot: PrefixSlot, now: int) -> bool:
        """Block the prefix and start probing; idempotent."""
        slot.attacked = True
        if not self.blocks.block(slot.key, now):
            return False
        self.block_log.append((slot.key, now, None))
        first = now + int(round(probe_schedule(0.0, self.cfg) * US))
        heapq.heappush(self._probes, (first, slot.key, now))
        return True

    def probe_target(self, prefix: int) -> str | None:
        slot = self.table.lookup(prefix)
        return slot.last_ip if slot is not None else None

    def due_probes(self, now: int) -> list[tuple[int, int, str | None]]:
        """Pop probes scheduled at or before ``now``: (t, prefix, target ip)."""
        out = []
        while self._probes and self._probes[0][0] <= now:
            t, key, t_block = heapq.heappop(self._probes)
            if key not in self.blocks or self.blocks.blocked[key] != t_block:
                continue
            self.events.append(AttackEvent(key, t, "probe_sent", tau_mid=self.tau_for(key) or math.nan))
            nxt = t + int(round(probe_schedule((t - t_block) / US, self.cfg) * US))
            heapq.heappush(self._probes, (nxt, key, t_block))
            out.append((t, key, self.probe_target(key)))
        return out

    def next_probe_time(self) -> int | None:
        return self._probes[0][0] if self._probes else None

    def on_probe_rtt(self, prefix: int, probe_rtt: float | None, now: int) -> AttackEvent | None:
        """Unblock when a probe answers below tau_mid; a timeout (None) leaves the block."""
        if prefix not in self.blocks or probe_rtt is None:
            return None
        tau = self.tau_for(prefix)
        if not probe_rtt < tau:
            return None
        t_block = self.blocks.unblock(prefix)
        for i in range(len(self.block_log) - 1, -1, -1):
            if self.block_log[i][0] == prefix and self.block_log[i][2] is None:
                self.block_log[i] = (prefix, t_block, now)
                break
        slot = self.table.lookup(prefix)
        if slot is not None:
            slot.attacked = False
            slot.min_rtt_cur = slot.min_rtt_prev = math.inf
            slot.prev_valid = False
            slot.window_count = 0
            slot.t_window_start = now
            slot.t_last = max(slot.t_last, now)
        ev = AttackEvent(prefix, now, "unblocked_fp", tau_mid=tau, min_cur=probe_rtt)
        self.events.append(ev)
        return ev

    def run(self, samples: Iterable[RttSample], responder: Callable[[int, int, str | None], float | None] | None = None,
            until: int | None = None) -> list[AttackEvent]:
        """Drive the detector over a time-sorted stream.

        ``responder(prefix, t, ip)`` answers probes with an RTT or None.
        """
        for s in samples:
            if responder is not None:
                self._fire(s.t_ack, responder)
            self.process(s)
        if until is not None:
            self._maybe_end_profiling(until)
            if responder is not None:
                self._fire(until, responder)
            self.flush(until)
        return self.events

    def flush(self, now: int) -> list[AttackEvent]:
        """Close every window that ended by ``now`` (end of a finite trace)."""
        out = []
        for slot in self.table.live():
            if slot.key in self.blocks or now < slot.t_window_start + self._W:
                continue
            ev = self.roll_window(slot, max(now, slot.t_last))
            if ev is not None:
                out.append(ev)
        return out

    def _fire(self, now: int, responder) -> None:
        while self._probes and self._probes[0][0] <= now:
            for t, key, ip in self.due_probes(self._probes[0][0]):
                self.on_probe_rtt(key, responder(key, t, ip), t)

    def detections(self) -> list[AttackEvent]:
        return [e for e in self.events if e.kind == "detected"]


def with_lambda(cfg: DetectorConfig, lam_ms: float) -> DetectorConfig:
    return replace(cfg, lambda_ms=lam_ms, lambda_pct=None)
