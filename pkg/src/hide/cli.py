"""Command-line entry point: feasibility, tau, detect, simulate.

Every run writes its outputs plus a manifest.json into --out-dir.
Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .attackgeo import AttackSearch, coverage_report, lower_bound_mid_rtt, write_attacks_csv
from .delaymodel import ModelError, PercentileDelayModel, realistic_defendability
from .detector import ConfigError, DetectorConfig, TauTableError, load_config, read_tau_table, write_event_log, write_tau_table
from .geodesy import (
    BUNDLED_BOUNDARIES,
    DEFAULT_RESOLUTION_KM,
    FINE_RESOLUTION_KM,
    BoundaryError,
    GeoPoint,
    distance_table,
    load_boundaries,
    write_distance_csv,
)
from .rttsource import RttExtractor, RttSourceError, parse_prefix, prefix_label, read_flow_mapping, read_pcap, read_rtt_csv
from .simulator import ScenarioError, load_scenario, replay_evaluation, simulate, write_windows_csv

log = logging.getLogger("hide")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
SCHEMA = "hide.{}/1"


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects inputs and outputs for the manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.seed = getattr(args, "seed", None)

    def input(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"input not found: {p}")
        self.inputs[str(p)] = sha256_file(p)
        return p

    def out(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name

    def header(self, kind: str) -> str:
        return f"schema={SCHEMA.format(kind)} tool=hide-{__version__}"

    def write_json(self, name: str, kind: str, payload: dict) -> None:
        doc = {"schema": SCHEMA.format(kind), **payload}
        self.out(name).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")

    def finish(self) -> None:
        doc = {
            "schema": SCHEMA.format("manifest"),
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "tool_version": __version__,
            "outputs": self.outputs + ["manifest.json"],
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, Path):
        return str(o)
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _boundaries(run: Run, path):
    if path is None:
        run.inputs[f"bundled:{BUNDLED_BOUNDARIES.name}"] = sha256_file(BUNDLED_BOUNDARIES)
        return load_boundaries()
    return load_boundaries(run.input(path))


def _modes(mode: str) -> list[str]:
    return ["mainland", "entire"] if mode == "both" else [mode]


# -- feasibility

def cmd_feasibility(args) -> int:
    run = Run("feasibility", args)
    b = _boundaries(run, args.boundaries)
    run.config = {"mode": args.mode, "resolution_km": args.resolution_km, "fine_km": args.fine_km,
                  "condition_ms": args.condition_ms, "victims": args.victim, "countries": len(b)}
    model = None
    if args.delay_model:
        model = PercentileDelayModel.read_csv(run.input(args.delay_model))
    for v in args.victim or []:
        b.get(v)
    for mode in _modes(args.mode):
        rows, _ = distance_table(b, mode, args.resolution_km, args.fine_km)
        write_distance_csv(rows, run.out(f"distances_{mode}.csv"), run.header("distances"))
        search = AttackSearch(b, args.resolution_km, args.fine_km, mode)
        if args.victim:
            attacks = [a for v in args.victim for a in search.victim_attacks(v)]
        else:
            attacks = search.all_attacks(progress=_progress if args.verbose else None)
        for a in attacks:
            if a.tau_dev_ms < 0 or a.tau_mid_ms + 1e-9 < a.tau_pre_ms:
                raise InvariantError(f"negative deviation for {a.victim} <- {a.threat}")
        write_attacks_csv(attacks, run.out(f"attacks_{mode}.csv"), run.header("attacks"))
        rep = coverage_report(attacks, args.condition_ms)
        if not 0 <= rep.overall_pct <= 100:
            raise InvariantError(f"coverage out of range: {rep.overall_pct}")
        payload = {"mode": mode, "resolution_km": args.resolution_km, "fine_km": args.fine_km,
                   "attacks": len(attacks), "ideal": rep.to_dict()}
        if model is not None:
            payload["realistic"] = realistic_defendability(model, attacks, args.condition_ms).to_dict()
        run.write_json(f"coverage_{mode}.json", "coverage", payload)
        print(f"{mode}: {len(b)} countries, {len(attacks)} attacks, coverage {rep.overall_pct:.2f}% at {args.condition_ms:g} ms")
    run.finish()
    return EXIT_OK


def _progress(done, total, name):
    print(f"  {done}/{total} {name}", file=sys.stderr)


# -- tau

def _read_prefix_geo(path) -> list[tuple[int, float, float]]:
    """(prefix key, lat, lon) from prefix,lat,lon or the flow mapping layout."""
    seen: dict[int, tuple[float, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        cols = reader.fieldnames or []
        if {"prefix", "lat", "lon"} <= set(cols):
            keys = ("prefix", "lat", "lon")
        elif {"dest_prefix", "dest_lat", "dest_lon"} <= set(cols):
            keys = ("dest_prefix", "dest_lat", "dest_lon")
        else:
            raise RttSourceError(f"{path}: need columns prefix,lat,lon or dest_prefix,dest_lat,dest_lon")
        for r in reader:
            k = parse_prefix(r[keys[0]])
            ll = (float(r[keys[1]]), float(r[keys[2]]))
            if k in seen and seen[k] != ll:
                log.warning("%s has conflicting coordinates; keeping the first", prefix_label(k))
            seen.setdefault(k, ll)
    return [(k, lat, lon) for k, (lat, lon) in seen.items()]


def cmd_tau(args) -> int:
    run = Run("tau", args)
    if not args.threat and not args.threat_polygon:
        raise UsageError("give at least one --threat country or --threat-polygon file")
    regions = []
    if args.threat:
        b = _boundaries(run, args.boundaries)
        for name in args.threat:
            try:
                regions.append(b.get(name))
            except KeyError as e:
                raise UsageError(e.args[0]) from e
    polygon_regions = []
    for p in args.threat_polygon or []:
        for c in load_boundaries(run.input(p)):
            polygon_regions.extend(c.polygons)
    src = GeoPoint(args.src_lat, args.src_lon)
    rows = _read_prefix_geo(run.input(args.prefix_geo))
    run.config = {"src": [args.src_lat, args.src_lon], "threats": args.threat, "threat_polygons": args.threat_polygon,
                  "mode": args.mode, "resolution_km": args.resolution_km, "fine_km": args.fine_km}
    out = []
    for key, lat, lon in sorted(rows):
        dst = GeoPoint(lat, lon)
        taus = []
        if regions:
            taus.append(lower_bound_mid_rtt(src, dst, regions, args.resolution_km, args.fine_km, args.mode))
        if polygon_regions:
            taus.append(lower_bound_mid_rtt(src, dst, polygon_regions, args.resolution_km, args.fine_km))
        out.append((prefix_label(key), min(taus)))
    write_tau_table(out, run.out("tau_table.csv"), run.header("tau_table"))
    print(f"wrote {len(out)} tau_mid rows")
    run.finish()
    return EXIT_OK


# -- detect

def _detector_config(args, base: DetectorConfig | None = None) -> DetectorConfig:
    cfg = base or DetectorConfig()
    kw = {}
    if args.window_s is not None:
        kw["window_s"] = args.window_s
    if args.lambda_ms is not None:
        kw.update(lambda_ms=args.lambda_ms, lambda_pct=None)
    if args.lambda_pct is not None:
        kw["lambda_pct"] = args.lambda_pct
    if getattr(args, "min_samples", None) is not None:
        kw["min_samples"] = args.min_samples
    return replace(cfg, **kw) if kw else cfg


def cmd_detect(args) -> int:
    run = Run("detect", args)
    cfg = _detector_config(args, load_config(run.input(args.config)) if args.config else None)
    tau = read_tau_table(run.input(args.tau_table))
    if args.pcap:
        if not args.internal_prefix:
            raise UsageError("--pcap needs --internal-prefix")
        ex = RttExtractor(args.internal_prefix)
        samples = list(read_pcap(run.input(args.pcap), args.internal_prefix, ex))
        extract = asdict(ex.stats)
    else:
        if not args.mapping:
            raise UsageError("--samples needs --mapping (flow_id,dest_prefix,dest_lat,dest_lon)")
        mapping = read_flow_mapping(run.input(args.mapping))
        samples = list(read_rtt_csv(run.input(args.samples), mapping))
        extract = {"unmapped": sum(s.prefix_sig is None for s in samples)}
    present = {s.prefix_sig.key for s in samples if s.prefix_sig is not None}
    uncovered = sorted(prefix_label(k) for k in present - set(tau))
    run.config = {"detector": asdict(cfg), "profile_fraction": args.profile_fraction, "min_buckets": args.min_buckets}
    res = replay_evaluation(samples, tau, cfg, min_buckets=args.min_buckets, profile_fraction=args.profile_fraction, seed=args.seed)
    m = res.metrics
    if not 0 <= m.fpr <= 1:
        raise InvariantError(f"FPR out of range: {m.fpr}")
    write_event_log([e for e in res.events if e.kind != "probe_sent"], run.out("events.csv"), run.header("events"))
    write_windows_csv(res.windows, run.out("windows.csv"), run.header("windows"))
    run.write_json("metrics.json", "metrics", {"metrics": m.to_dict(), "uncovered_prefixes": uncovered,
                                               "extraction": extract, "samples": len(samples)})
    print(f"{len(samples)} samples, {m.eligible_prefixes} eligible prefixes, {m.defendable_prefixes} defendable, "
          f"{m.false_positives} detections, {len(uncovered)} prefixes without tau")
    run.finish()
    return EXIT_OK


# -- simulate

def cmd_simulate(args) -> int:
    run = Run("simulate", args)
    if not Path(args.scenario).exists() and args.scenario in ("iperf-like", "bitcoin-like"):
        run.inputs[f"bundled:{args.scenario}"] = ""
    else:
        run.input(args.scenario)
    sc = load_scenario(args.scenario)
    cfg = _detector_config(args, sc.detector)
    seed = sc.seed if args.seed is None else args.seed
    run.seed = seed
    run.config = {"scenario": sc.name, "detector": asdict(cfg), "duration_s": sc.duration_s,
                  "profile_until_s": sc.profile_until_s}
    res = simulate(sc, seed, cfg)
    m = res.metrics
    for lat in m.detection_latency_s.values():
        if lat is not None and lat < 0:
            raise InvariantError("negative detection latency")
    write_event_log(res.events, run.out("events.csv"), run.header("events"))
    write_windows_csv(res.windows, run.out("windows.csv"), run.header("windows"))
    run.write_json("metrics.json", "metrics", {"scenario": sc.name, "metrics": m.to_dict()})
    for i, lat in m.detection_latency_s.items():
        a = sc.attacks[i]
        verdict = "not covered" if lat is None and m.uncovered_attacks else ("missed" if lat is None else f"detected after {lat:.3f} s")
        print(f"attack {i} on {prefix_label(a.prefix)} at {a.t_start:g} s: {verdict}")
    print(f"false positives {m.false_positives}, FPR {m.fpr:.3g}")
    run.finish()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hide", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hide {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--out-dir", default="out", help="output directory (default: out)")
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    def geo(sp):
        sp.add_argument("--boundaries", help="GeoJSON/TopoJSON countries (default: bundled Natural Earth 1:10m)")
        sp.add_argument("--resolution-km", type=float, default=DEFAULT_RESOLUTION_KM)
        sp.add_argument("--fine-km", type=float, default=FINE_RESOLUTION_KM)

    def det(sp):
        sp.add_argument("--window-s", type=float, default=None, help="window size (default 0.25)")
        lam = sp.add_mutually_exclusive_group()
        lam.add_argument("--lambda-ms", type=float, default=None, help="surge threshold in ms (default 5)")
        lam.add_argument("--lambda-pct", type=float, default=None, help="surge threshold as %% of max(minRTT)")

    f = sub.add_parser("feasibility", help="distance tables, optimal attacks and coverage")
    geo(f)
    f.add_argument("--mode", choices=["mainland", "entire", "both"], default="mainland")
    f.add_argument("--condition-ms", type=float, default=5.0)
    f.add_argument("--victim", action="append", help="restrict to these victim countries (repeatable)")
    f.add_argument("--delay-model", help="percentile model CSV for realistic coverage")
    common(f, seed=False)
    f.set_defaults(func=cmd_feasibility)

    t = sub.add_parser("tau", help="per-prefix tau_mid table")
    geo(t)
    t.add_argument("--mode", choices=["mainland", "entire"], default="mainland")
    t.add_argument("--src-lat", type=float, required=True)
    t.add_argument("--src-lon", type=float, required=True)
    t.add_argument("--prefix-geo", required=True, help="CSV prefix,lat,lon (or the flow mapping layout)")
    t.add_argument("--threat", action="append", help="threat country name (repeatable)")
    t.add_argument("--threat-polygon", action="append", help="GeoJSON file of threat polygons (repeatable)")
    common(t, seed=False)
    t.set_defaults(func=cmd_tau)

    d = sub.add_parser("detect", help="replay RTT samples through the detector")
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--samples", help="CSV flow_id,t_ack_us,rtt_ms")
    src.add_argument("--pcap", help="Ethernet/IPv4 capture file")
    d.add_argument("--mapping", help="CSV flow_id,dest_prefix,dest_lat,dest_lon")
    d.add_argument("--internal-prefix", help="protected network, e.g. 10.0.0.0/8 (pcap input)")
    d.add_argument("--tau-table", required=True)
    d.add_argument("--config", help="YAML detector config")
    det(d)
    d.add_argument("--min-samples", type=int, default=None)
    d.add_argument("--profile-fraction", type=float, default=0.5)
    d.add_argument("--min-buckets", type=int, default=10, help="one-minute buckets a prefix must be active in")
    common(d)
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("simulate", help="run a scenario file (or bundled iperf-like / bitcoin-like)")
    s.add_argument("scenario")
    det(s)
    common(s)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ScenarioError) as e:
        print(f"hide {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, BoundaryError, RttSourceError, ModelError, TauTableError, KeyError, csv.Error) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"hide {args.command}: {msg}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as e:
        print(f"hide {args.command}: invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
