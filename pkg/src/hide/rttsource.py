"""RTT sample streams from packet captures or CSV replays.

Capture extraction matches outbound data segments with the inbound ACK
that first covers them. Retransmitted segments never yield a sample.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import ipaddress
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import dpkt

log = logging.getLogger(__name__)

TABLE_SLOTS = 65536
PENDING_CAP = 64
RTT_CSV_HEADER = ["flow_id", "t_ack_us", "rtt_ms"]
MAPPING_HEADER = ["flow_id", "dest_prefix", "dest_lat", "dest_lon"]


class RttSourceError(ValueError):
    pass


@dataclass(frozen=True)
class PrefixSig:
    index: int  # 16-bit table index
    key: int  # top 24 bits of the external address


def prefix_key(ip) -> int:
    return int(ipaddress.IPv4Address(ip)) >> 8


def hash_index(key: int, seed: int = 0, slots: int = TABLE_SLOTS) -> int:
    """Deterministic keyed hash of a 24-bit key into ``slots`` buckets."""
    h = hashlib.blake2b(key.to_bytes(3, "big"), digest_size=8, key=seed.to_bytes(8, "big"))
    return int.from_bytes(h.digest(), "big") % slots


def prefix_signature(external_ip, slots: int = TABLE_SLOTS) -> PrefixSig:
    key = prefix_key(external_ip)
    return PrefixSig(hash_index(key, 0, slots), key)


def prefix_label(key: int) -> str:
    return f"{ipaddress.IPv4Address(key << 8)}/24"


def parse_prefix(text: str) -> int:
    """24-bit key from '1.2.3.0/24' or a bare address."""
    net = ipaddress.IPv4Network(text.strip(), strict=False)
    if net.prefixlen > 24:
        net = net.supernet(new_prefix=24)
    return int(net.network_address) >> 8


@dataclass(frozen=True)
class RttSample:
    prefix_sig: PrefixSig | None
    flow_id: str
    t_ack: int  # microseconds
    rtt_ms: float
    ip: str | None = None  # external address, kept for probing

    def __post_init__(self):
        if not self.rtt_ms > 0:
            raise ValueError(f"rtt_ms must be positive, got {self.rtt_ms}")


@dataclass(frozen=True)
class FlowKey:
    """TCP 5-tuple with the internal host on the src side."""

    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int = 6

    @property
    def flow_id(self) -> str:
        return f"{self.src_ip}:{self.src_port}-{self.dst_ip}:{self.dst_port}"


class Direction(enum.Enum):
    CISO = "CISO"  # client inside, server outside
    SICO = "SICO"  # server inside, client outside


def _in(ip, net) -> bool:
    return ipaddress.IPv4Address(ip) in net


def canonical_flow(src_ip, dst_ip, sport, dport, internal_prefix, protocol=6) -> FlowKey:
    net = ipaddress.IPv4Network(internal_prefix, strict=False)
    if _in(src_ip, net):
        return FlowKey(src_ip, dst_ip, sport, dport, protocol)
    if _in(dst_ip, net):
        return FlowKey(dst_ip, src_ip, dport, sport, protocol)
    raise RttSourceError(f"neither {src_ip} nor {dst_ip} is inside {internal_prefix}")


def classify_direction(flow: FlowKey, internal_prefix) -> Direction:
    """Port heuristic; ambiguous flows default to CISO."""
    net = ipaddress.IPv4Network(internal_prefix, strict=False)
    if _in(flow.src_ip, net):
        internal_port, external_port = flow.src_port, flow.dst_port
    elif _in(flow.dst_ip, net):
        internal_port, external_port = flow.dst_port, flow.src_port
    else:
        raise RttSourceError(f"flow {flow.flow_id} has no endpoint inside {internal_prefix}")
    if internal_port < 1024 and external_port >= 1024:
        return Direction.SICO
    return Direction.CISO


@dataclass
class ExtractStats:
    packets: int = 0
    skipped: int = 0  # truncated or garbled
    non_tcp: int = 0
    samples: int = 0
    retransmits: int = 0
    evicted: int = 0


@dataclass
class _FlowState:
    # expected ack -> data timestamp (us); None marks a retransmitted segment
    pending: OrderedDict = field(default_factory=OrderedDict)
    syn_t: int | None = None
    syn_isn: int | None = None
    syn_retx: bool = False
    last_t: int = 0


def _seq_ge(a: int, b: int) -> bool:
    """a >= b in 32-bit sequence space."""
    return ((a - b) & 0xFFFFFFFF) < 0x80000000


class RttExtractor:
    """Incremental data/ACK matcher; feed packets in capture order."""

    def __init__(self, internal_prefix, pending_cap: int = PENDING_CAP, slots: int = TABLE_SLOTS):
        self.net = ipaddress.IPv4Network(internal_prefix, strict=False)
        self.pending_cap = pending_cap
        self.slots = slots
        self.flows: dict[FlowKey, _FlowState] = {}
        self.stats = ExtractStats()

    def feed(self, t_us: int, ip: dpkt.ip.IP) -> list[RttSample]:
        tcp = ip.data
        src, dst = _ip_str(ip.src), _ip_str(ip.dst)
        outbound = _in(src, self.net)
        if not outbound and not _in(dst, self.net):
            return []
        flow = canonical_flow(src, dst, tcp.sport, tcp.dport, self.net)
        st = self.flows.setdefault(flow, _FlowState())
        st.last_t = t_us
        syn = bool(tcp.flags & dpkt.tcp.TH_SYN)
        ack = bool(tcp.flags & dpkt.tcp.TH_ACK)
        out: list[RttSample] = []

        if outbound:
            if syn and not ack:
                # repeated SYN: Karn rule for the handshake too
                if st.syn_isn == tcp.seq:
                    st.syn_retx = True
                    self.stats.retransmits += 1
                else:
                    st.syn_t, st.syn_isn, st.syn_retx = t_us, tcp.seq, False
            seg_len = len(tcp.data) + (1 if tcp.flags & dpkt.tcp.TH_FIN else 0)
            if seg_len and not syn:
                expected = (tcp.seq + seg_len) & 0xFFFFFFFF
                if expected in st.pending:
                    st.pending[expected] = None
                    self.stats.retransmits += 1
                else:
                    st.pending[expected] = t_us
                    if len(st.pending) > self.pending_cap:
                        st.pending.popitem(last=False)
                        self.stats.evicted += 1
        elif ack:
            if syn:
                if st.syn_t is not None and not st.syn_retx and tcp.ack == (st.syn_isn + 1) & 0xFFFFFFFF:
                    out.extend(self._sample(flow, t_us, t_us - st.syn_t))
                st.syn_t = None
            else:
                out.extend(self._match(flow, st, tcp.ack, t_us))
        return out

    def _match(self, flow, st: _FlowState, ack_no: int, t_us: int) -> list[RttSample]:
        covered = [e for e in st.pending if _seq_ge(ack_no, e)]
        if not covered:
            return []
        # cumulative ACK: exact match preferred, otherwise the lowest covered entry
        chosen = ack_no if ack_no in st.pending else max(covered, key=lambda e: (ack_no - e) & 0xFFFFFFFF)
        t_data = st.pending[chosen]
        for e in covered:
            del st.pending[e]
        if t_data is None:
            return []
        return self._sample(flow, t_us, t_us - t_data)

    def _sample(self, flow: FlowKey, t_us: int, rtt_us: int) -> list[RttSample]:
        if rtt_us <= 0:
            self.stats.skipped += 1  # same-timestamp pair, below capture resolution
            return []
        self.stats.samples += 1
        key = prefix_key(flow.dst_ip)
        return [RttSample(PrefixSig(hash_index(key, 0, self.slots), key), flow.flow_id, t_us, rtt_us / 1000.0, flow.dst_ip)]


def _ip_str(raw: bytes) -> str:
    return str(ipaddress.IPv4Address(raw))


def extract_rtt_samples(packets: Iterable[tuple[float, bytes]], internal_prefix, extractor: RttExtractor | None = None) -> Iterator[RttSample]:
    """Samples from (timestamp seconds, Ethernet frame bytes) pairs.

    Pass a ``RttExtractor`` to read its counters afterwards.
    """
    ex = extractor or RttExtractor(internal_prefix)
    for ts, buf in packets:
        ex.stats.packets += 1
        t_us = int(round(ts * 1_000_000))
        try:
            eth = dpkt.ethernet.Ethernet(buf)
        except (dpkt.UnpackError, ValueError):
            ex.stats.skipped += 1
            continue
        ip = eth.data
        if not isinstance(ip, dpkt.ip.IP):
            ex.stats.non_tcp += 1
            continue
        if not isinstance(ip.data, dpkt.tcp.TCP):
            if ip.p == dpkt.ip.IP_PROTO_TCP:
                ex.stats.skipped += 1  # dpkt leaves truncated TCP as bytes
            else:
                ex.stats.non_tcp += 1
            continue
        yield from ex.feed(t_us, ip)


def read_pcap(path, internal_prefix, extractor: RttExtractor | None = None) -> Iterator[RttSample]:
    with open(path, "rb") as fh:
        yield from extract_rtt_samples(dpkt.pcap.Reader(fh), internal_prefix, extractor)


def build_frame(src, dst, sport, dport, seq=0, ack=0, flags=dpkt.tcp.TH_ACK, payload=b"") -> bytes:
    """Ethernet/IPv4/TCP frame bytes; used by the synthetic capture generators."""
    tcp = dpkt.tcp.TCP(sport=sport, dport=dport, seq=seq, ack=ack, flags=flags, data=payload)
    ip = dpkt.ip.IP(src=ipaddress.IPv4Address(src).packed, dst=ipaddress.IPv4Address(dst).packed, p=dpkt.ip.IP_PROTO_TCP, data=tcp)
    ip.len = len(ip)
    return bytes(dpkt.ethernet.Ethernet(type=dpkt.ethernet.ETH_TYPE_IP, data=ip))


def write_pcap(path, packets: Iterable[tuple[float, bytes]]) -> None:
    with open(path, "wb") as fh:
        w = dpkt.pcap.Writer(fh)
        for ts, buf in packets:
            w.writepkt(buf, ts=ts)


@dataclass
class CsvReadStats:
    rows: int = 0
    rejected: int = 0


def read_flow_mapping(path) -> dict[str, tuple[int, float, float]]:
    """flow_id -> (24-bit prefix key, dest lat, dest lon)."""
    out = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out[r["flow_id"]] = (parse_prefix(r["dest_prefix"]), float(r["dest_lat"]), float(r["dest_lon"]))
    return out


def read_rtt_csv(path, mapping: dict | None = None, stats: CsvReadStats | None = None, slots: int = TABLE_SLOTS) -> Iterator[RttSample]:
    """Replay samples from ``flow_id,t_ack_us,rtt_ms`` rows.

    ``mapping`` (from ``read_flow_mapping``) attaches prefix signatures;
    without it samples carry no signature.
    """
    stats = stats if stats is not None else CsvReadStats()
    with open(path, newline="") as fh:
        pos = [0]  # physical line number of the last line handed to the reader

        def data_lines():
            for n, line in enumerate(fh, start=1):
                if not line.startswith("#"):
                    pos[0] = n
                    yield line

        reader = csv.reader(data_lines())
        header = next(reader, None)
        if header is None:
            return
        if [h.strip() for h in header] != RTT_CSV_HEADER:
            raise RttSourceError(f"{path}: expected header {','.join(RTT_CSV_HEADER)}, got {','.join(header)}")
        last_t = None
        for row in reader:
            lineno = pos[0]
            if not row:
                continue
            try:
                flow_id, t_ack, rtt = row[0], int(row[1]), float(row[2])
            except (IndexError, ValueError) as e:
                raise RttSourceError(f"{path}:{lineno}: bad row {row!r}") from e
            if last_t is not None and t_ack < last_t:
                raise RttSourceError(f"{path}:{lineno}: rows not time-sorted ({t_ack} < {last_t})")
            last_t = t_ack
            stats.rows += 1
            if not rtt > 0:
                stats.rejected += 1
                continue
            sig = None
            if mapping is not None and flow_id in mapping:
                key = mapping[flow_id][0]
                sig = PrefixSig(hash_index(key, 0, slots), key)
            yield RttSample(sig, flow_id, t_ack, rtt)


def write_rtt_csv(samples: Iterable[RttSample], path, header_comment: str | None = None) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(RTT_CSV_HEADER)
        for s in samples:
            w.writerow([s.flow_id, s.t_ack, repr(float(s.rtt_ms))])
            n += 1
    return n


def merge_streams(*streams: Iterable[RttSample]) -> list[RttSample]:
    """Time-sorted merge; ties broken by flow id."""
    allsamples = [s for st in streams for s in st]
    allsamples.sort(key=lambda s: (s.t_ack, s.flow_id))
    return allsamples
