import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dpkt
from hide.rttsource import (
    CsvReadStats,
    Direction,
    FlowKey,
    PrefixSig,
    RttExtractor,
    RttSample,
    RttSourceError,
    build_frame,
    canonical_flow,
    classify_direction,
    extract_rtt_samples,
    hash_index,
    merge_streams,
    parse_prefix,
    prefix_label,
    prefix_signature,
    read_flow_mapping,
    read_pcap,
    read_rtt_csv,
    write_pcap,
    write_rtt_csv,
)
from tcpgen import INTERNAL, Segment, Session, capture, random_session

ACK = dpkt.tcp.TH_ACK


def _extract(packets, prefix=INTERNAL):
    ex = RttExtractor(prefix)
    return list(extract_rtt_samples(packets, prefix, ex)), ex.stats


def _observed(samples):
    return [(s.flow_id, s.t_ack, round(s.rtt_ms * 1000)) for s in samples]


# -- extraction


def test_single_segment_40ms():
    pk = [
        (1.000, build_frame("10.0.0.5", "198.51.100.9", 50000, 443, seq=100, ack=1, flags=ACK, payload=b"x" * 100)),
        (1.040, build_frame("198.51.100.9", "10.0.0.5", 443, 50000, seq=1, ack=200, flags=ACK)),
    ]
    samples, stats = _extract(pk)
    assert len(samples) == 1
    s = samples[0]
    assert s.rtt_ms == pytest.approx(40.0, abs=1e-9)
    assert s.t_ack == 1_040_000
    assert s.ip == "198.51.100.9"
    assert s.prefix_sig == prefix_signature("198.51.100.1")
    assert stats.samples == 1


def test_retransmission_yields_nothing():
    data = build_frame("10.0.0.5", "198.51.100.9", 50000, 443, seq=100, ack=1, flags=ACK, payload=b"x" * 100)
    pk = [(1.0, data), (1.3, data), (1.35, build_frame("198.51.100.9", "10.0.0.5", 443, 50000, seq=1, ack=200, flags=ACK))]
    samples, stats = _extract(pk)
    assert samples == []
    assert stats.retransmits == 1


def test_handshake_sample_and_syn_retransmit():
    syn = build_frame("10.0.0.5", "198.51.100.9", 50000, 443, seq=7, flags=dpkt.tcp.TH_SYN)
    synack = build_frame("198.51.100.9", "10.0.0.5", 443, 50000, seq=90, ack=8, flags=dpkt.tcp.TH_SYN | ACK)
    samples, _ = _extract([(2.0, syn), (2.025, synack)])
    assert [round(s.rtt_ms, 6) for s in samples] == [25.0]
    samples, _ = _extract([(2.0, syn), (3.0, syn), (3.025, synack)])
    assert samples == []


def test_cumulative_ack_covers_earlier_segments():
    sess = Session(segments=[Segment(0, 100, 50_000), Segment(1000, 100, 30_000)])
    packets, truth = capture([sess])
    samples, _ = _extract(packets)
    # the ACK for segment 2 arrives first (31 ms) and covers segment 1
    assert _observed(samples) == [t for t in truth] == [(samples[0].flow_id, 31_000, 30_000)]


def test_sequence_wraparound():
    sess = Session(isn=2**32 - 150, segments=[Segment(0, 100, 5000), Segment(100, 100, 6000), Segment(200, 100, 7000)])
    packets, truth = capture([sess])
    samples, _ = _extract(packets)
    assert _observed(samples) == truth and len(truth) == 3


def test_generator_oracle_fixed_seed():
    rng = np.random.default_rng(11)
    sessions = [random_session(rng, 40, client=f"10.0.{k}.1", server=f"203.0.{113 + k}.9", cport=41000 + k) for k in range(5)]
    packets, truth = capture(sessions)
    samples, stats = _extract(packets)
    assert _observed(samples) == truth
    assert stats.samples == len(truth)
    assert stats.evicted == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.floats(0, 0.5))
def test_generator_oracle_property(seed, n, p_retx):
    rng = np.random.default_rng(seed)
    sessions = [random_session(rng, n, cport=40000 + k, p_retx=p_retx, handshake=bool(k % 2)) for k in range(3)]
    packets, truth = capture(sessions)
    samples, _ = _extract(packets)
    assert _observed(samples) == truth
    n_retx = sum(s.retx_after_us is not None for sess in sessions for s in sess.segments)
    n_data = sum(len(sess.segments) for sess in sessions)
    assert len(truth) <= n_data - n_retx + sum(sess.syn_us is not None for sess in sessions)


def test_pcap_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    packets, truth = capture([random_session(rng, 25)])
    path = tmp_path / "cap.pcap"
    write_pcap(path, packets)
    assert _observed(read_pcap(path, INTERNAL)) == truth


def test_truncated_and_non_tcp_counted():
    good = build_frame("10.0.0.5", "198.51.100.9", 50000, 443, seq=1, ack=1, payload=b"abc")
    udp_ip = dpkt.ip.IP(src=bytes([10, 0, 0, 5]), dst=bytes([8, 8, 8, 8]), p=dpkt.ip.IP_PROTO_UDP,
                        data=dpkt.udp.UDP(sport=1, dport=53, data=b"q"))
    udp_ip.len = len(udp_ip)
    udp = bytes(dpkt.ethernet.Ethernet(type=dpkt.ethernet.ETH_TYPE_IP, data=udp_ip))
    pk = [(0.0, good[:40]), (0.1, udp), (0.2, b"\x00" * 5), (0.3, good)]
    samples, stats = _extract(pk)
    assert samples == []
    assert stats.packets == 4
    assert stats.skipped == 2
    assert stats.non_tcp == 1


def test_pending_cap_evicts_oldest():
    ex = RttExtractor(INTERNAL, pending_cap=4)
    pk = [(i * 0.001, build_frame("10.0.0.5", "198.51.100.9", 50000, 443, seq=1 + 10 * i, payload=b"x" * 10)) for i in range(6)]
    pk.append((0.1, build_frame("198.51.100.9", "10.0.0.5", 443, 50000, ack=11)))
    assert list(extract_rtt_samples(pk, INTERNAL, ex)) == []
    assert ex.stats.evicted == 2


def test_foreign_traffic_ignored():
    pk = [(0.0, build_frame("172.16.0.1", "198.51.100.9", 1, 2, payload=b"x")),
          (0.1, build_frame("198.51.100.9", "172.16.0.1", 2, 1, ack=2))]
    assert _extract(pk)[0] == []


def test_sample_rejects_nonpositive_rtt():
    with pytest.raises(ValueError):
        RttSample(None, "f", 0, 0.0)


# -- flows, directions, prefixes


def test_classify_direction():
    net = "10.0.0.0/8"
    assert classify_direction(FlowKey("10.0.0.1", "1.2.3.4", 40000, 443), net) is Direction.CISO
    assert classify_direction(FlowKey("10.0.0.1", "1.2.3.4", 443, 50000), net) is Direction.SICO
    assert classify_direction(FlowKey("10.0.0.1", "1.2.3.4", 80, 443), net) is Direction.CISO
    assert classify_direction(FlowKey("1.2.3.4", "10.0.0.1", 50000, 22), net) is Direction.SICO
    with pytest.raises(RttSourceError):
        classify_direction(FlowKey("1.2.3.4", "5.6.7.8", 1, 2), net)


def test_canonical_flow_puts_internal_first():
    f = canonical_flow("1.2.3.4", "10.0.0.1", 443, 40000, "10.0.0.0/8")
    assert (f.src_ip, f.src_port, f.dst_ip, f.dst_port) == ("10.0.0.1", 40000, "1.2.3.4", 443)


def test_prefix_signature_per_slash24():
    a, b = prefix_signature("203.0.113.1"), prefix_signature("203.0.113.254")
    assert a == b
    assert a.key == 0xCB0071
    assert prefix_signature("203.0.114.1").key != a.key
    assert 0 <= a.index < 65536
    assert prefix_label(a.key) == "203.0.113.0/24"
    assert parse_prefix("203.0.113.0/24") == parse_prefix("203.0.113.77") == a.key
    assert parse_prefix("203.0.113.128/25") == a.key


def test_hash_is_deterministic_and_seeded():
    assert hash_index(0xCB0071, 0) == hash_index(0xCB0071, 0)
    idx = [hash_index(k, 0) for k in range(2000)]
    idx1 = [hash_index(k, 1) for k in range(2000)]
    assert idx != idx1
    # roughly uniform: 2000 keys into 16 buckets
    counts = np.bincount(np.array(idx) % 16, minlength=16)
    assert counts.min() > 80


def test_colliding_prefixes_share_index_but_not_key():
    seen = {}
    pair = None
    for k in range(1 << 16):
        i = hash_index(k)
        if i in seen:
            pair = (seen[i], k)
            break
        seen[i] = k
    assert pair is not None
    a, b = (PrefixSig(hash_index(k), k) for k in pair)
    assert a.index == b.index and a.key != b.key and a != b


# -- CSV replay


def _write(path, text):
    path.write_text(text)
    return path


def test_csv_empty_file(tmp_path):
    assert list(read_rtt_csv(_write(tmp_path / "e.csv", ""))) == []
    assert list(read_rtt_csv(_write(tmp_path / "h.csv", "flow_id,t_ack_us,rtt_ms\n"))) == []


def test_csv_rows_and_rejection(tmp_path):
    p = _write(tmp_path / "r.csv", "# schema=x\nflow_id,t_ack_us,rtt_ms\nf1,10,5.5\nf1,20,-1\nf2,30,7.25\n")
    stats = CsvReadStats()
    rows = list(read_rtt_csv(p, stats=stats))
    assert [(s.flow_id, s.t_ack, s.rtt_ms) for s in rows] == [("f1", 10, 5.5), ("f2", 30, 7.25)]
    assert (stats.rows, stats.rejected) == (3, 1)
    assert all(s.prefix_sig is None for s in rows)


def test_csv_unsorted_and_bad_header(tmp_path):
    with pytest.raises(RttSourceError, match=":4"):
        list(read_rtt_csv(_write(tmp_path / "u.csv", "# c\nflow_id,t_ack_us,rtt_ms\nf,20,1\nf,10,1\n")))
    with pytest.raises(RttSourceError):
        list(read_rtt_csv(_write(tmp_path / "b.csv", "a,b,c\n1,2,3\n")))
    with pytest.raises(RttSourceError):
        list(read_rtt_csv(_write(tmp_path / "g.csv", "flow_id,t_ack_us,rtt_ms\nf,xx,1\n")))


def test_csv_mapping_and_round_trip(tmp_path):
    m = _write(tmp_path / "m.csv", "flow_id,dest_prefix,dest_lat,dest_lon\nf1,198.51.100.0/24,40.0,-74.0\n")
    mapping = read_flow_mapping(m)
    assert mapping["f1"] == (parse_prefix("198.51.100.0/24"), 40.0, -74.0)
    p = _write(tmp_path / "r.csv", "flow_id,t_ack_us,rtt_ms\nf1,10,5.5\nf9,11,6\n")
    rows = list(read_rtt_csv(p, mapping))
    assert rows[0].prefix_sig == prefix_signature("198.51.100.3") and rows[1].prefix_sig is None
    out = tmp_path / "o.csv"
    assert write_rtt_csv(rows, out, header_comment="schema=test") == 2
    back = list(read_rtt_csv(out, mapping))
    assert back == rows


def test_merge_streams_sorted():
    a = [RttSample(None, "b", 5, 1.0), RttSample(None, "b", 9, 1.0)]
    b = [RttSample(None, "a", 5, 1.0), RttSample(None, "a", 7, 1.0)]
    assert [(s.t_ack, s.flow_id) for s in merge_streams(a, b)] == [(5, "a"), (5, "b"), (7, "a"), (9, "b")]
