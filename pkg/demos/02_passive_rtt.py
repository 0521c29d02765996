"""Passive RTT from a packet capture.

Builds a tiny capture by hand: a handshake, two data segments, one of them
retransmitted.  Only segments whose ACK is unambiguous produce a sample.
"""

import tempfile
from pathlib import Path

import dpkt

from hide.rttsource import RttExtractor, build_frame, read_pcap, write_pcap

C, S = "10.0.0.5", "198.51.100.9"
SYN, ACK = dpkt.tcp.TH_SYN, dpkt.tcp.TH_ACK

packets = [
    (0.000, build_frame(C, S, 50000, 443, seq=999, flags=SYN)),
    (0.031, build_frame(S, C, 443, 50000, seq=4999, ack=1000, flags=SYN | ACK)),  # handshake: 31 ms
    (0.032, build_frame(C, S, 50000, 443, seq=1000, ack=5000, payload=b"a" * 500)),
    (0.064, build_frame(S, C, 443, 50000, seq=5000, ack=1500)),                    # clean: 32 ms
    (0.100, build_frame(C, S, 50000, 443, seq=1500, ack=5000, payload=b"b" * 500)),
    (0.300, build_frame(C, S, 50000, 443, seq=1500, ack=5000, payload=b"b" * 500)),  # retransmission
    (0.333, build_frame(S, C, 443, 50000, seq=5000, ack=2000)),                    # ambiguous, skipped
]

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.pcap"
    write_pcap(path, packets)
    ex = RttExtractor("10.0.0.0/8")
    samples = list(read_pcap(path, "10.0.0.0/8", ex))

for s in samples:
    print(f"t={s.t_ack / 1e6:.3f}s  {s.ip:<15} rtt {s.rtt_ms:6.2f} ms  prefix key {s.prefix_sig.key:#08x}")
print(f"\n{ex.stats.packets} packets, {ex.stats.samples} samples, {ex.stats.retransmits} retransmission(s) ignored")
