"""Catching an interception in a live-like trace.

The bundled iperf-like scenario has a prefix whose floor is 190.5 ms and
whose geographic threshold is 199 ms.  At t=25 s an attacker adds 25 ms.
"""

from hide.rttsource import prefix_label
from hide.simulator import load_scenario, simulate

sc = load_scenario("iperf-like")
res = simulate(sc)
m = res.metrics

print(f"scenario {sc.name}: {sc.duration_s:g} s, profiling until {sc.profile_until_s:g} s, "
      f"W={sc.detector.window_s:g} s, lambda={sc.detector.lambda_ms:g} ms\n")
for p, verdict in m.verdicts.items():
    print(f"  {p}: {verdict}")

print("\nevents:")
for e in res.events:
    if e.kind == "detected":
        print(f"  {e.t / 1e6:8.3f}s  {prefix_label(e.prefix)}  detected: window minimum {e.min_prev:.1f} -> "
              f"{e.min_cur:.1f} ms crosses tau {e.tau_mid:.0f} ms")
    elif e.kind != "probe_sent":
        print(f"  {e.t / 1e6:8.3f}s  {prefix_label(e.prefix)}  {e.kind}")
probes = sum(e.kind == "probe_sent" for e in res.events)
print(f"  ({probes} probes sent while blocked; replies stay above tau until the attack ends "
      f"at {sc.attacks[0].t_end:g} s)")

a = sc.attacks[0]
print(f"\nattack at {a.t_start:g} s (+{a.delta_ms:g} ms) detected {m.detection_latency_s[0]:.3f} s "
      f"after the first affected sample; false positives: {m.false_positives}")
