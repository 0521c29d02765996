"""How far must an interceptor detour traffic, and is that visible in RTT?

For a few victim countries we place the hardest-to-see interception: the
victim host, its peer and the attacker's relay are chosen to minimise the
extra round trip.  The deviation is what a latency detector has to catch.
"""

from hide.attackgeo import AttackSearch, coverage_report, deviation_surface, lower_bound_mid_rtt
from hide.geodesy import FIBER_KM_PER_MS, GeoPoint, great_circle_km, load_boundaries

world = load_boundaries()
search = AttackSearch(world)

print("Optimal attacks (mainland boundaries, 25 km grid refined to 5 km)\n")
for victim, threat in [("Germany", "France"), ("Germany", "Russia"), ("New Zealand", "Australia"), ("Brazil", "China")]:
    a = search.attack(victim, threat)
    print(f"{threat:>10} -> {victim:<12} pre {a.tau_pre_ms:6.2f} ms  mid {a.tau_mid_ms:6.2f} ms  "
          f"deviation {a.tau_dev_ms:6.2f} ms")
print("\nNeighbours can intercept almost for free; distant attackers cannot.\n")

# share of attacks on one victim that leave at least a 5 ms trace
nz = search.victim_attacks("New Zealand")
rep = coverage_report(nz, 5.0)
print(f"New Zealand: {rep.overall_pct:.1f}% of {len(nz)} optimal attacks deviate by >= 5 ms")

# the deviation surface: peer separation x vs attacker distance y
z = deviation_surface([0, 1090, 1872], [2500, 3045, 3436])
print("\nDeviation (ms) when the attacker sits y km from co-located/separated endpoints:")
for x, row in zip([0, 1090, 1872], z):
    print(f"  separation {x:>5} km: " + "  ".join(f"{v:6.2f}" for v in row))

# a static threshold for one flow: London <-> Edinburgh, threat North Korea
london, edinburgh = GeoPoint(51.5074, -0.1278), GeoPoint(55.9533, -3.1883)
mid = lower_bound_mid_rtt(london, edinburgh, [world.get("North Korea")])
pre = 2 * great_circle_km(london, edinburgh) / FIBER_KM_PER_MS
print(f"\nLondon-Edinburgh via North Korea: RTT cannot fall below {mid:.1f} ms "
      f"(direct {pre:.1f} ms, {(mid - pre) * FIBER_KM_PER_MS:.0f} km of extra round trip)")
