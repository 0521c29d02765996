"""Differential driver: PrefixTable against a plain dict shadow map.

Each access bumps a per-key counter stored in the slot and in the shadow.

With ``unique_indices`` the key universe has distinct first-seed indices, so
no relocation can happen and the table must behave exactly like the map:
keys leave only through ``expire_scan``, and the reclaimed set must equal
the map's expired set.  Without it, natural collisions are allowed and the
table may also forget a key that was dropped at the end of a relocation
chain (reported in ``dropped_keys``) or that had been idle past the timeout.
"""

import numpy as np

from hide.prefixtable import PrefixTable, TableConfig

US = 1_000_000


def _unique_universe(table, rng, n):
    chosen, used = [], set()
    for k in rng.permutation(1 << 24):
        i = table.index(int(k), 0)
        if i not in used:
            used.add(i)
            chosen.append(int(k))
            if len(chosen) == n:
                return np.array(chosen)
    raise ValueError("not enough keys")


def run_shadow(n_ops, seed=0, slots=4096, load=0.5, step_us=1000, lookup_frac=0.2, scan_every=50_000,
               unique_indices=False):
    rng = np.random.default_rng(seed)
    table = PrefixTable(TableConfig(slots=slots))
    timeout = table._timeout_us
    n_keys = int(slots * load)
    if unique_indices:
        universe = _unique_universe(table, rng, n_keys)
    else:
        universe = rng.choice(1 << 24, size=n_keys, replace=False)
    shadow: dict[int, tuple[int, int]] = {}  # key -> (count, t_last)
    divergences = []
    dropped_seen = 0
    now = 0
    keys = rng.choice(universe, size=n_ops)
    kinds = rng.random(n_ops)

    def forgettable(k):
        return not unique_indices and now - shadow[k][1] > timeout

    for op in range(n_ops):
        now += int(rng.integers(1, 2 * step_us))
        k = int(keys[op])
        if kinds[op] < lookup_frac:
            got = table.lookup(k)
            if got is None:
                if k in shadow and not forgettable(k):
                    divergences.append((op, k, "lost"))
            elif k not in shadow or got.extra.get("n") != shadow[k][0]:
                divergences.append((op, k, "lookup state"))
        else:
            slot = table.access(k, now)
            n = slot.extra.get("n", 0)
            if k in shadow and n != shadow[k][0]:
                if not (n == 0 and forgettable(k)):
                    divergences.append((op, k, "access state"))
            elif k not in shadow and n != 0:
                divergences.append((op, k, "phantom"))
            slot.extra["n"] = n + 1
            slot.t_last = now
            shadow[k] = (n + 1, now)
        for d in table.dropped_keys[dropped_seen:]:
            if unique_indices:
                divergences.append((op, d, "drop"))
            shadow.pop(d, None)
        dropped_seen = len(table.dropped_keys)
        if scan_every and op % scan_every == scan_every - 1:
            before = {s.key for s in table.live()}
            n = table.expire_scan(now)
            expired = {key for key, (_, t) in shadow.items() if now - t > timeout}
            if unique_indices and (before - {s.key for s in table.live()} != expired or n != len(expired)):
                divergences.append((op, None, "expired set"))
            for key in expired:
                del shadow[key]
            live = {s.key: s.extra.get("n") for s in table.live()}
            if live != {key: c for key, (c, _) in shadow.items()}:
                divergences.append((op, None, "scan"))
    return table, divergences
