"""Fixed-capacity per-prefix state table with cuckoo relocation and idle timeout.

Each /24 key has one candidate slot per hash seed. A newcomer that finds
its slots taken evicts the occupant of its first slot; the evicted entry
moves to the slot of its next seed, possibly evicting again, for at most
``max_recirculations`` moves. Whatever is still displaced after that is
dropped and counted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .rttsource import PrefixSig, hash_index, prefix_label

US = 1_000_000


@dataclass
class TableConfig:
    slots: int = 65536
    hash_seeds: tuple[int, ...] = (0, 1)
    max_recirculations: int = 3
    timeout_s: float = 5.0

    def __post_init__(self):
        if self.slots <= 0 or self.slots & (self.slots - 1):
            raise ValueError(f"slots must be a power of two, got {self.slots}")
        if len(self.hash_seeds) < 2:
            raise ValueError("need at least two hash seeds")
        if self.max_recirculations < 1:
            raise ValueError("max_recirculations must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


@dataclass
class PrefixSlot:
    key: int
    t_first: int  # microseconds
    t_last: int
    t_window_start: int
    window_count: int = 0
    min_rtt_cur: float = math.inf
    min_rtt_prev: float = math.inf
    prev_valid: bool = False
    attacked: bool = False
    max_of_min: float = -math.inf
    min_of_min: float = math.inf
    valid_windows: int = 0
    seed_pos: int = 0  # which hash seed placed this entry
    last_ip: str | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, key: int, now: int) -> "PrefixSlot":
        return cls(key=key, t_first=now, t_last=now, t_window_start=now)

    @property
    def profiled(self) -> bool:
        return self.valid_windows > 0


@dataclass
class TableCounters:
    inserts: int = 0
    hits: int = 0
    timeouts: int = 0  # stale occupants overwritten on access
    evictions: int = 0  # recirculated entries
    drops: int = 0
    expired: int = 0  # reclaimed by expire_scan
    max_chain: int = 0


class PrefixTable:
    def __init__(self, cfg: TableConfig | None = None):
        self.cfg = cfg or TableConfig()
        self.slots: list[PrefixSlot | None] = [None] * self.cfg.slots
        self.counters = TableCounters()
        self.dropped_keys: list[int] = []
        self._timeout_us = int(round(self.cfg.timeout_s * US))

    def index(self, key: int, seed_pos: int) -> int:
        return hash_index(key, self.cfg.hash_seeds[seed_pos], self.cfg.slots)

    def _stale(self, slot: PrefixSlot, now: int) -> bool:
        return now - slot.t_last > self._timeout_us

    def lookup(self, key: int) -> PrefixSlot | None:
        for pos in range(len(self.cfg.hash_seeds)):
            s = self.slots[self.index(key, pos)]
            if s is not None and s.key == key:
                return s
        return None

    def access(self, sig: PrefixSig | int, now: int) -> PrefixSlot:
        """Slot for ``sig`` at time ``now`` (microseconds), inserting if needed."""
        key = sig.key if isinstance(sig, PrefixSig) else int(sig)
        hit = self.lookup(key)
        if hit is not None:
            self.counters.hits += 1
            return hit
        self.counters.inserts += 1
        new = PrefixSlot.fresh(key, now)
        for pos in range(len(self.cfg.hash_seeds)):
            i = self.index(key, pos)
            occ = self.slots[i]
            if occ is None or self._stale(occ, now):
                if occ is not None:
                    self.counters.timeouts += 1
                new.seed_pos = pos
                self.slots[i] = new
                return new
        self._cuckoo(new, now)
        return new

    def _cuckoo(self, new: PrefixSlot, now: int) -> None:
        i = self.index(new.key, 0)
        new.seed_pos = 0
        displaced, self.slots[i] = self.slots[i], new
        for hop in range(1, self.cfg.max_recirculations + 1):
            self.counters.evictions += 1
            self.counters.max_chain = max(self.counters.max_chain, hop)
            pos = (displaced.seed_pos + 1) % len(self.cfg.hash_seeds)
            j = self.index(displaced.key, pos)
            displaced.seed_pos = pos
            occ = self.slots[j]
            self.slots[j] = displaced
            if occ is None or self._stale(occ, now):
                if occ is not None:
                    self.counters.timeouts += 1
                return
            displaced = occ
        self.counters.drops += 1
        self.dropped_keys.append(displaced.key)

    def expire_scan(self, now: int) -> int:
        n = 0
        for i, s in enumerate(self.slots):
            if s is not None and self._stale(s, now):
                self.slots[i] = None
                n += 1
        self.counters.expired += n
        return n

    def live(self):
        return [s for s in self.slots if s is not None]

    def __len__(self):
        return sum(s is not None for s in self.slots)

    def dump_csv(self, path, now: int) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "prefix", "age_s", "idle_s", "window_age_s", "window_count",
                        "min_rtt_cur", "min_rtt_prev", "prev_valid", "attacked", "max_of_min", "min_of_min"])
            for i, s in enumerate(self.slots):
                if s is None:
                    continue
                w.writerow([i, prefix_label(s.key), (now - s.t_first) / US, (now - s.t_last) / US,
                            (now - s.t_window_start) / US, s.window_count, s.min_rtt_cur, s.min_rtt_prev,
                            int(s.prev_valid), int(s.attacked), s.max_of_min, s.min_of_min])
