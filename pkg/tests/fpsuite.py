"""Deterministic false-positive recovery runs.

Each prefix has a noise-free floor of 100 ms (tau 120 ms) and one benign
+30 ms floor shift after profiling, which the detector flags.  A first run
finds the block time; the shift is then cut to end half a window before the
k-th probe, so the path is back to normal exactly when probe k is sent.
"""

import numpy as np

from hide.detector import DetectorConfig
from hide.simulator import NoiseSpec, PathModel, gen_benign_stream, run_scenario

US = 1_000_000
BASE = 100.0
TAU = 120.0


def _run(shifts, seed, cfg, duration_s):
    rng = np.random.default_rng(seed)
    paths, samples = {}, []
    for i, (a, b) in enumerate(shifts):
        prefix = (192 << 16) | (0 << 8) | (2 + i)
        paths[prefix] = PathModel(BASE, NoiseSpec("none"), sample_rate_hz=40, floor_shifts=((a, b, 30.0),))
        samples += gen_benign_stream(paths[prefix], duration_s, 2, rng, prefix)
    taus = {p: TAU for p in paths}
    return run_scenario(samples, [], cfg, taus, 20.0, paths=paths, seed=seed, end_s=duration_s), list(paths)


def recovery_run(recovery_windows, seed=0, window_s=0.25, duration_s=60.0):
    """Run with one prefix per entry of ``recovery_windows``; returns the ScenarioResult."""
    cfg = DetectorConfig(window_s=window_s)
    starts = [30.0 + 2.0 * i for i in range(len(recovery_windows))]
    first, prefixes = _run([(a, duration_s) for a in starts], seed, cfg, duration_s)
    t_block = {p: tb for p, tb, _ in first.detector.block_log}
    shifts = [(a, t_block[p] / US + (k - 0.5) * window_s) for a, p, k in zip(starts, prefixes, recovery_windows)]
    res, _ = _run(shifts, seed, cfg, duration_s)
    return res
