import hashlib
from pathlib import Path

import pytest

import hide.attackgeo as attackgeo
from hide.attackgeo import AttackSearch, read_attacks_csv, write_attacks_csv
from hide.geodesy import BUNDLED_BOUNDARIES, load_boundaries


@pytest.fixture(scope="session")
def world():
    return load_boundaries()


def _digest(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def world_attacks(world, request):
    """All ordered-pair optimal attacks (mainland, 25 + 5 km).

    Takes a couple of minutes, so the table is cached in the pytest cache
    directory, keyed by the search code and the boundary data.
    """
    key = _digest(attackgeo.__file__, BUNDLED_BOUNDARIES)
    cache = request.config.cache.mkdir("hide-world-attacks") / f"attacks-{key}.csv"
    if cache.exists():
        return read_attacks_csv(cache)
    attacks = AttackSearch(world).all_attacks()
    write_attacks_csv(attacks, cache)
    return read_attacks_csv(cache)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
