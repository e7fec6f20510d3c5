import os

import pytest
from hypothesis import HealthCheck, settings

from imaginenav.world import world_from_ascii

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


ROOM = [
    "##########",
    "#........#",
    "#........#",
    "#........#",
    "#.....3..#",
    "#........#",
    "##########",
]


@pytest.fixture
def room():
    return world_from_ascii(ROOM, goal_class=3)


@pytest.fixture(scope="session")
def small_world():
    from imaginenav.world import WorldParams, generate_world

    return generate_world(5, WorldParams(width=24, height=24, rooms=2))


@pytest.fixture(scope="session")
def regressor():
    from imaginenav.metrics import train_where2imagine
    from imaginenav.world import WorldParams

    return train_where2imagine(WorldParams(), 11, seed=0, n_worlds=6)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
