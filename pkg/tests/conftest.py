import math

import pytest
from hypothesis import HealthCheck, settings

from v2xcollab.scene import LidarSpec, ScenarioParams, generate_scenario

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL_LIDAR = LidarSpec(beams=16, azimuth_bins=360)


def small_params(**kw) -> ScenarioParams:
    base = dict(object_count=20, duration=2.0, lidar=SMALL_LIDAR)
    base.update(kw)
    return ScenarioParams(**base)


@pytest.fixture(scope="session")
def small_world():
    return generate_scenario(small_params(), 7)


def approx_angle(a, b, tol=1e-12):
    return abs(math.remainder(a - b, 2 * math.pi)) <= tol


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for res in sorted(RESULTS, key=lambda r: r.number):
            terminalreporter.write_line(res.line())
