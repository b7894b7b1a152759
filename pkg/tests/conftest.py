import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lidar_normals.core import Pose, SensorConfig
from lidar_normals.simulator import raycast_frame, street_scene

settings.register_profile("repo", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_sensor():
    return SensorConfig(beams=16, points_per_second=64000, max_range_m=60.0,
                        drop_ratio=0.2, noise_std_m=0.02)


@pytest.fixture(scope="session")
def street_frame(small_sensor):
    return raycast_frame(street_scene(), small_sensor, Pose(np.eye(3), [0.0, 0.0, 2.0]), seed=5)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        clauses = ACCEPTANCE[crit]
        status = "PASS" if all(ok for _, ok, _ in clauses) else "FAIL"
        terminalreporter.write_line(f"criterion {crit}: {status}")
        for name, ok, detail in clauses:
            terminalreporter.write_line(f"    {'ok  ' if ok else 'FAIL'} {name}: {detail}")
