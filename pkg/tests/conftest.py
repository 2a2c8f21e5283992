import numpy as np
import pytest

from geofuse.synth import generate_scene


@pytest.fixture(scope="session")
def small_scene():
    """Noise-free 160x120 room with a few boxes."""
    return generate_scene(3, width=160, height=120)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
