import pytest

from streamscale.bench.scenario import ScenarioConfig
from streamscale.bench.workload import WorkloadConfig


def small_config(**changes) -> ScenarioConfig:
    """A few thousand records over 32 key-groups, scaling 2 -> 3 half-way."""
    wl = WorkloadConfig(rate=1000.0, duration=4000, key_space=200, zipf_s=1.0, seed=3)
    return ScenarioConfig(name="small", workload=wl).replace(**changes)


@pytest.fixture
def small_cfg():
    return small_config()


# one line per acceptance criterion, repeated after the run so capture cannot hide it
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
