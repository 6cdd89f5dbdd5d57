from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def berlin_path():
    return SCENARIOS / "berlin_mini" / "scenario.yaml"


@pytest.fixture(scope="session")
def canonical_path():
    return SCENARIOS / "canonical_congestion.yaml"


@pytest.fixture(scope="session")
def berlin(berlin_path):
    from mobility_stackelberg.scenario_io import load_scenario
    return load_scenario(berlin_path)


@pytest.fixture(scope="session")
def berlin_results(berlin):
    from mobility_stackelberg.scenario_io import run_pipeline
    return run_pipeline(berlin)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
