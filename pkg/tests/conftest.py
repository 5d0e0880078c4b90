import pytest
from hypothesis import settings

from faasplane.sim.config import ScenarioConfig

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def small_config():
    return ScenarioConfig.from_dict(
        {"seed": "small", "sim": {"num_data_centers": 3, "gateways_per_dc": 2, "total_calls": 300, "runs": 2}}
    )


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
