import pytest

from eikonal_mlmcmc.presets import one_parameter_setup

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_setup():
    """One-parameter problem with cheap (level 9) synthetic data."""
    return one_parameter_setup(seed=1, ref_level=9)
