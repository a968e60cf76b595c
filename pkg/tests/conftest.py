import pytest

from synthetic import natural_image

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def astronaut():
    return natural_image("astronaut")


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
