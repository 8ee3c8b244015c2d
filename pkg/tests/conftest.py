import pytest

# lines recorded by the acceptance tests, printed once at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(line):
        ACCEPTANCE_LINES.append(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
