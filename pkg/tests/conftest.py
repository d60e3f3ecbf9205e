import pytest


def pytest_configure(config):
    config._acceptance_verdicts = []


@pytest.fixture(scope="session")
def verdicts(request):
    """Registry of acceptance verdict lines, echoed after the run."""
    return request.config._acceptance_verdicts


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # the reporter writes to the real terminal, so the checklist survives
    # capture regardless of pass or fail
    lines = getattr(config, "_acceptance_verdicts", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
