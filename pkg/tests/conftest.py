import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Collects one summary line per acceptance criterion; echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def add(line):
        print(line)
        lines.append(line)

    return add


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
