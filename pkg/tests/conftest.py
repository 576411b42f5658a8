import pytest

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion and fail the test on FAIL."""
    lines = request.config.stash[_LINES_KEY]

    def report(number: int, title: str, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title} ({detail})"
        lines.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
