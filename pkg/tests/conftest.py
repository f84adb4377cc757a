import pytest

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, passed, detail)``; returns ``passed``."""
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        request.config.stash[_RESULTS].append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, config):
    rows = sorted(config.stash[_RESULTS])
    if rows:
        terminalreporter.section("acceptance criteria")
        for _, line in rows:
            terminalreporter.write_line(line)
