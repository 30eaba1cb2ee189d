import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion and fail the test if it did not pass."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(number: int, title: str, passed: bool, detail: str):
        line = f"[ACCEPTANCE] criterion {number} {title}: {'PASS' if passed else 'FAIL'} ({detail})"
        lines.append(line)
        print(line, flush=True)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
