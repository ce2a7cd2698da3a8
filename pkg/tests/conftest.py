import pytest

_LINES = []


class Criterion:
    """Records one PASS/FAIL line per acceptance check."""

    def __call__(self, label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
        _LINES.append(line)
        print(line)
        return ok


@pytest.fixture
def criterion():
    return Criterion()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
