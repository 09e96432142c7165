import pytest

# (criterion, passed, detail) rows filled by tests/test_acceptance.py
ACCEPTANCE = []


@pytest.fixture
def record():
    def _record(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert passed, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
