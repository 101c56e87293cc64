import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line; the lines are repeated in the run summary."""

    def record(number, title, ok, detail, runtime=None, limit=None):
        timing = ""
        if runtime is not None:
            timing = f" [{runtime:.1f} s" + (f" / limit {limit:g} s]" if limit is not None else "]")
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {title}: {detail}{timing}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
