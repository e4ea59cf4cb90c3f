import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; shown in the terminal summary."""

    def record(number: int, title: str, ok: bool, elapsed: float, limit: float, detail: str = "") -> None:
        within = elapsed < limit
        status = "PASS" if ok and within else "FAIL"
        line = f"[{status}] criterion {number}: {title} ({elapsed:.2f} s, limit {limit:g} s) {detail}".rstrip()
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line
        assert within, f"{line}: too slow"

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
