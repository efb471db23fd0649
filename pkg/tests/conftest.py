import pytest

_LINES: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    _LINES[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
