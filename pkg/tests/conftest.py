import time
from contextlib import contextmanager

import pytest


@pytest.fixture
def criterion(request):
    """Time a block, record one PASS/FAIL line for it, and fail if it overruns its limit."""
    lines = request.config.__dict__.setdefault("acceptance_lines", [])

    @contextmanager
    def run(number: int, title: str, limit_s: float):
        t0 = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            elapsed = time.perf_counter() - t0
            lines.append(f"FAIL  criterion {number}: {title} ({elapsed:.2f}s) {type(exc).__name__}: {exc}".splitlines()[0])
            raise
        elapsed = time.perf_counter() - t0
        ok = elapsed < limit_s
        lines.append(f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} ({elapsed:.2f}s, limit {limit_s:g}s)")
        assert ok, f"criterion {number} took {elapsed:.2f}s, limit {limit_s:g}s"

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
