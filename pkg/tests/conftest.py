from __future__ import annotations

import time

import pytest

_RESULTS: dict[int, tuple[str, str, str, float]] = {}
_SESSION_START = time.perf_counter()


@pytest.fixture
def detail(request):
    """Mutable dict a criterion fills with the numbers shown in the summary line."""
    info: dict = {}
    request.node._criterion_detail = info
    return info


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    info = getattr(item, "_criterion_detail", {})
    text = ", ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items())
    _RESULTS[number] = (title, "PASS" if report.passed else "FAIL", text, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_RESULTS):
        title, status, text, duration = _RESULTS[number]
        terminalreporter.write_line(f"{status}  {number:2d}. {title} [{duration:.1f} s] {text}")
    terminalreporter.write_line(f"suite wall time {time.perf_counter() - _SESSION_START:.1f} s")
