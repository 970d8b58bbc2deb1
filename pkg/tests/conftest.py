import re
import time

import pytest

_CRITERIA: dict[int, tuple[str, float, list]] = {}


@pytest.fixture
def measured(request):
    """Record ``name=value`` pairs shown in the acceptance summary."""
    def put(name, value):
        request.node.user_properties.append((name, value))
    return put


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    start = time.perf_counter()
    yield
    item.user_properties.append(("runtime_s", time.perf_counter() - start))


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[n] = (report.outcome, report.duration, list(report.user_properties))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        outcome, duration, props = _CRITERIA[n]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        vals = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in props if k != "runtime_s")
        tr.write_line(f"criterion {n}: {verdict}  ({duration:.2f} s)  {vals}")
