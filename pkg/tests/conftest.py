import pytest

from vesselwall import _kernels


@pytest.fixture(params=[True, False], ids=["numba", "numpy"])
def jit(request):
    """Run a test once on the compiled kernels and once on the fallback."""
    before = _kernels.jit_enabled()
    _kernels.set_jit(request.param)
    yield request.param
    _kernels.set_jit(before)


# -- acceptance summary ----------------------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line at the end of the run,
# with whatever they stored through ``record_property("measured", ...)``.

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    measured = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    prev = _criteria.get(n)
    if prev is None or prev[1]:
        _criteria[n] = (title, rep.passed, measured)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok, measured = _criteria[n]
        line = f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}"
        if measured:
            line += f"  ({measured})"
        terminalreporter.write_line(line)
