import pytest

from memdarcy.geometry import build_cell_geometry, triangulate_cell

_OUTCOME = {}
_DETAIL = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or rep.failed:
        _OUTCOME[n] = _OUTCOME.get(n, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOME:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOME):
        status = "PASS" if _OUTCOME[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {_DETAIL.get(n, '')}")


@pytest.fixture
def acceptance(request):
    """Record a one-line measurement for the criterion of the calling test."""
    n = request.node.get_closest_marker("criterion").args[0]

    def record(text):
        _DETAIL[n] = text
        print(f"criterion {n}: {text}")
    return record


@pytest.fixture(scope="session")
def cell_mesh_fine():
    return triangulate_cell(build_cell_geometry(0.25), 0.05)


@pytest.fixture(scope="session")
def cell_mesh_coarse():
    return triangulate_cell(build_cell_geometry(0.25), 0.1)
