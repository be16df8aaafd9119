import numpy as np
import pytest

from hdaland.library import TerrainLibrary, easy_terrain
from hdaland.terrain import TerrainParams

_REPORT = []


@pytest.fixture(scope="session")
def easy_library():
    return TerrainLibrary([easy_terrain()])


@pytest.fixture(scope="session")
def default_library():
    """Three default-parameter terrains; shared because generation takes seconds each."""
    return TerrainLibrary.generate(TerrainParams(), [101, 102, 103])


@pytest.fixture
def report(capsys):
    """Print and remember one pass/fail line per acceptance criterion."""

    def _report(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _REPORT.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
