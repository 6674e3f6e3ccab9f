import pytest

from h2entangle.exact import solve_ground_state
from h2entangle.grid import Grid1D
from h2entangle.model import NuclearConfig

_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record a pass/fail line for an acceptance criterion."""

    def record(name: str, ok: bool, detail: str):
        _CRITERIA[name] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        ok, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")


@pytest.fixture(scope="session")
def small_grid():
    return Grid1D(64, -12.0, 12.0)


@pytest.fixture(scope="session")
def grid():
    return Grid1D()


@pytest.fixture(scope="session")
def ground_d3(grid):
    """Converged exact ground state at d=3 on the default grid."""
    res = solve_ground_state(NuclearConfig.from_distance(3.0), grid)
    assert res.converged
    return res


@pytest.fixture(scope="session")
def ground_d2_small(small_grid):
    res = solve_ground_state(NuclearConfig.from_distance(2.0), small_grid)
    assert res.converged
    return res
