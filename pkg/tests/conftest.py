import warnings

import pytest

from cgs import closed_forms as cf
from cgs import fixed_point as fp
from cgs import radial_core as rc


@pytest.fixture(scope="session")
def P3():
    return cf.ModelParams(3, 4.0)


@pytest.fixture(scope="session")
def P4():
    return cf.ModelParams(4, 2.0)


@pytest.fixture(scope="session")
def grid3():
    return rc.default_grid(3)


@pytest.fixture(scope="session")
def grid4():
    return rc.default_grid(4)


@pytest.fixture(scope="session")
def state3(P3):
    """Converged fixed point for d=3, p=4, t=1e-3."""
    return fp.solve_fixed_point(P3, 1e-3)


@pytest.fixture(scope="session")
def ground3(state3):
    return fp.assemble_ground_state(state3)


@pytest.fixture(scope="session")
def state4(P4):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fp.ContainmentWarning)
        return fp.solve_fixed_point(P4, 1e-3)


@pytest.fixture(scope="session")
def sweep3(P3):
    return fp.sweep(P3, [1e-2, 1e-3, 1e-4])


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion, shown after the run


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    lines = request.config._acceptance_lines

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
