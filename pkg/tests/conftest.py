import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ksns.grid import ScalarField, VectorField, make_grid

settings.register_profile("ksns", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ksns")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(params=["full", "l_shape"])
def grid16(request):
    return make_grid(1.0, 1.0, 16, 16, request.param)


def random_scalar(grid, rng, lo=-1.0, hi=1.0):
    return ScalarField(grid, rng.uniform(lo, hi, grid.shape))


def random_vector(grid, rng):
    return VectorField(grid, rng.standard_normal((grid.ny, grid.nx + 1)),
                       rng.standard_normal((grid.ny + 1, grid.nx)))


# one summary line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
