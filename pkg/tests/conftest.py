import time

import pytest

from semilinear_dpg.adaptivity import adapt_loop
from semilinear_dpg.mesh2d import build_lshape, build_unit_square
from semilinear_dpg.problems import example1, example2

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in range(1, 11):
        terminalreporter.write_line(
            ACCEPTANCE_LINES.get(key, f"criterion {key:2d}: FAIL  no verdict (not run or errored)")
        )


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def ex1_uniform():
    return _timed(
        lambda: adapt_loop(example1(), build_unit_square(2), "uniform", max_elements=40_000)
    )


@pytest.fixture(scope="session")
def ex2_uniform():
    return _timed(
        lambda: adapt_loop(example2(), build_lshape(2), "uniform", max_elements=30_000)
    )


@pytest.fixture(scope="session")
def ex2_adaptive():
    return _timed(
        lambda: adapt_loop(
            example2(), build_lshape(2), "adaptive", theta=0.5,
            max_elements=30_000, keep_history=True,
        )
    )
