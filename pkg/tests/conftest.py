import numpy as np
import pytest

from pinned_gl.fields import PinningSpec, constant_scalar, make_pinning
from pinned_gl.grid import build_grid
from pinned_gl.meissner import build_meissner


@pytest.fixture(scope="session")
def unit_disk_161():
    return build_grid(161, 161, "disk", 1.0)


@pytest.fixture(scope="session")
def disk_state(unit_disk_161):
    """a = 1 on the unit disk at eps = 0.05."""
    return build_meissner(constant_scalar(unit_disk_161, 1.0), 0.05)


@pytest.fixture(scope="session")
def pinned_disk_state(unit_disk_161):
    """Strongly pinned inclusion (b = 0.1, radius 0.3) at eps = 0.05."""
    a = make_pinning(PinningSpec("two_value_step", b=0.1, radius=0.3), unit_disk_161)
    return build_meissner(a, 0.05)


@pytest.fixture(scope="session")
def square_step_state():
    g = build_grid(65, 65, "rectangle", 1.0)
    a = make_pinning(PinningSpec("two_value_step", b=0.5, radius=0.25), g)
    return build_meissner(a, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ONSET_SPEC = """
[grid]
n = 161
domain = disk
[sweep]
eps = 0.05
hex = 0.4:2.2:16
hex_scale = hc1
starts = meissner, vortex
"""


@pytest.fixture(scope="session")
def onset_sweep():
    """16-point hex sweep in [0.4, 2.2] hc1, a = 1 on the unit disk, eps = 0.05."""
    import time

    from pinned_gl.driver import parse_spec_text, run_sweep

    t0 = time.perf_counter()
    res = run_sweep(parse_spec_text(ONSET_SPEC))
    res.elapsed = time.perf_counter() - t0
    return res


ACCEPTANCE = {}


@pytest.fixture
def record():
    """Record one acceptance verdict: record(number, ok, detail)."""

    def _record(number, ok, detail=""):
        ACCEPTANCE[number] = (bool(ok), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
