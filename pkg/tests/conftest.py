from pathlib import Path

import numpy as np
import pytest

from latent_critic import _kernels_py
from latent_critic.numerics import RngStream

DATA = Path(__file__).parent / "data"

try:
    from latent_critic import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
if _kernels_c is not None:
    BACKENDS.append(pytest.param(_kernels_c, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return RngStream(12345)


@pytest.fixture
def co2_path():
    return DATA / "co2_mm_mlo.txt"


def random_spd(n, seed=0, cond=10.0):
    g = np.random.default_rng(seed)
    q, _ = np.linalg.qr(g.standard_normal((n, n)))
    w = np.geomspace(1.0, cond, n)
    return (q * w) @ q.T


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """``report(num, title, ok, detail)`` prints a PASS/FAIL line, keeps it
    for the terminal summary, then asserts ``ok``."""

    def report(num, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title}" + (f" | {detail}" if detail else "")
        print(line)
        _ACCEPTANCE_LINES.append(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
