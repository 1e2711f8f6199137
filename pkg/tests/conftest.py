import math

import pytest

from crossalign.geometry import RotatedBox
from crossalign.rng import SplitMix64


def random_box(rng, lo=1.0, hi=50.0, spread=20.0):
    return RotatedBox(
        rng.uniform(-spread, spread),
        rng.uniform(-spread, spread),
        rng.uniform(lo, hi),
        rng.uniform(lo, hi),
        rng.uniform(0.0, 2.0 * math.pi),
    )


def random_pair(rng, lo=1.0, hi=50.0):
    a = random_box(rng, lo, hi)
    b = RotatedBox(
        a.cx + rng.uniform(-25.0, 25.0),
        a.cy + rng.uniform(-25.0, 25.0),
        rng.uniform(lo, hi),
        rng.uniform(lo, hi),
        rng.uniform(0.0, 2.0 * math.pi),
    )
    return a, b


@pytest.fixture
def rng():
    return SplitMix64(12345)


# acceptance criteria append (number, title, passed, detail) here
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
