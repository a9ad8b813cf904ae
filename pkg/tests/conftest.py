import numpy as np
import pytest
from hypothesis import settings

from ctin.dataio import SyntheticSpec, gen_synthetic

settings.register_profile("ctin", max_examples=50, deadline=None)
settings.load_profile("ctin")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def clean_circle():
    """Noise-free 60 s circle of radius 5 m walked at 1 m/s."""
    return gen_synthetic(SyntheticSpec("circle", duration=60.0, speed=1.0, radius=5.0))


@pytest.fixture(scope="session")
def clean_line():
    return gen_synthetic(SyntheticSpec("line", duration=10.0, speed=1.0))


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion that ran."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {detail}")
