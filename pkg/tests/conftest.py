import numpy as np
import pytest

from didmatch.core import PanelDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_panel(rng, n=12, k=3) -> PanelDataset:
    X = rng.normal(size=(n, k))
    z0 = rng.normal(size=n)
    z1 = z0 + rng.normal(size=n) * 2
    y0 = rng.normal(size=n)
    y1 = y0 + rng.normal(size=n)
    return PanelDataset.from_arrays(X, z0, z1, y0, y1)


@pytest.fixture
def panel(rng):
    return random_panel(rng)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
