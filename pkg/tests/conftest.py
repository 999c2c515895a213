import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


def random_dataset(rng, n=20, p=15, missing=0.3, complete=False):
    """Smooth random curves on [-1, 1] with heteroscedastic responses."""
    from fvol.fda import FdaDataset, Grid

    grid = Grid.uniform(-1.0, 1.0, p)
    lam = grid.points
    a = rng.normal(size=(n, 1))
    b = rng.uniform(0.5, 2.0, size=(n, 1))
    curves = a * np.sin(np.pi * b * lam) + rng.normal(scale=0.3, size=(n, 1)) * lam**2
    y = np.sin(a[:, 0]) + (0.5 + np.abs(a[:, 0])) * rng.normal(size=n)
    if complete:
        return FdaDataset.complete(grid, curves, y)
    delta = (rng.random(n) >= missing).astype(np.int8)
    delta[:2] = 1
    return FdaDataset.complete(grid, curves, y).with_delta(delta, y)


def generous_bandwidths(ds, q=0.7):
    """Fixed bandwidths wide enough that every curve sees two observed curves.

    With only itself in reach a curve's fitted variance is exactly zero, and a
    missing response without observed neighbours cannot be imputed.
    """
    from fvol.semimetrics import SemiMetricSpec, distance_matrix

    d = distance_matrix(ds, SemiMetricSpec.deriv(1))
    obs = d[:, ds.delta == 1]
    reach = float(np.sort(obs, axis=1)[:, 1].max())
    h = max(float(np.quantile(d[d > 0], q)), 1.5 * reach)
    return dict(h1=h, h2=1.1 * h, h3=1.2 * h, h4=0.9 * h, h1_init=0.95 * h, h2_init=1.05 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
