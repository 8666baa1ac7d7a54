from types import SimpleNamespace

import numpy as np
import pytest

from stokesnull.geometry import build_eta, build_grid, build_time_profile
from stokesnull.stokes import StokesSolver
from stokesnull.weights import WeightParams, auto_s, eval_weights

OMEGA = "rect(0.3,0.7,0.3,0.7)"
OMEGA0 = "disc(0.5,0.5,0.1)"

# acceptance lines, filled by test_acceptance.py and echoed at session end
ACCEPTANCE = {}


def make_case(n, nt, T=1.0, s=None, lam=1.0):
    grid = build_grid(n, n, nt, T, OMEGA, OMEGA0)
    eta = build_eta(grid)
    profile = build_time_profile(T, nt)
    s = auto_s(eta, profile, lam) if s is None else s
    weights = eval_weights(eta, profile, WeightParams(s, lam=lam))
    return SimpleNamespace(grid=grid, eta=eta, profile=profile, s=s, weights=weights,
                           solver=StokesSolver(grid))


@pytest.fixture(scope="session")
def small():
    """16x16 grid, 32 steps: cheap structural checks.  (With 16 steps the
    control weight falls by 16 decades within two steps and CG stalls.)"""
    return make_case(16, 32)


@pytest.fixture(scope="session")
def ref():
    """Reference configuration: 32x32 grid, 64 steps, T = 1."""
    return make_case(32, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
