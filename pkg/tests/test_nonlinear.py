import numpy as np
import pytest

from stokesnull import manufactured as ms
from stokesnull.control import component_masks
from stokesnull.geometry import build_grid
from stokesnull.nonlinear import bilinear, convect, estimate_delta, solve_nonlinear
from stokesnull.stokes import l2_norm, random_stream_velocity

from conftest import OMEGA, OMEGA0


@pytest.fixture(scope="module")
def base(small):
    return random_stream_velocity(small.grid, np.random.default_rng(1))


@pytest.fixture(scope="module")
def hist_ref(ref):
    """Amplitude 1e-2 on the reference grid.  (On 16x16 the residuals
    plateau at the CG noise floor amplified by the state weight.)"""
    y0 = 1e-2 * random_stream_velocity(ref.grid, np.random.default_rng(1))
    return solve_nonlinear(y0, 2, 1e-4, ref.weights, ref.solver)


def test_convect_zero(small):
    n = small.solver.ops.n_vel
    assert np.all(convect(small.grid, np.zeros(n)) == 0)


def test_bilinearity(small, rng):
    g = small.grid
    a, b, c = (random_stream_velocity(g, rng) for _ in range(3))
    np.testing.assert_allclose(bilinear(g, 2.5 * a, b), 2.5 * bilinear(g, a, b), rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(bilinear(g, a, b + c), bilinear(g, a, b) + bilinear(g, a, c), atol=1e-12)
    np.testing.assert_allclose(bilinear(g, a + c, b), bilinear(g, a, b) + bilinear(g, c, b), atol=1e-12)


def test_convection_second_order():
    errs = []
    for n in (16, 32, 64):
        g = build_grid(n, n, 4, 1.0, OMEGA, OMEGA0)
        y = ms.sample(g, ms.velocity, 0.2)
        errs.append(l2_norm(g, convect(g, y) - ms.sample(g, ms.convection, 0.2)))
    assert ms.observed_order((16, 32, 64), errs) == pytest.approx(2.0, abs=0.2)


def test_zero_data_single_iterate(small):
    h = solve_nonlinear(np.zeros(small.solver.ops.n_vel), 2, 1e-4, small.weights, small.solver)
    assert h.converged and len(h.states) == 1
    assert np.all(h.states[0].control == 0)


def test_small_amplitude_contracts(hist_ref):
    h = hist_ref
    assert h.converged and not h.diverged
    r = h.residuals
    assert len(r) >= 2
    assert all(b / a < 1 for a, b in zip(r, r[1:]))
    assert all(np.isfinite(st.source_norm) for st in h.states)


def test_every_iterate_eliminates_component(ref, hist_ref):
    m1, m2 = component_masks(ref.grid)
    for st in hist_ref.states:
        assert np.max(np.abs(st.control * m2)) == 0.0
        assert np.max(np.abs(st.control * (m1 + m2 == 0))) == 0.0


def test_resimulation_consistent(hist_ref):
    lin, nl = hist_ref.linear_terminal_norm, hist_ref.nonlinear_terminal_norm
    assert np.isfinite(nl) and lin > 0
    assert nl <= lin * (1 + 10 * 1e-9)


def test_sweep_flags_monotone(small, base):
    flags = [solve_nonlinear(a * base, 2, 1e-4, small.weights, small.solver).converged
             for a in (1e-2, 1e-1, 1.0, 10.0)]
    first_fail = flags.index(False) if False in flags else len(flags)
    assert not any(flags[first_fail:])
    assert flags[0]


def test_large_amplitude_diverges(small, base):
    h = solve_nonlinear(1e3 * base, 2, 1e-4, small.weights, small.solver)
    assert h.diverged and not h.converged


def test_rejects_bad_budget(small, base):
    with pytest.raises(ValueError):
        solve_nonlinear(base, 2, 1e-4, small.weights, small.solver, max_iter=0)


def _threshold(delta, calls=None):
    def run_at(a):
        if calls is not None:
            calls.append(a)
        return a < delta
    return run_at


def test_estimate_delta_bisection():
    calls = []
    est = estimate_delta([1e-2, 1e-1, 1.0, 10.0, 100.0], _threshold(37.0, calls), bisections=3)
    assert est.lower < 37.0 < est.upper
    assert est.width() == pytest.approx((100.0 - 10.0) / 8)
    assert not est.open_bracket and not est.empty
    assert len(calls) == 8


def test_estimate_delta_open_and_empty():
    est = estimate_delta([1e-3, 1e-2], _threshold(1.0))
    assert est.open_bracket and est.lower == 1e-2 and est.upper is None
    assert est.width() == float("inf")
    est = estimate_delta([1.0, 2.0], _threshold(0.5))
    assert est.empty and est.lower is None and est.upper == 1.0


def test_estimate_delta_requires_sorted():
    with pytest.raises(ValueError):
        estimate_delta([1.0, 0.1], _threshold(0.5))
