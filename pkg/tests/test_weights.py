import logging

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stokesnull.weights import WeightParams, auto_s, control_weight_peak_s, eval_weights

from conftest import make_case


@pytest.fixture(scope="module")
def case():
    return make_case(32, 64)


def _mp_ell(t, T, floor):
    t, T = mp.mpf(t), mp.mpf(T)
    h = T / 4
    if t <= h:
        v = t
    elif t >= 3 * h:
        v = T - t
    else:
        u = t - T / 2
        v = 13 * h / 8 - 3 * u ** 2 / (4 * h) + u ** 4 / (8 * h ** 3)
    return max(v, mp.mpf(floor) * T)


def test_weights_match_high_precision_oracle(case):
    """Unclamped log weights against a 50-digit evaluation on a 4x4x4 submesh."""
    mp.mp.dps = 50
    g, w = case.grid, case.weights
    lam = w.params.lam
    X, Y = g.nodes()
    ix = [0, 5, 16, 27]
    iy = [3, 11, 16, 32]
    kt = [1, 9, 32, 50]
    T = g.T
    for k in kt:
        t = g.times[k]
        ell = _mp_ell(t, T, case.profile.floor_delta)
        ell_t = _mp_ell(T / 2, T, case.profile.floor_delta) if t <= T / 2 else ell
        for a in ix:
            for b in iy:
                eta = mp.sin(mp.pi * mp.mpf(X[a, b])) * mp.sin(mp.pi * mp.mpf(Y[a, b]))
                if a in (0, g.nx) or b in (0, g.ny):
                    eta = mp.mpf(0)
                num = mp.e ** (2 * lam) - mp.e ** (lam * eta)
                want = {
                    "alpha": mp.log(num / ell ** 8),
                    "xi": mp.log(mp.e ** (lam * eta) / ell ** 8),
                    "beta": mp.log(num / ell_t ** 8),
                    "gamma": mp.log(mp.e ** (lam * eta) / ell_t ** 8),
                }
                for name, ref in want.items():
                    got = getattr(w, "log_" + name)[k, a, b]
                    assert got == pytest.approx(float(ref), rel=1e-13, abs=1e-13), (name, k, a, b)


def test_alpha_at_centre_eighth(case):
    # (e^2 - e) 8^8, by direct evaluation
    k = 8
    assert case.grid.times[k] == 0.125
    a = np.exp(case.weights.log_alpha[k, 16, 16])
    assert a == pytest.approx((np.e ** 2 - np.e) * 8 ** 8, rel=1e-12)
    assert a == pytest.approx(7.836e7, rel=1e-3)


def test_xi_at_boundary_eighth(case):
    assert case.weights.log_xi[8, 0, 7] == pytest.approx(8 * np.log(8), rel=1e-14)
    assert case.weights.log_xi[8, 0, 7] == pytest.approx(16.64, abs=5e-3)


def test_extrema_ordering(case):
    w = case.weights
    assert np.all(w.log_alpha_hat[:, None, None] <= w.log_alpha)
    assert np.all(w.log_alpha <= w.log_alpha_star[:, None, None])
    assert np.all(w.log_xi_star[:, None, None] <= w.log_xi)
    assert np.all(w.log_xi <= w.log_xi_hat[:, None, None])
    # min e^{lam eta} = 1 on the boundary
    np.testing.assert_allclose(w.log_xi_star, -8 * np.log(case.profile.floored()), rtol=1e-14)


def test_decay_ordering(case):
    w = case.weights
    lo = w.decay([(2.0, "alpha_hat")])
    hi = w.decay([(2.0, "alpha_star")])
    mid = np.exp(-2 * w.exponent("alpha"))
    mid[w.clamped("alpha")] = 0.0
    assert np.all(lo[:, None, None] >= mid - 1e-300)
    assert np.all(mid >= hi[:, None, None])


def test_beta_equals_alpha_after_midtime(case):
    w = case.weights
    late = w.t > case.grid.T / 2
    np.testing.assert_array_equal(w.log_beta[late], w.log_alpha[late])
    np.testing.assert_array_equal(w.log_gamma[late], w.log_xi[late])


def test_nondegenerate_at_start(case):
    w = case.weights
    assert w.decay([(1.0, "beta_star")])[0] > 0
    assert np.isfinite(w.log_gamma_star[0])
    # and the alpha family does flush there
    assert w.decay([(1.0, "alpha_star")])[0] == 0


def test_clamp_only_reduces(case):
    w = case.weights
    raw = w.s * np.exp(w.log_alpha)
    clamped = w.exponent("alpha")
    assert np.all(clamped <= raw)
    assert np.all(clamped <= w.params.exp_clamp)
    free = raw < w.params.exp_clamp
    np.testing.assert_array_equal(clamped[free], raw[free])


@settings(max_examples=15, deadline=None)
@given(s1=st.floats(1e-6, 1e-2), factor=st.floats(1.01, 10.0))
def test_exponent_monotone_in_s(case, s1, factor):
    w1 = eval_weights(case.eta, case.profile, WeightParams(s1))
    w2 = eval_weights(case.eta, case.profile, WeightParams(s1 * factor))
    e1, e2 = w1.exponent("alpha"), w2.exponent("alpha")
    assert np.all(e2 >= e1)
    free = ~w2.clamped("alpha")
    assert np.all(e2[free] > e1[free])
    assert np.all(w2.decay([(1.0, "alpha_star")]) <= w1.decay([(1.0, "alpha_star")]))


def test_flush_flag(case, caplog):
    with caplog.at_level(logging.WARNING):
        w = eval_weights(case.eta, case.profile, WeightParams(10.0))
    assert w.flush_flag and w.flush_fraction > 0.5
    assert "flush" in caplog.text
    w = eval_weights(case.eta, case.profile, WeightParams(1e-8))
    assert not w.flush_flag


def test_control_weight_peaks_at_midtime(case):
    w = case.weights.control_weight()
    k = int(np.argmax(w))
    assert case.grid.times[k] <= case.grid.T / 2
    mid = case.grid.nt // 2
    assert w[mid] == pytest.approx(w.max(), rel=1e-12)
    late = case.grid.times > case.grid.T / 2
    assert np.all(np.diff(w[mid:]) <= 0)
    assert w[-1] == 0.0 and np.all(w[late] >= 0)


def test_auto_s_modes(case):
    s_peak = auto_s(case.eta, case.profile)
    assert s_peak == control_weight_peak_s(case.eta, case.profile)
    assert s_peak == pytest.approx(1.8217e-4, rel=1e-4)
    s40 = auto_s(case.eta, case.profile, target=40.0)
    w = eval_weights(case.eta, case.profile, WeightParams(s40))
    mid = case.grid.nt // 2
    assert s40 * np.exp(w.log_alpha_star[mid]) == pytest.approx(40.0, rel=1e-12)
    with pytest.raises(ValueError):
        auto_s(case.eta, case.profile, target=0.0)


@pytest.mark.parametrize("kw", [dict(s=0.0), dict(s=1.0, lam=0.5), dict(s=1.0, exp_clamp=0.0)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        WeightParams(**kw)


def test_derived_weight_logs(case):
    w = case.weights
    np.testing.assert_allclose(w.log_rho_y(), 1.5 * w.exponent("beta_star"))
    np.testing.assert_allclose(w.log_rho_f(), 2.5 * w.exponent("beta_star") - 2 * w.log_gamma_star)
    cw = w.control_weight()
    fac = w.control_norm_factor()
    live = cw > 0
    np.testing.assert_allclose(fac[live] ** 2 * cw[live], 1.0, rtol=1e-12)
    assert np.all(fac[~live] == 0)
