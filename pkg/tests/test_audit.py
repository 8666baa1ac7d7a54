import numpy as np
import pytest

from stokesnull.audit import (AdjointSample, _ratio, _time_weights, audit_sweep, carleman_ratio_27,
                              carleman_ratio_33, integrands_27, late_agreement, make_sample,
                              sample_adjoint_data)
from stokesnull.stokes import l2_norm
from stokesnull.weights import WeightParams, eval_weights


def _weights(case, s):
    return eval_weights(case.eta, case.profile, WeightParams(s))


def _zero_sample(case):
    z = np.zeros((case.grid.nt + 1, case.solver.ops.n_vel))
    return AdjointSample(0, z, z[-1], z)


def test_sampling_is_reproducible(small):
    g1, p1 = sample_adjoint_data(4, small.grid, small.solver)
    g2, p2 = sample_adjoint_data(4, small.grid, small.solver)
    np.testing.assert_array_equal(g1, g2)
    np.testing.assert_array_equal(p1, p2)
    assert small.solver.max_divergence(p1) <= 1e-10


def test_fifty_distinct_samples(small):
    data = [sample_adjoint_data(k, small.grid, small.solver)[1] for k in range(50)]
    for a in range(50):
        for b in range(a + 1, 50):
            assert l2_norm(small.grid, data[a] - data[b]) > 0


def test_zero_sample_gives_zero_ratio(small):
    smp = _zero_sample(small)
    for fn in (carleman_ratio_27, carleman_ratio_33):
        r = fn(smp, 2, small.weights, small.grid)
        assert r.lhs == r.rhs == r.ratio == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_nonzero_sample_sides_positive(small, seed):
    smp = make_sample(seed, small.grid, small.solver)
    for fn in (carleman_ratio_27, carleman_ratio_33):
        r = fn(smp, 2, small.weights, small.grid)
        assert r.lhs > 0 and r.rhs > 0 and np.isfinite(r.ratio)


def test_lhs27_decreases_when_s_doubles(small):
    smp = make_sample(3, small.grid, small.solver)
    lhs = [carleman_ratio_27(smp, 2, _weights(small, f * small.s), small.grid).lhs for f in (1, 2, 4, 8)]
    assert all(b < a for a, b in zip(lhs, lhs[1:]))


def test_lhs33_dominates_late_part_of_27(small):
    smp = make_sample(5, small.grid, small.solver)
    w = small.weights
    q = _time_weights(small.grid.nt, small.grid.dt, keep_start=False)
    late = w.t > small.grid.T / 2
    lhs_t = integrands_27(smp, 2, w, small.grid)[0]
    late_part = float(np.sum(q[late] * lhs_t[late]))
    r33 = carleman_ratio_33(smp, 2, w, small.grid)
    assert r33.lhs >= late_part


@pytest.mark.parametrize("c", [10.0, -3.0, 1e-3])
def test_ratio_scale_invariant(small, c):
    a = make_sample(6, small.grid, small.solver)
    b = make_sample(6, small.grid, small.solver, scale=c)
    for fn in (carleman_ratio_27, carleman_ratio_33):
        ra, rb = fn(a, 2, small.weights, small.grid), fn(b, 2, small.weights, small.grid)
        assert rb.lhs == pytest.approx(c * c * ra.lhs, rel=1e-12)
        assert rb.ratio == pytest.approx(ra.ratio, rel=1e-8)


def test_late_integrands_agree(small):
    smp = make_sample(7, small.grid, small.solver)
    assert late_agreement(smp, 2, small.weights, small.grid) <= 1e-12


def test_time_weights():
    q = _time_weights(4, 0.25, keep_start=False)
    np.testing.assert_array_equal(q, [0.0, 0.25, 0.25, 0.25, 0.0])
    q = _time_weights(4, 0.25, keep_start=True)
    np.testing.assert_array_equal(q, [0.125, 0.25, 0.25, 0.25, 0.0])


def test_ratio_guard():
    assert _ratio(0.0, 0.0, "x") == 0.0
    assert _ratio(1.0, 4.0, "x") == 0.25
    with pytest.raises(ArithmeticError):
        _ratio(1.0, 0.0, "x")


def test_singleton_sweep(small):
    rep = audit_sweep([small.s], 1, 2, small.grid, lambda s: small.weights, small.solver)
    assert len(rep.rows) == 1 and rep.s_values == [small.s]
    assert set(rep.max_ratio) == {small.s}
    assert "max_ratio27" in rep.summary()


def test_sweep_bounded_ratios(small):
    s_list = [small.s, 2 * small.s, 4 * small.s]
    rep = audit_sweep(s_list, 10, 2, small.grid, lambda s: _weights(small, s), small.solver)
    assert len(rep.rows) == 30
    for s in s_list:
        m27, m33 = rep.max_ratio[s]
        assert np.isfinite(m27) and np.isfinite(m33) and m27 < 1e6 and m33 < 1e6
    assert rep.max_late_disagreement <= 1e-12
    assert any("flushed" in f for f in rep.flags)


def test_sweep_rejects_empty(small):
    with pytest.raises(ValueError):
        audit_sweep([], 1, 2, small.grid, lambda s: small.weights, small.solver)
