"""Empirical audit of the two weighted observability inequalities.

For random adjoint data (g, phiT) both sides of

    s^4 iint e^{-5 s alpha*} (xi*)^4 |phi|^2
        <= C ( iint e^{-3 s alpha*} |g|^2
               + s^7 sum_{j != i} iint_omega e^{-2 s alpha_hat - 3 s alpha*} xi_hat^7 |phi_j|^2 )

and of its beta/gamma counterpart (whose left side also carries
|phi(0)|^2 and whose right side has no powers of s) are evaluated by
quadrature and their ratio is recorded.  Every weight is a function of time
only, so the space integrals reduce to (masked) L2 norms per time level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .control import control_mask
from .geometry import Grid
from .stokes import StokesSolver, l2_norm
from .weights import WeightSet

log = logging.getLogger(__name__)


@dataclass
class CarlemanSample:
    seed: int
    lhs: float
    rhs: float
    ratio: float
    kind: str


@dataclass
class AdjointSample:
    seed: int
    g: np.ndarray        # (nt+1, n_vel)
    phiT: np.ndarray
    phi: np.ndarray      # adjoint trajectory (nt+1, n_vel)


def _trig_field(grid: Grid, rng: np.random.Generator, kmax: int, t_modes: int = 3) -> np.ndarray:
    """Random smooth space-time field with spatial modes <= kmax."""
    xu, yu = grid.u_points()
    xv, yv = grid.v_points()
    t = grid.times / grid.T
    out_u = np.zeros((t.size,) + xu.shape)
    out_v = np.zeros((t.size,) + xv.shape)
    ks = np.arange(1, kmax + 1)
    for comp, (X, Y), out in (("u", (xu, yu), out_u), ("v", (xv, yv), out_v)):
        sx = np.sin(np.pi * ks[:, None, None] * X[None])
        sy = np.sin(np.pi * ks[:, None, None] * Y[None])
        for q in range(t_modes):
            c = rng.standard_normal((kmax, kmax)) / (ks[:, None] ** 2 + ks[None, :] ** 2)
            spatial = np.einsum("mn,mab,nab->ab", c, sx, sy)
            out += np.cos(np.pi * q * t)[:, None, None] * spatial[None]
    vecs = np.empty((t.size, (grid.nx - 1) * grid.ny + grid.nx * (grid.ny - 1)))
    for k in range(t.size):
        vecs[k] = np.concatenate([out_u[k, 1:-1, :].ravel(), out_v[k, :, 1:-1].ravel()])
    return vecs


def sample_adjoint_data(seed: int, grid: Grid, solver: StokesSolver | None = None):
    """Reproducible (g, phiT): g a bounded-spectrum trigonometric field,
    phiT the divergence-free projection of another one."""
    solver = solver or StokesSolver(grid)
    rng = np.random.default_rng(seed)
    kmax = max(1, grid.nx // 4)
    g = _trig_field(grid, rng, kmax)
    raw = _trig_field(grid, rng, kmax, t_modes=1)[0]
    phiT = solver.project(raw)
    return g, phiT


def make_sample(seed: int, grid: Grid, solver: StokesSolver, scale: float = 1.0) -> AdjointSample:
    g, phiT = sample_adjoint_data(seed, grid, solver)
    g, phiT = scale * g, scale * phiT
    phi = solver.solve_adjoint(phiT, g).velocity
    return AdjointSample(seed, g, phiT, phi)


def _time_weights(nt: int, dt: float, keep_start: bool) -> np.ndarray:
    """Trapezoid weights with the t = T endpoint (and t = 0 unless kept) zeroed."""
    q = np.full(nt + 1, dt)
    q[0] = 0.5 * dt if keep_start else 0.0
    q[-1] = 0.0
    return q


def _sq_norms(grid: Grid, arr: np.ndarray, mask=None) -> np.ndarray:
    if mask is not None:
        arr = arr * mask
    return grid.cell_area * np.einsum("kn,kn->k", arr, arr)


def integrands_27(sample: AdjointSample, i: int, weights: WeightSet, grid: Grid):
    """Per-time integrands (lhs, source, observation) without powers of s."""
    phi_sq = _sq_norms(grid, sample.phi)
    g_sq = _sq_norms(grid, sample.g)
    obs_sq = _sq_norms(grid, sample.phi, control_mask(grid, i))
    lhs = weights.decay([(5.0, "alpha_star")], 4.0 * weights.log_xi_star) * phi_sq
    src = weights.decay([(3.0, "alpha_star")]) * g_sq
    obs = weights.decay([(2.0, "alpha_hat"), (3.0, "alpha_star")], 7.0 * weights.log_xi_hat) * obs_sq
    return lhs, src, obs


def integrands_33(sample: AdjointSample, i: int, weights: WeightSet, grid: Grid):
    phi_sq = _sq_norms(grid, sample.phi)
    g_sq = _sq_norms(grid, sample.g)
    obs_sq = _sq_norms(grid, sample.phi, control_mask(grid, i))
    lhs = weights.decay([(5.0, "beta_star")], 4.0 * weights.log_gamma_star) * phi_sq
    src = weights.decay([(3.0, "beta_star")]) * g_sq
    obs = weights.decay([(2.0, "beta_hat"), (3.0, "beta_star")], 7.0 * weights.log_gamma_hat) * obs_sq
    return lhs, src, obs


def _ratio(lhs: float, rhs: float, kind: str) -> float:
    if rhs == 0:
        if lhs > 0:
            raise ArithmeticError(f"{kind}: right side vanishes with positive left side")
        return 0.0
    return lhs / rhs


def carleman_ratio_27(sample: AdjointSample, i: int, weights: WeightSet, grid: Grid) -> CarlemanSample:
    s = weights.s
    q = _time_weights(grid.nt, grid.dt, keep_start=False)
    lhs_t, src_t, obs_t = integrands_27(sample, i, weights, grid)
    lhs = s ** 4 * float(q @ lhs_t)
    rhs = float(q @ src_t) + s ** 7 * float(q @ obs_t)
    return CarlemanSample(sample.seed, lhs, rhs, _ratio(lhs, rhs, "(27)"), "27")


def carleman_ratio_33(sample: AdjointSample, i: int, weights: WeightSet, grid: Grid) -> CarlemanSample:
    q = _time_weights(grid.nt, grid.dt, keep_start=True)
    lhs_t, src_t, obs_t = integrands_33(sample, i, weights, grid)
    lhs = float(q @ lhs_t) + l2_norm(grid, sample.phi[0]) ** 2
    rhs = float(q @ src_t) + float(q @ obs_t)
    return CarlemanSample(sample.seed, lhs, rhs, _ratio(lhs, rhs, "(33)"), "33")


def late_agreement(sample: AdjointSample, i: int, weights: WeightSet, grid: Grid) -> float:
    """Largest relative difference between the two families' integrands on
    the mesh times t > T/2 (where the weights coincide)."""
    late = weights.t > grid.T / 2
    worst = 0.0
    for a, b in zip(integrands_27(sample, i, weights, grid), integrands_33(sample, i, weights, grid)):
        a, b = a[late], b[late]
        scale = np.maximum(np.abs(a), np.abs(b))
        nz = scale > 0
        if np.any(nz):
            worst = max(worst, float(np.max(np.abs(a[nz] - b[nz]) / scale[nz])))
    return worst


@dataclass
class AuditRow:
    s: float
    lam: float
    seed: int
    lhs27: float
    rhs27: float
    ratio27: float
    lhs33: float
    rhs33: float
    ratio33: float


@dataclass
class AuditReport:
    rows: list = field(default_factory=list)
    s_values: list = field(default_factory=list)
    max_ratio: dict = field(default_factory=dict)      # s -> (max27, max33)
    median_ratio: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    max_late_disagreement: float = 0.0

    def summary(self) -> str:
        lines = ["s, max_ratio27, median_ratio27, max_ratio33, median_ratio33"]
        for s in self.s_values:
            m27, m33 = self.max_ratio[s]
            d27, d33 = self.median_ratio[s]
            lines.append(f"{s:.6e}, {m27:.6e}, {d27:.6e}, {m33:.6e}, {d33:.6e}")
        lines.append(f"flags: {len(self.flags)}")
        for f in self.flags:
            lines.append(f"  {f}")
        lines.append(f"max late-time integrand disagreement: {self.max_late_disagreement:.3e}")
        return "\n".join(lines)


def audit_sweep(s_list, n_samples: int, i: int, grid: Grid, weights_for, solver: StokesSolver | None = None,
                seed0: int = 0) -> AuditReport:
    """Evaluate both inequalities on ``n_samples`` seeded samples for each s.

    ``weights_for(s)`` returns the :class:`WeightSet` at that s.  The adjoint
    data and trajectories do not depend on s and are computed once.
    """
    s_list = list(s_list)
    if not s_list:
        raise ValueError("s_list must be nonempty")
    solver = solver or StokesSolver(grid)
    samples = [make_sample(seed0 + n, grid, solver) for n in range(n_samples)]
    report = AuditReport(s_values=s_list)
    for s in s_list:
        w = weights_for(s)
        if w.flush_flag:
            report.flags.append(f"s={s:.6e}: {100 * w.flush_fraction:.0f}% of e^(-s alpha) samples flushed")
        r27, r33 = [], []
        for smp in samples:
            a = carleman_ratio_27(smp, i, w, grid)
            b = carleman_ratio_33(smp, i, w, grid)
            report.rows.append(AuditRow(s, w.params.lam, smp.seed, a.lhs, a.rhs, a.ratio,
                                        b.lhs, b.rhs, b.ratio))
            r27.append(a.ratio)
            r33.append(b.ratio)
            report.max_late_disagreement = max(report.max_late_disagreement,
                                               late_agreement(smp, i, w, grid))
        report.max_ratio[s] = (max(r27), max(r33))
        med27, med33 = float(np.median(r27)), float(np.median(r33))
        report.median_ratio[s] = (med27, med33)
        for smp, a, b in zip(samples, r27, r33):
            if a > 10 * med27 or b > 10 * med33:
                report.flags.append(f"s={s:.6e} seed={smp.seed}: ratio above 10x median")
    return report
