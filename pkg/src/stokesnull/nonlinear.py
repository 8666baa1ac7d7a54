"""Local null controllability of Navier-Stokes by successive linearization.

Each Picard iterate solves the linear control problem with the previous
iterate's convection as a source, f_k = -(y_k . grad) y_k.  The converged
control is finally checked against the fully nonlinear dynamics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .control import RunResult, solve_penalized_hum
from .geometry import Grid
from .stokes import SolverError, StokesSolver, VelocityField, l2_norm
from .weights import WeightSet

log = logging.getLogger(__name__)


def _pad_u(grid: Grid, vec):
    """Split a packed vector into full face arrays."""
    f = VelocityField.from_vector(grid, vec)
    return f.u, f.v


def bilinear(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(a . grad) b on interior faces, centred differences.

    The advecting field is averaged to each face; tangential derivatives next
    to the walls use a quadratic ghost value through the no-slip wall value
    (ghost = -2 b_0 + b_1 / 3), which keeps the stencil second order.
    """
    h, k = grid.hx, grid.hy
    au, av = _pad_u(grid, a)
    bu, bv = _pad_u(grid, b)

    # x-momentum on u faces (nx+1, ny); only rows 1..nx-1 are kept
    bu_ext = np.empty((grid.nx + 1, grid.ny + 2))
    bu_ext[:, 1:-1] = bu
    bu_ext[:, 0] = -2.0 * bu[:, 0] + bu[:, 1] / 3.0
    bu_ext[:, -1] = -2.0 * bu[:, -1] + bu[:, -2] / 3.0
    dbu_dx = (bu[2:, :] - bu[:-2, :]) / (2 * h)
    dbu_dy = (bu_ext[1:-1, 2:] - bu_ext[1:-1, :-2]) / (2 * k)
    av_on_u = 0.25 * (av[:-1, :-1] + av[1:, :-1] + av[:-1, 1:] + av[1:, 1:])
    cu = au[1:-1, :] * dbu_dx + av_on_u * dbu_dy

    # y-momentum on v faces (nx, ny+1); only columns 1..ny-1 are kept
    bv_ext = np.empty((grid.nx + 2, grid.ny + 1))
    bv_ext[1:-1, :] = bv
    bv_ext[0, :] = -2.0 * bv[0, :] + bv[1, :] / 3.0
    bv_ext[-1, :] = -2.0 * bv[-1, :] + bv[-2, :] / 3.0
    dbv_dx = (bv_ext[2:, 1:-1] - bv_ext[:-2, 1:-1]) / (2 * h)
    dbv_dy = (bv[:, 2:] - bv[:, :-2]) / (2 * k)
    au_on_v = 0.25 * (au[:-1, :-1] + au[1:, :-1] + au[:-1, 1:] + au[1:, 1:])
    cv = au_on_v * dbv_dx + av[:, 1:-1] * dbv_dy

    return np.concatenate([cu.ravel(), cv.ravel()])


def convect(grid: Grid, y: np.ndarray) -> np.ndarray:
    return bilinear(grid, y, y)


@dataclass
class PicardState:
    k: int
    trajectory: np.ndarray
    control: np.ndarray
    residual: float
    terminal_norm: float
    source_norm: float


@dataclass
class PicardHistory:
    amplitude: float
    states: list = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    nonlinear_terminal_norm: float = float("nan")
    linear_terminal_norm: float = float("nan")
    final: RunResult | None = None

    @property
    def residuals(self) -> list[float]:
        return [s.residual for s in self.states[1:]]


def weighted_state_norm(grid: Grid, weights: WeightSet, traj: np.ndarray) -> float:
    """|e^{3/2 s beta*} y|_{L2(Q)} with the trapezoid rule in time."""
    sq = grid.cell_area * np.einsum("kn,kn->k", traj, traj) * np.exp(2 * weights.log_rho_y())
    return float(np.sqrt(grid.dt * (sq.sum() - 0.5 * (sq[0] + sq[-1]))))


def weighted_source_norm(grid: Grid, weights: WeightSet, traj: np.ndarray) -> float:
    """|e^{5/2 s beta*} (gamma*)^{-2} (y.grad)y|_{L2(Q)}."""
    conv = np.stack([convect(grid, y) for y in traj])
    sq = grid.cell_area * np.einsum("kn,kn->k", conv, conv) * np.exp(2 * weights.log_rho_f())
    return float(np.sqrt(grid.dt * (sq.sum() - 0.5 * (sq[0] + sq[-1]))))


def solve_nonlinear(y0: np.ndarray, i: int, eps: float, weights: WeightSet, solver: StokesSolver,
                    max_iter: int = 30, tol: float = 1e-9, cg_tol: float = 1e-12,
                    amplitude: float | None = None) -> PicardHistory:
    """Picard iteration; see the module docstring.

    The residual r_k = |y_k - y_{k-1}| is measured in the weighted state
    norm and the loop stops once r_k <= tol * |y_k| in that same norm.
    Three consecutive residual increases, a non-finite iterate or a failed
    linear solve mark divergence.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    grid = solver.grid
    hist = PicardHistory(amplitude if amplitude is not None else l2_norm(grid, y0))
    f = None
    prev = None
    rising = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(max_iter + 1):
            try:
                res = solve_penalized_hum(y0, f, i, eps, weights, solver, tol=cg_tol)
            except (SolverError, FloatingPointError, ValueError) as exc:
                log.info("picard k=%d: linear solve failed (%s)", k, exc)
                hist.diverged = True
                break
            traj = res.trajectory.velocity
            if not np.all(np.isfinite(traj)):
                hist.diverged = True
                break
            r = 0.0 if prev is None else weighted_state_norm(grid, weights, traj - prev)
            state = PicardState(k, traj, res.control.values, r, res.terminal_norm,
                                weighted_source_norm(grid, weights, traj))
            hist.states.append(state)
            hist.final = res
            log.info("picard k=%d residual=%.3e |y(T)|=%.3e", k, r, res.terminal_norm)
            if prev is not None:
                if r <= tol * weighted_state_norm(grid, weights, traj):
                    hist.converged = True
                    break
                if len(hist.states) > 2 and r > hist.states[-2].residual:
                    rising += 1
                else:
                    rising = 0
                if rising >= 3 or not np.isfinite(r):
                    hist.diverged = True
                    break
            prev = traj
            f = -np.stack([convect(grid, y) for y in traj])
            if not np.any(f):
                # no convection: the next iterate would repeat this one
                hist.converged = True
                break
        if hist.final is not None and not hist.diverged:
            hist.linear_terminal_norm = hist.final.terminal_norm
            try:
                nl = solver.solve_forward(y0, v=hist.final.control.values,
                                          convection=lambda y: convect(grid, y))
                hist.nonlinear_terminal_norm = l2_norm(grid, nl.velocity[-1])
            except SolverError:
                hist.nonlinear_terminal_norm = float("inf")
    return hist


@dataclass
class ThresholdEstimate:
    amplitudes: list
    converged: list
    lower: float | None          # largest converged amplitude
    upper: float | None          # smallest diverged amplitude (None: open)
    open_bracket: bool
    empty: bool

    def width(self) -> float:
        if self.lower is None or self.upper is None:
            return float("inf")
        return self.upper - self.lower


def estimate_delta(amplitudes, run_at, bisections: int = 3) -> ThresholdEstimate:
    """Bracket the smallness threshold.

    ``run_at(a)`` returns True when the Picard loop converges for initial
    data of amplitude ``a``.  After the sweep, the gap between the largest
    converged and smallest diverged amplitude is bisected ``bisections``
    times.
    """
    amps = [float(a) for a in amplitudes]
    if amps != sorted(amps):
        raise ValueError("amplitudes must be sorted ascending")
    tested, flags = [], []
    for a in amps:
        tested.append(a)
        flags.append(bool(run_at(a)))
    conv = [a for a, ok in zip(tested, flags) if ok]
    div = [a for a, ok in zip(tested, flags) if not ok]
    if not conv:
        return ThresholdEstimate(tested, flags, None, min(div), False, True)
    lo = max(conv)
    above = [a for a in div if a > lo]
    if not above:
        return ThresholdEstimate(tested, flags, lo, None, True, False)
    hi = min(above)
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        ok = bool(run_at(mid))
        tested.append(mid)
        flags.append(ok)
        if ok:
            lo = mid
        else:
            hi = mid
    return ThresholdEstimate(tested, flags, lo, hi, False, False)
