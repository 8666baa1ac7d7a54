"""Controls with one vanishing component via a penalized dual problem.

For terminal adjoint data phiT the dual functional is

    J(phiT) = 1/2 sum_{j != i} int_0^T int_omega w(t) |phi_j|^2
              + eps/2 |phiT|^2 + <y0, phi(0)> + int_0^T <f, phi>

with phi the adjoint trajectory (no source) and w the control weight
e^{-2 s beta_hat - 3 s beta*} gamma_hat^7.  Its gradient is y(T) + eps phiT,
where y is driven by the control v = w phi 1_omega (components j != i).
Written with chi = -phi (the minimizer of the original variational problem,
whose linear term enters with the opposite sign) the control reads
v_j = -w chi_j, v_i = 0.

The minimizer is found by conjugate gradients on the normal operator
phiT -> y[phiT](T) + eps phiT, which is symmetric positive definite because
the discrete adjoint step is exactly the transpose of the forward step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Grid
from .stokes import StateTrajectory, StokesSolver, inner, l2_norm
from .weights import WeightSet

log = logging.getLogger(__name__)

N_COMPONENTS = 2


def component_masks(grid: Grid) -> list[np.ndarray]:
    """Packed 0/1 masks selecting omega for each velocity component."""
    mu, mv = grid.control_masks()
    nu = (grid.nx - 1) * grid.ny
    nv = grid.nx * (grid.ny - 1)
    m1 = np.zeros(nu + nv)
    m2 = np.zeros(nu + nv)
    m1[:nu] = mu[1:-1, :].ravel()
    m2[nu:] = mv[:, 1:-1].ravel()
    return [m1, m2]


def control_mask(grid: Grid, i: int) -> np.ndarray:
    """Mask of the active components (all j != i) inside omega."""
    _check_index(i)
    masks = component_masks(grid)
    return sum(m for j, m in enumerate(masks, start=1) if j != i)


def _check_index(i: int):
    if i not in range(1, N_COMPONENTS + 1):
        raise ValueError(f"component index out of range: {i} (expected 1..{N_COMPONENTS})")


@dataclass
class ControlField:
    values: np.ndarray     # (nt+1, n_vel)
    zero_component: int

    def component(self, grid: Grid, j: int) -> np.ndarray:
        return self.values * component_masks(grid)[j - 1]

    def norms(self, grid: Grid) -> np.ndarray:
        return np.sqrt(grid.cell_area * np.einsum("ij,ij->i", self.values, self.values))


def reconstruct_control(adjoint: StateTrajectory, weights: WeightSet, i: int, grid: Grid) -> ControlField:
    """v_j = -w(t) chi_j on omega for j != i; v_i and everything outside omega
    are exact zeros."""
    mask = control_mask(grid, i)
    w = weights.control_weight()
    if w.shape[0] != adjoint.velocity.shape[0]:
        raise ValueError("weights and adjoint trajectory live on different time meshes")
    vals = -(w[:, None] * adjoint.velocity) * mask[None, :]
    vals[:, mask == 0] = 0.0  # also clears -0.0 and nan*0 artefacts
    return ControlField(vals, i)


@dataclass
class DualIterate:
    phiT: np.ndarray
    functional: list = field(default_factory=list)
    residual: list = field(default_factory=list)


@dataclass
class RunResult:
    control: ControlField
    trajectory: StateTrajectory
    adjoint: StateTrajectory
    phiT: np.ndarray
    terminal_norm: float
    eps: float
    cg_iterations: int
    converged: bool
    history: DualIterate
    phiT_norm: float
    weighted_norms: tuple = ()
    final_gradient_norm: float = 0.0

    def summary(self) -> dict:
        return {
            "terminal_norm": self.terminal_norm,
            "eps_phiT_norm": self.eps * self.phiT_norm,
            "cg_iterations": self.cg_iterations,
            "cg_converged": self.converged,
            "final_gradient_norm": self.final_gradient_norm,
            "weighted_norms": list(self.weighted_norms),
        }


class DualProblem:
    """The penalized dual functional and its normal operator for fixed data."""

    def __init__(self, solver: StokesSolver, weights: WeightSet, i: int, eps: float):
        _check_index(i)
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.solver = solver
        self.grid = solver.grid
        if weights.t.shape[0] != self.grid.nt + 1:
            raise ValueError("weights are not sampled on the solver time mesh")
        self.weights = weights
        self.i = i
        self.eps = eps
        self.mask = control_mask(self.grid, i)
        self.w = weights.control_weight()

    def control_from_adjoint(self, phi: np.ndarray) -> np.ndarray:
        """v = w phi 1_omega on the active components (= -w chi)."""
        v = self.w[:, None] * phi * self.mask[None, :]
        v[:, self.mask == 0] = 0.0
        return v

    def observation(self, phi: np.ndarray) -> float:
        """sum_{j != i} int int_omega w |phi_j|^2 (left-point rule in time)."""
        nt, dt = self.grid.nt, self.grid.dt
        sq = self.grid.cell_area * np.einsum("kn,kn->k", phi[:nt] * self.mask, phi[:nt])
        return float(dt * np.dot(self.w[:nt], sq))

    def normal(self, phiT: np.ndarray) -> np.ndarray:
        """phiT -> P y(T) + eps phiT for zero data (P: projection onto
        discretely divergence-free fields, applied on both sides)."""
        phiT = self.solver.project(phiT)
        adj = self.solver.solve_adjoint(phiT)
        v = self.control_from_adjoint(adj.velocity)
        y = self.solver.solve_forward(np.zeros_like(phiT), v=v)
        # re-project: cancellation in y(T) leaves round-off outside discrete H
        return self.solver.project(y.velocity[-1]) + self.eps * phiT

    def functional(self, phiT: np.ndarray, y0: np.ndarray, f: np.ndarray | None) -> float:
        adj = self.solver.solve_adjoint(phiT)
        phi = adj.velocity
        val = 0.5 * self.observation(phi) + 0.5 * self.eps * l2_norm(self.grid, phiT) ** 2
        val += inner(self.grid, y0, phi[0])
        if f is not None:
            nt, dt = self.grid.nt, self.grid.dt
            val += dt * sum(inner(self.grid, f[k], phi[k]) for k in range(nt))
        return val

    def gradient(self, phiT: np.ndarray, y0: np.ndarray, f: np.ndarray | None) -> np.ndarray:
        """Riesz representative (in the L2 face inner product) of dJ."""
        adj = self.solver.solve_adjoint(phiT)
        v = self.control_from_adjoint(adj.velocity)
        y = self.solver.solve_forward(y0, f=f, v=v)
        return y.velocity[-1] + self.eps * phiT


def conjugate_gradient(apply, b, grid: Grid, tol: float = 1e-10, max_iter: int = 500,
                       stall: int = 25):
    """CG for apply(x) = b in the L2 face inner product.

    Returns (x, history, converged).  The functional recorded is
    1/2 <x, Ax> - <b, x>.  If the residual fails to improve for ``stall``
    iterations the best iterate so far is returned with converged=False.
    """
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = inner(grid, r, r)
    bnorm = np.sqrt(rr)
    hist = DualIterate(x)
    hist.functional.append(0.0)
    hist.residual.append(1.0 if bnorm > 0 else 0.0)
    if bnorm == 0:
        return x, hist, True
    best, best_res, since = x.copy(), 1.0, 0
    for _ in range(max_iter):
        Ap = apply(p)
        pAp = inner(grid, p, Ap)
        if pAp <= 0:
            log.warning("CG lost positivity (pAp=%g)", pAp)
            break
        a = rr / pAp
        x = x + a * p
        r = r - a * Ap
        rr_new = inner(grid, r, r)
        res = np.sqrt(rr_new) / bnorm
        hist.residual.append(res)
        hist.functional.append(-0.5 * inner(grid, x, r) - 0.5 * inner(grid, b, x))
        if res < best_res:
            best, best_res, since = x.copy(), res, 0
        else:
            since += 1
        if res <= tol:
            hist.phiT = x
            return x, hist, True
        if since >= stall:
            log.warning("CG stagnated at relative residual %.3e", best_res)
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    hist.phiT = best
    return best, hist, False


def solve_penalized_hum(y0, f, i: int, eps: float, weights: WeightSet, solver: StokesSolver,
                        tol: float = 1e-10, max_iter: int = 500) -> RunResult:
    """Minimize the penalized dual functional and rebuild control and state.

    At the optimum y(T) + eps phiT = 0 up to the CG tolerance, so
    |y(T)| = eps |phiT|.
    """
    grid = solver.grid
    problem = DualProblem(solver, weights, i, eps)
    y0 = np.asarray(y0, dtype=float)
    if solver.relative_divergence(y0) > 1e-10:
        raise ValueError("y0 must be divergence-free (project it first)")
    if f is not None:
        f = np.asarray(f, dtype=float)
    free = solver.solve_forward(y0, f=f)
    b = -free.velocity[-1]
    phiT, hist, ok = conjugate_gradient(problem.normal, b, grid, tol=tol, max_iter=max_iter)
    phiT = solver.project(phiT)
    adjoint = solver.solve_adjoint(phiT)
    chi = StateTrajectory(adjoint.times, -adjoint.velocity, -adjoint.pressure, "backward",
                          adjoint.max_divergence)
    control = reconstruct_control(chi, weights, i, grid)
    traj = solver.solve_forward(y0, f=f, v=control.values)
    yT = traj.velocity[-1]
    result = RunResult(control, traj, adjoint, phiT, l2_norm(grid, yT), eps,
                       len(hist.residual) - 1, ok, hist, l2_norm(grid, phiT),
                       final_gradient_norm=l2_norm(grid, yT + eps * phiT))
    result.weighted_norms = weighted_norms(result, weights, solver)
    return result


def _trapezoid(vals: np.ndarray, dt: float) -> float:
    return float(dt * (vals.sum() - 0.5 * (vals[0] + vals[-1])))


def weighted_norms(result: RunResult, weights: WeightSet, solver: StokesSolver) -> tuple:
    """Discrete counterparts of the four weighted state/control norms:

    |e^{3/2 s beta*} y|_{L2(Q)},
    |e^{s beta_hat + 3/2 s beta*} gamma_hat^{-7/2} v|_{L2(omega x (0,T))},
    |e^{3/2 s beta*} (gamma*)^{-9/8} y|_{L2(H2)},
    |e^{3/2 s beta*} (gamma*)^{-9/8} y|_{Linf(V)}.

    The control norm uses the same left-point time rule as the dual
    functional so that, for reconstructed controls, it equals the square
    root of the observation term.
    """
    grid = solver.grid
    nt, dt, area = grid.nt, grid.dt, grid.cell_area
    y = result.trajectory.velocity
    ysq = area * np.einsum("kn,kn->k", y, y)
    rho_y = np.exp(2 * weights.log_rho_y())
    n1 = np.sqrt(_trapezoid(rho_y * ysq, dt))

    v = result.control.values
    fac = weights.control_norm_factor()
    vsq = area * np.einsum("kn,kn->k", v[:nt], v[:nt])
    n2 = np.sqrt(dt * np.dot(fac[:nt] ** 2, vsq))

    rho = np.exp(weights.log_rho_h2())
    lap = (solver.ops.lap @ y.T).T
    h1sq = np.maximum(-area * np.einsum("kn,kn->k", y, lap), 0.0)
    lsq = area * np.einsum("kn,kn->k", lap, lap)
    n3 = np.sqrt(_trapezoid(rho ** 2 * (ysq + h1sq + lsq), dt))
    n4 = float(np.max(rho * np.sqrt(h1sq)))
    return (float(n1), float(n2), float(n3), n4)
