"""MAC discretization of the unsteady Stokes system with no-slip walls.

Unknowns are the interior face velocities, packed as
``concat(u[1:nx, :].ravel(), v[:, 1:ny].ravel())``; wall-normal faces are
identically zero and never stored in the packed vector.

One implicit Euler step solves the saddle-point system

    (I - dt L) y + G q = y_old + dt F,     G^T y = 0,     sum(q) = 0

with a single sparse LU factorization.  The KKT matrix is symmetric, so the
velocity block of its inverse (the step operator M) is symmetric as well:
the backward adjoint step applies the very same operator, and the discrete
duality pairing is exact up to round-off.

Time stepping (source sampled at the start of each step, as in IMEX schemes):

    forward   y_{k+1} = M (y_k + dt F_k),          k = 0..nt-1
    backward  phi_k   = M (phi_{k+1} + dt g_{k+1}), k = nt-1..0

which gives the identity

    <y_nt, phi_nt> + dt sum_{k>=1} <y_k, g_k> = <y_0, phi_0> + dt sum_{k<nt} <F_k, phi_k>.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Grid


class SolverError(RuntimeError):
    """Linear solve failed or meshes do not match."""


# sparse building blocks ----------------------------------------------------

def _second_diff_nodes(n: int, h: float):
    """Second difference on the n-1 interior nodes of [0,1], Dirichlet ends."""
    m = n - 1
    return sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / h ** 2


def _second_diff_cells(n: int, h: float):
    """Second difference on n cell centres, Dirichlet walls via odd ghost cells."""
    main = -2 * np.ones(n)
    main[0] = main[-1] = -3
    return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1]) / h ** 2


def _face_diff(n: int, h: float):
    """(n x n-1) difference from interior faces/nodes to the n cells."""
    return (sp.eye(n, n - 1, k=0) - sp.eye(n, n - 1, k=-1)) / h


@dataclass
class MacOperators:
    grid: Grid
    lap: sp.csr_matrix = field(init=False)
    div: sp.csr_matrix = field(init=False)
    grad: sp.csr_matrix = field(init=False)

    def __post_init__(self):
        g = self.grid
        nx, ny, hx, hy = g.nx, g.ny, g.hx, g.hy
        lap_u = sp.kron(_second_diff_nodes(nx, hx), sp.eye(ny)) + \
            sp.kron(sp.eye(nx - 1), _second_diff_cells(ny, hy))
        lap_v = sp.kron(_second_diff_cells(nx, hx), sp.eye(ny - 1)) + \
            sp.kron(sp.eye(nx), _second_diff_nodes(ny, hy))
        self.lap = sp.block_diag([lap_u, lap_v]).tocsr()
        div_u = sp.kron(_face_diff(nx, hx), sp.eye(ny))
        div_v = sp.kron(sp.eye(nx), _face_diff(ny, hy))
        self.div = sp.hstack([div_u, div_v]).tocsr()
        self.grad = (-self.div.T).tocsr()

    @property
    def n_u(self) -> int:
        return (self.grid.nx - 1) * self.grid.ny

    @property
    def n_vel(self) -> int:
        return self.n_u + self.grid.nx * (self.grid.ny - 1)

    @property
    def n_p(self) -> int:
        return self.grid.nx * self.grid.ny


# velocity fields -------------------------------------------------------------

@dataclass
class VelocityField:
    """Face velocities including the (zero) wall-normal faces."""

    u: np.ndarray  # (nx+1, ny)
    v: np.ndarray  # (nx, ny+1)

    @classmethod
    def zeros(cls, grid: Grid) -> "VelocityField":
        return cls(np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))

    @classmethod
    def from_vector(cls, grid: Grid, vec: np.ndarray) -> "VelocityField":
        vf = cls.zeros(grid)
        nu = (grid.nx - 1) * grid.ny
        vf.u[1:-1, :] = vec[:nu].reshape(grid.nx - 1, grid.ny)
        vf.v[:, 1:-1] = vec[nu:].reshape(grid.nx, grid.ny - 1)
        return vf

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.u[1:-1, :].ravel(), self.v[:, 1:-1].ravel()])


def velocity_from_stream(grid: Grid, psi: np.ndarray) -> np.ndarray:
    """Packed velocity (dpsi/dy, -dpsi/dx) from a nodal stream function.

    Discretely divergence-free by construction; psi must vanish on the
    boundary nodes so that the wall-normal velocity is zero.
    """
    u = (psi[:, 1:] - psi[:, :-1]) / grid.hy        # (nx+1, ny)
    v = -(psi[1:, :] - psi[:-1, :]) / grid.hx       # (nx, ny+1)
    return VelocityField(u, v).to_vector()


def random_stream_velocity(grid: Grid, rng: np.random.Generator, modes: int = 4,
                           norm: float | None = 1.0) -> np.ndarray:
    """Divergence-free field from a random sine-series stream function."""
    X, Y = grid.nodes()
    psi = np.zeros_like(X)
    for m in range(1, modes + 1):
        for n in range(1, modes + 1):
            psi += rng.standard_normal() / (m * m + n * n) * np.sin(m * np.pi * X) * np.sin(n * np.pi * Y)
    psi[0, :] = psi[-1, :] = psi[:, 0] = psi[:, -1] = 0.0
    vec = velocity_from_stream(grid, psi)
    if norm is not None:
        vec *= norm / l2_norm(grid, vec)
    return vec


def inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return float(grid.cell_area * np.dot(a, b))


def l2_norm(grid: Grid, a: np.ndarray) -> float:
    return float(np.sqrt(grid.cell_area * np.dot(a, a)))


# trajectories ------------------------------------------------------------------

@dataclass
class StateTrajectory:
    times: np.ndarray
    velocity: np.ndarray       # (nt+1, n_vel) packed
    pressure: np.ndarray       # (nt+1, n_p); entry 0 unused for forward runs
    direction: str             # 'forward' | 'backward'
    max_divergence: float

    def field(self, k: int, grid: Grid) -> VelocityField:
        return VelocityField.from_vector(grid, self.velocity[k])

    def norms(self, grid: Grid) -> np.ndarray:
        return np.sqrt(grid.cell_area * np.einsum("ij,ij->i", self.velocity, self.velocity))


def _as_source(src, nt: int, n: int) -> np.ndarray | None:
    """Normalize a time-indexed source to an (nt+1, n) array or None."""
    if src is None:
        return None
    if callable(src):
        raise TypeError("sources must be sampled arrays, not callables")
    arr = np.asarray(src, dtype=float)
    if arr.shape != (nt + 1, n):
        raise SolverError(f"source shape {arr.shape} does not match mesh {(nt + 1, n)}")
    return arr


class StokesSolver:
    """Forward/backward unsteady Stokes solves on a fixed grid.

    Factorizations are built once and reused; the instance holds no
    per-trajectory state.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.ops = MacOperators(grid)
        self._step = None
        self._proj = None

    # factorizations ---------------------------------------------------------
    def _kkt(self, a_block):
        ops = self.ops
        ones = sp.csr_matrix(np.ones((ops.n_p, 1)))
        K = sp.bmat([[a_block, ops.grad, None],
                     [ops.grad.T, None, ones],
                     [None, ones.T, None]], format="csc")
        return spla.splu(K)

    @property
    def step_lu(self):
        if self._step is None:
            n = self.ops.n_vel
            self._step = self._kkt((sp.eye(n) - self.grid.dt * self.ops.lap).tocsc())
        return self._step

    @property
    def proj_lu(self):
        if self._proj is None:
            self._proj = self._kkt(sp.eye(self.ops.n_vel, format="csc"))
        return self._proj

    def _solve(self, lu, rhs: np.ndarray):
        n, npr = self.ops.n_vel, self.ops.n_p
        full = np.zeros(n + npr + 1)
        full[:n] = rhs
        sol = lu.solve(full)
        resid = np.max(np.abs(self.ops.div @ sol[:n]), initial=0.0)
        scale = max(np.max(np.abs(rhs), initial=0.0), 1e-300) / min(self.grid.hx, self.grid.hy)
        if not np.isfinite(sol).all() or resid > 1e-8 * scale:
            raise SolverError(f"saddle-point solve failed, divergence residual {resid:.3e}")
        return sol[:n], sol[n:n + npr]

    def step(self, rhs: np.ndarray):
        """Apply M: return (velocity, pressure) solving one implicit Euler step."""
        vel, q = self._solve(self.step_lu, rhs)
        return vel, q / self.grid.dt

    def project(self, w: np.ndarray) -> np.ndarray:
        """L2-orthogonal projection onto discretely divergence-free fields."""
        vel, _ = self._solve(self.proj_lu, np.asarray(w, dtype=float))
        return vel

    def divergence(self, vec: np.ndarray) -> np.ndarray:
        return self.ops.div @ vec

    def max_divergence(self, vec: np.ndarray) -> float:
        return float(np.max(np.abs(self.ops.div @ vec), initial=0.0))

    def relative_divergence(self, vec: np.ndarray) -> float:
        """max |div| scaled by max|velocity|/h; 0 for the zero field."""
        top = np.max(np.abs(vec), initial=0.0)
        if top == 0:
            return 0.0
        return self.max_divergence(vec) * min(self.grid.hx, self.grid.hy) / top

    def h1_seminorm(self, vec: np.ndarray) -> float:
        return float(np.sqrt(max(-self.grid.cell_area * vec @ (self.ops.lap @ vec), 0.0)))

    # time stepping ----------------------------------------------------------
    def _check_initial(self, vec, name):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.ops.n_vel,):
            raise SolverError(f"{name} has shape {vec.shape}, expected ({self.ops.n_vel},)")
        return vec

    def solve_forward(self, y0, f=None, v=None, convection=None) -> StateTrajectory:
        """March y_{k+1} = M(y_k + dt (f_k + v_k [- conv(y_k)])).

        ``f`` and ``v`` are (nt+1, n_vel) samples; only rows 0..nt-1 enter.
        ``convection`` (optional) is a callable y -> (y.grad)y used for the
        fully nonlinear dynamics, treated explicitly like the sources.
        """
        g = self.grid
        n, nt, dt = self.ops.n_vel, g.nt, g.dt
        y0 = self._check_initial(y0, "y0")
        if self.relative_divergence(y0) > 1e-10:
            y0 = self.project(y0)
        f = _as_source(f, nt, n)
        v = _as_source(v, nt, n)
        vel = np.zeros((nt + 1, n))
        pres = np.zeros((nt + 1, self.ops.n_p))
        vel[0] = y0
        div = self.relative_divergence(y0)
        for k in range(nt):
            rhs = vel[k].copy()
            if f is not None:
                rhs += dt * f[k]
            if v is not None:
                rhs += dt * v[k]
            if convection is not None:
                rhs -= dt * convection(vel[k])
            vel[k + 1], pres[k + 1] = self.step(rhs)
            div = max(div, self.relative_divergence(vel[k + 1]))
        return StateTrajectory(g.times, vel, pres, "forward", div)

    def solve_adjoint(self, phiT, g_src=None) -> StateTrajectory:
        """March phi_k = M(phi_{k+1} + dt g_{k+1}) backward from phi_nt = phiT."""
        g = self.grid
        n, nt, dt = self.ops.n_vel, g.nt, g.dt
        phiT = self._check_initial(phiT, "phiT")
        if self.relative_divergence(phiT) > 1e-10:
            raise SolverError("terminal datum phiT must be divergence-free")
        g_src = _as_source(g_src, nt, n)
        vel = np.zeros((nt + 1, n))
        pres = np.zeros((nt + 1, self.ops.n_p))
        vel[nt] = phiT
        div = self.relative_divergence(phiT)
        for k in range(nt - 1, -1, -1):
            rhs = vel[k + 1].copy()
            if g_src is not None:
                rhs += dt * g_src[k + 1]
            vel[k], pres[k] = self.step(rhs)
            div = max(div, self.relative_divergence(vel[k]))
        return StateTrajectory(g.times, vel, pres, "backward", div)

    def apply_adjoint_to_many(self, phiT_block: np.ndarray) -> np.ndarray:
        """Adjoint trajectories (g = 0) for several terminal data at once.

        Returns an array (nt+1, n_vel, m)."""
        g = self.grid
        n, npr, nt = self.ops.n_vel, self.ops.n_p, g.nt
        m = phiT_block.shape[1]
        out = np.zeros((nt + 1, n, m))
        out[nt] = phiT_block
        full = np.zeros((n + npr + 1, m))
        for k in range(nt - 1, -1, -1):
            full[:n] = out[k + 1]
            full[n:] = 0.0
            out[k] = self.step_lu.solve(full)[:n]
        return out


def duality_gap(grid: Grid, y: StateTrajectory, phi: StateTrajectory, F=None, g_src=None) -> tuple[float, float]:
    """Both sides of the discrete duality identity (see module docstring)."""
    nt, dt = grid.nt, grid.dt
    lhs = inner(grid, y.velocity[nt], phi.velocity[nt])
    if g_src is not None:
        lhs += dt * sum(inner(grid, y.velocity[k], g_src[k]) for k in range(1, nt + 1))
    rhs = inner(grid, y.velocity[0], phi.velocity[0])
    if F is not None:
        rhs += dt * sum(inner(grid, F[k], phi.velocity[k]) for k in range(nt))
    return lhs, rhs


def regularity_ratio(solver: StokesSolver, f: np.ndarray) -> float:
    """(|u|^2_{L2 H2} + |u|^2_{H1 L2}) / |f|^2_{L2} for the zero-initial-data solution.

    The discrete H2 norm is |u|^2 + |grad_h u|^2 + |L_h u|^2; the time
    derivative is the backward difference.  Returns 0 for f = 0.
    """
    grid = solver.grid
    nt, dt = grid.nt, grid.dt
    f = _as_source(f, nt, solver.ops.n_vel)
    f_sq = dt * sum(l2_norm(grid, f[k]) ** 2 for k in range(nt))
    if f_sq == 0:
        return 0.0
    traj = solver.solve_forward(np.zeros(solver.ops.n_vel), f=f)
    u = traj.velocity
    h2 = h1t = 0.0
    for k in range(1, nt + 1):
        uk = u[k]
        lap = solver.ops.lap @ uk
        h2 += dt * (l2_norm(grid, uk) ** 2 + solver.h1_seminorm(uk) ** 2 + l2_norm(grid, lap) ** 2)
        h1t += dt * (l2_norm(grid, uk) ** 2 + l2_norm(grid, (uk - u[k - 1]) / dt) ** 2)
    return (h2 + h1t) / f_sq
