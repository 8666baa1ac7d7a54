"""Manufactured Stokes solution used for convergence checks.

psi = sin^2(pi x) sin^2(pi y) e^{-t},  y = (d_y psi, -d_x psi),
p = cos(pi x) cos(pi y) e^{-t},  f = y_t - Lap y + grad p.
"""

from __future__ import annotations

import numpy as np

from .geometry import Grid, build_grid
from .stokes import StokesSolver, VelocityField, l2_norm

PI = np.pi


def velocity(x, y, t):
    e = np.exp(-t)
    u = PI * np.sin(PI * x) ** 2 * np.sin(2 * PI * y) * e
    v = -PI * np.sin(2 * PI * x) * np.sin(PI * y) ** 2 * e
    return u, v


def pressure(x, y, t):
    return np.cos(PI * x) * np.cos(PI * y) * np.exp(-t)


def forcing(x, y, t):
    e = np.exp(-t)
    # u = pi A(x) B(y) e^{-t}, A = sin^2(pi x), B = sin(2 pi y)
    A, A2 = np.sin(PI * x) ** 2, 2 * PI ** 2 * np.cos(2 * PI * x)
    B, B2 = np.sin(2 * PI * y), -4 * PI ** 2 * np.sin(2 * PI * y)
    lap_u = PI * (A2 * B + A * B2) * e
    # v = -pi C(x) D(y) e^{-t}, C = sin(2 pi x), D = sin^2(pi y)
    C, C2 = np.sin(2 * PI * x), -4 * PI ** 2 * np.sin(2 * PI * x)
    D, D2 = np.sin(PI * y) ** 2, 2 * PI ** 2 * np.cos(2 * PI * y)
    lap_v = -PI * (C2 * D + C * D2) * e
    u, v = velocity(x, y, t)
    px = -PI * np.sin(PI * x) * np.cos(PI * y) * e
    py = -PI * np.cos(PI * x) * np.sin(PI * y) * e
    return -u - lap_u + px, -v - lap_v + py


def convection(x, y, t):
    """Closed form of (y.grad)y for the manufactured velocity."""
    e = np.exp(-t)
    u, v = velocity(x, y, t)
    ux = PI * 2 * PI * np.sin(PI * x) * np.cos(PI * x) * np.sin(2 * PI * y) * e
    uy = PI * np.sin(PI * x) ** 2 * 2 * PI * np.cos(2 * PI * y) * e
    vx = -PI * 2 * PI * np.cos(2 * PI * x) * np.sin(PI * y) ** 2 * e
    vy = -PI * np.sin(2 * PI * x) * 2 * PI * np.sin(PI * y) * np.cos(PI * y) * e
    return u * ux + v * uy, u * vx + v * vy


def sample(grid: Grid, fn, t) -> np.ndarray:
    """Packed face samples of a vector closed form ``fn(x, y, t) -> (fx, fy)``."""
    xu, yu = grid.u_points()
    xv, yv = grid.v_points()
    fu = fn(xu, yu, t)[0]
    fv = fn(xv, yv, t)[1]
    return VelocityField(fu, fv).to_vector()


def solve_error(n: int, nt: int, T: float = 1.0) -> float:
    """L2 error at t = T of the MAC solver against the manufactured solution."""
    grid = build_grid(n, n, nt, T, "rect(0.3,0.7,0.3,0.7)", "disc(0.5,0.5,0.1)")
    solver = StokesSolver(grid)
    y0 = sample(grid, velocity, 0.0)
    f = np.stack([sample(grid, forcing, t) for t in grid.times])
    traj = solver.solve_forward(y0, f=f)
    exact = sample(grid, velocity, T)
    return l2_norm(grid, traj.velocity[-1] - exact)


def observed_order(resolutions, errors) -> float:
    """Order p of error ~ C * resolution^(-p), by least squares in log-log.

    ``resolutions`` are cell or step counts (1/h, 1/dt)."""
    x = -np.log(np.asarray(resolutions, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def spatial_convergence(ns=(16, 32, 64), T: float = 0.05, nt_coarse: int = 4):
    """Errors for the given grids with dt ~ h^2 so time error scales like h^2."""
    errors = []
    for n in ns:
        nt = nt_coarse * (n // ns[0]) ** 2
        errors.append(solve_error(n, nt, T))
    return errors, observed_order(ns, errors)


def temporal_convergence(nts=(32, 64, 128), n: int = 64, T: float = 1.0):
    errors = [solve_error(n, nt, T) for nt in nts]
    return errors, observed_order(nts, errors)
