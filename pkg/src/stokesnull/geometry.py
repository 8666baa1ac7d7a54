"""Domain, control regions, the auxiliary function eta and the time profiles.

The physical domain is the unit square discretized by a uniform MAC grid:
pressure at cell centres, the x-velocity on vertical faces and the
y-velocity on horizontal faces.  Scalar weight fields live on cell corners.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Invalid domain, region or mesh description."""


@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError(f"degenerate rectangle {self}")

    def contains(self, x, y):
        return (x > self.x0) & (x < self.x1) & (y > self.y0) & (y < self.y1)

    def corners(self):
        return [(self.x0, self.y0), (self.x1, self.y0), (self.x0, self.y1), (self.x1, self.y1)]

    def strictly_contains(self, other) -> bool:
        """True when the closure of ``other`` lies in the open rectangle."""
        if isinstance(other, Rect):
            return (self.x0 < other.x0 and other.x1 < self.x1
                    and self.y0 < other.y0 and other.y1 < self.y1)
        return (self.x0 < other.cx - other.r and other.cx + other.r < self.x1
                and self.y0 < other.cy - other.r and other.cy + other.r < self.y1)

    def describe(self) -> str:
        return f"rect({self.x0},{self.x1},{self.y0},{self.y1})"


@dataclass(frozen=True)
class Disc:
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise GeometryError(f"disc radius must be positive, got {self.r}")

    def contains(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 < self.r ** 2

    def strictly_contains(self, other) -> bool:
        if isinstance(other, Disc):
            return np.hypot(other.cx - self.cx, other.cy - self.cy) + other.r < self.r
        return all((x - self.cx) ** 2 + (y - self.cy) ** 2 < self.r ** 2 for x, y in other.corners())

    def describe(self) -> str:
        return f"disc({self.cx},{self.cy},{self.r})"


UNIT_SQUARE = Rect(0.0, 1.0, 0.0, 1.0)


def parse_region(text: str):
    """Parse ``rect(x0,x1,y0,y1)`` or ``disc(cx,cy,r)``."""
    text = text.strip().replace(" ", "")
    for name, cls, n in (("rect", Rect, 4), ("disc", Disc, 3)):
        if text.startswith(name + "(") and text.endswith(")"):
            try:
                vals = [float(v) for v in text[len(name) + 1:-1].split(",")]
            except ValueError as exc:
                raise GeometryError(f"bad region {text!r}") from exc
            if len(vals) != n:
                raise GeometryError(f"{name} takes {n} numbers, got {len(vals)}")
            return cls(*vals)
    raise GeometryError(f"unknown region {text!r}; expected rect(...) or disc(...)")


@dataclass(frozen=True)
class Grid:
    """Uniform MAC grid on the unit square with a time mesh on [0, T]."""

    nx: int
    ny: int
    nt: int
    T: float
    omega: Rect | Disc
    omega0: Rect | Disc
    # masks are derived; excluded from equality/hash
    masks: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    # sample points ----------------------------------------------------
    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def nodes(self):
        x = np.arange(self.nx + 1) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def u_points(self):
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def v_points(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    # masks --------------------------------------------------------------
    def mask(self, region: str, where: str) -> np.ndarray:
        """Boolean mask of ``region`` ('omega' | 'omega0') at ``where``
        ('cells' | 'nodes' | 'u' | 'v')."""
        key = (region, where)
        if key not in self.masks:
            shape = {"omega": self.omega, "omega0": self.omega0}[region]
            pts = {"cells": self.cell_centers, "nodes": self.nodes,
                   "u": self.u_points, "v": self.v_points}[where]()
            self.masks[key] = shape.contains(*pts)
        return self.masks[key]

    def control_masks(self):
        """Face masks of omega for the (u, v) components, boundary faces excluded."""
        mu = self.mask("omega", "u").copy()
        mv = self.mask("omega", "v").copy()
        mu[0, :] = mu[-1, :] = False
        mv[:, 0] = mv[:, -1] = False
        return mu, mv


def build_grid(nx: int, ny: int, nt: int, T: float, omega, omega0) -> Grid:
    """Validate a domain description and return the grid.

    ``omega`` and ``omega0`` are :class:`Rect` / :class:`Disc` instances or
    their textual form.
    """
    if isinstance(omega, str):
        omega = parse_region(omega)
    if isinstance(omega0, str):
        omega0 = parse_region(omega0)
    for name, n in (("nx", nx), ("ny", ny), ("nt", nt)):
        if int(n) != n or n < 4:
            raise GeometryError(f"{name} must be an integer >= 4, got {n}")
    if not T > 0:
        raise GeometryError(f"T must be positive, got {T}")
    if not UNIT_SQUARE.strictly_contains(omega):
        raise GeometryError(f"omega={omega.describe()} is not strictly inside the unit square")
    if not omega.strictly_contains(omega0):
        raise GeometryError(f"omega0={omega0.describe()} is not strictly inside omega={omega.describe()}")
    grid = Grid(int(nx), int(ny), int(nt), float(T), omega, omega0)
    for where in ("cells", "nodes", "u", "v"):
        inner = grid.mask("omega0", where)
        if np.any(inner & ~grid.mask("omega", where)):
            raise GeometryError(f"omega0 mask leaks outside omega at {where}")
    return grid


# eta ---------------------------------------------------------------------

@dataclass(frozen=True)
class EtaField:
    values: np.ndarray      # (nx+1, ny+1) at nodes
    grad_norm: np.ndarray   # central-difference |grad eta| at nodes
    sup_norm: float

    def at(self, x, y):
        return eta_exact(x, y)


def eta_exact(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def eta_grad_exact(x, y):
    return (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
            np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))


ETA_CRITICAL_POINT = (0.5, 0.5)


def corner_nodes(grid: Grid) -> np.ndarray:
    m = np.zeros((grid.nx + 1, grid.ny + 1), dtype=bool)
    m[0, 0] = m[0, -1] = m[-1, 0] = m[-1, -1] = True
    return m


def build_eta(grid: Grid) -> EtaField:
    """Sample eta(x, y) = sin(pi x) sin(pi y) on the grid nodes.

    The only interior critical point is (0.5, 0.5), which must lie in
    omega0.  The gradient also vanishes at the four corners of the square;
    no C^2 function vanishing on two meeting edges can avoid that, so the
    corners are excluded from the gradient check.
    """
    if not grid.omega0.contains(*ETA_CRITICAL_POINT):
        raise GeometryError(
            f"omega0={grid.omega0.describe()} must contain the critical point (0.5, 0.5) of eta")
    X, Y = grid.nodes()
    values = eta_exact(X, Y)
    values[0, :] = values[-1, :] = 0.0
    values[:, 0] = values[:, -1] = 0.0
    gx, gy = np.gradient(values, grid.hx, grid.hy, edge_order=2)
    grad_norm = np.hypot(gx, gy)

    interior = np.zeros_like(values, dtype=bool)
    interior[1:-1, 1:-1] = True
    if np.any(values[interior] <= 0):
        raise GeometryError("eta must be positive at interior nodes")
    outside = ~grid.mask("omega0", "nodes") & ~corner_nodes(grid)
    if np.any(grad_norm[outside] <= 0):
        raise GeometryError("|grad eta| vanishes outside omega0")
    return EtaField(values, grad_norm, float(values.max()))


# time profiles -----------------------------------------------------------

@dataclass(frozen=True)
class TimeProfile:
    t: np.ndarray
    ell: np.ndarray
    ell_tilde: np.ndarray
    floor_delta: float
    T: float

    @property
    def ell_max(self) -> float:
        return float(self.ell.max())

    def floored(self, which: str = "ell") -> np.ndarray:
        vals = self.ell if which == "ell" else self.ell_tilde
        return np.maximum(vals, self.floor_delta * self.T)


def ell_function(t, T: float):
    """Positive profile: t on [0,T/4], T-t on [3T/4,T], quartic-in-(t-T/2)
    C^2 blend in between (the unique quintic matching value, slope and
    curvature at both junctions; its odd part vanishes by symmetry)."""
    t = np.asarray(t, dtype=float)
    h = T / 4.0
    u = t - T / 2.0
    mid = 13.0 * h / 8.0 - 3.0 * u ** 2 / (4.0 * h) + u ** 4 / (8.0 * h ** 3)
    return np.where(t <= h, t, np.where(t >= 3 * h, T - t, mid))


def build_time_profile(T: float, nt: int, floor_delta: float = 1e-2) -> TimeProfile:
    if not T > 0:
        raise GeometryError(f"T must be positive, got {T}")
    if nt < 4:
        raise GeometryError(f"nt must be >= 4, got {nt}")
    if not 0 < floor_delta < 0.25:
        raise GeometryError(f"floor_delta must lie in (0, 0.25), got {floor_delta}")
    t = np.linspace(0.0, T, nt + 1)
    ell = ell_function(t, T)
    ell_max = float(ell_function(T / 2.0, T))
    ell_tilde = np.where(t <= T / 2.0, ell_max, ell)
    return TimeProfile(t, ell, ell_tilde, floor_delta, T)
