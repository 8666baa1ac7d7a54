"""CSV tables and binary field dumps.

Binary dump layout (little-endian)::

    magic    4 bytes  b"SNFD"
    kind     int32    0 = MAC face velocity, 1 = nodal scalar
    nx, ny   int32
    nt       int32    number of time intervals of the run
    T        float64
    nsteps   int32    number of records that follow
    records  nsteps x (t: float64, data...)

For kind 0 each record holds u as an (nx+1, ny) row-major float64 array
followed by v as (nx, ny+1); for kind 1 a single (nx+1, ny+1) array.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .geometry import Grid
from .stokes import VelocityField

MAGIC = b"SNFD"
_HEADER = struct.Struct("<4siiiidi")
KIND_FACES = 0
KIND_NODES = 1


def fmt(x) -> str:
    """Shortest round-trip text for a number (stable across runs)."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


def write_field_dump(path, grid: Grid, times, vectors) -> Path:
    """Dump packed velocity vectors at the given times."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, KIND_FACES, grid.nx, grid.ny, grid.nt, grid.T, len(times)))
        for t, vec in zip(times, vectors):
            vf = VelocityField.from_vector(grid, vec)
            fh.write(struct.pack("<d", float(t)))
            fh.write(np.ascontiguousarray(vf.u, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(vf.v, dtype="<f8").tobytes())
    return path


def write_node_dump(path, grid: Grid, times, arrays) -> Path:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, KIND_NODES, grid.nx, grid.ny, grid.nt, grid.T, len(times)))
        for t, arr in zip(times, arrays):
            fh.write(struct.pack("<d", float(t)))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def read_dump(path):
    """Return (header dict, list of (t, arrays)) from a binary dump."""
    data = Path(path).read_bytes()
    magic, kind, nx, ny, nt, T, n = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a field dump")
    off = _HEADER.size
    shapes = [(nx + 1, ny), (nx, ny + 1)] if kind == KIND_FACES else [(nx + 1, ny + 1)]
    records = []
    for _ in range(n):
        (t,) = struct.unpack_from("<d", data, off)
        off += 8
        arrs = []
        for shp in shapes:
            size = shp[0] * shp[1]
            arrs.append(np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shp).copy())
            off += 8 * size
        records.append((t, arrs))
    header = {"kind": kind, "nx": nx, "ny": ny, "nt": nt, "T": T, "nsteps": n}
    return header, records


def write_weights_csv(path, grid: Grid, weights) -> Path:
    """One row per (node, time): x, y, t, log_alpha, log_xi, log_beta, log_gamma."""
    X, Y = grid.nodes()
    x, y = X.ravel(), Y.ravel()
    rows = []
    for k, t in enumerate(weights.t):
        la, lx = weights.log_alpha[k].ravel(), weights.log_xi[k].ravel()
        lb, lg = weights.log_beta[k].ravel(), weights.log_gamma[k].ravel()
        rows.extend(zip(x, y, np.full(x.size, t), la, lx, lb, lg))
    return write_csv(path, ["x", "y", "t", "log_alpha", "log_xi", "log_beta", "log_gamma"], rows)


def write_trajectory_summary(path, grid: Grid, traj, solver) -> Path:
    """CSV (t, energy, max_divergence) for a state trajectory."""
    norms = traj.norms(grid)
    rows = [(t, 0.5 * n ** 2, solver.max_divergence(v)) for t, n, v in zip(traj.times, norms, traj.velocity)]
    return write_csv(path, ["t", "energy", "max_divergence"], rows)
