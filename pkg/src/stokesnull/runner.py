"""Run a configured experiment and write a self-describing artifact directory.

Layout::

    <out>/config.txt       canonical echo of the configuration
    <out>/versions.json    package and library versions
    <out>/summary.json     key metrics, invariant checks and diagnostics
    <out>/*.csv, *.bin     tables and field dumps of the experiment kind

Sweep points (eps values, amplitudes) each write inside their own
subdirectory, so they can run in separate processes.
"""

from __future__ import annotations

import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import io as sio
from . import manufactured
from .audit import audit_sweep, carleman_ratio_27, carleman_ratio_33, make_sample
from .config import ConfigError, ExperimentConfig, from_mapping, validate
from .control import component_masks, solve_penalized_hum
from .geometry import build_eta, build_grid, build_time_profile
from .nonlinear import estimate_delta, solve_nonlinear
from .stokes import StokesSolver, duality_gap, l2_norm, random_stream_velocity
from .weights import WeightParams, auto_s, eval_weights

log = logging.getLogger(__name__)

DIV_TOL = 1e-10


@dataclass
class Setup:
    grid: object
    eta: object
    profile: object
    solver: StokesSolver
    s: float
    lam: float
    exp_clamp: float
    _cache: dict = field(default_factory=dict, repr=False)

    def weights(self, s=None):
        s = self.s if s is None else s
        if s not in self._cache:
            self._cache[s] = eval_weights(self.eta, self.profile,
                                          WeightParams(s, lam=self.lam, exp_clamp=self.exp_clamp))
        return self._cache[s]


_GRID_KEYS = ("nx", "ny", "nt", "T", "omega", "omega0", "s", "s_target", "lambda", "exp_clamp",
              "floor_delta")


@lru_cache(maxsize=4)
def _setup_cached(key):
    cfg = dict(zip(_GRID_KEYS, key))
    grid = build_grid(cfg["nx"], cfg["ny"], cfg["nt"], cfg["T"], cfg["omega"], cfg["omega0"])
    eta = build_eta(grid)
    profile = build_time_profile(cfg["T"], cfg["nt"], cfg["floor_delta"])
    s = cfg["s"]
    if s == "auto":
        s = auto_s(eta, profile, cfg["lambda"], cfg["s_target"])
    return Setup(grid, eta, profile, StokesSolver(grid), float(s), cfg["lambda"], cfg["exp_clamp"])


def make_setup(cfg: ExperimentConfig) -> Setup:
    return _setup_cached(tuple(cfg[k] for k in _GRID_KEYS))


def initial_state(setup: Setup, seed: int, norm: float = 1.0) -> np.ndarray:
    return random_stream_velocity(setup.grid, np.random.default_rng(seed), norm=norm)


# invariants ---------------------------------------------------------------

def max_abs_divergence(solver: StokesSolver, traj: np.ndarray) -> float:
    return float(max(solver.max_divergence(y) for y in traj))


def control_leaks(grid, control, i: int) -> tuple[float, float]:
    """(max |v_i|, max |v| outside omega)."""
    masks = component_masks(grid)
    vi = float(np.max(np.abs(control * masks[i - 1]), initial=0.0))
    inside = sum(masks)
    outside = float(np.max(np.abs(control * (inside == 0)), initial=0.0))
    return vi, outside


class Checks:
    def __init__(self):
        self.items = {}

    def add(self, name, ok, value=None):
        self.items[name] = {"ok": bool(ok), "value": value}

    @property
    def failed(self):
        return [k for k, v in self.items.items() if not v["ok"]]


# experiment kinds ---------------------------------------------------------

def _dump_indices(setup, cfg):
    nt = setup.grid.nt
    return sorted({int(round(f * nt)) for f in cfg["dump_times"]})


def _forward_check(cfg, out: Path, jobs: int):
    setup = make_setup(cfg)
    grid, solver = setup.grid, setup.solver
    checks = Checks()

    sp_err, sp_order = manufactured.spatial_convergence(tuple(cfg["conv_grids"]))
    tm_err, tm_order = manufactured.temporal_convergence(tuple(cfg["conv_nts"]), n=cfg["conv_grids"][-1],
                                                         T=cfg["T"])
    rows = [("space", n, e) for n, e in zip(cfg["conv_grids"], sp_err)]
    rows += [("time", n, e) for n, e in zip(cfg["conv_nts"], tm_err)]
    sio.write_csv(out / "convergence.csv", ["study", "resolution", "l2_error"], rows)

    # duality on random pairs (y0 = 0, g = 0)
    rng = np.random.default_rng(cfg["seed"])
    worst = 0.0
    dual_rows = []
    for n in range(10):
        f = np.stack([random_stream_velocity(grid, rng, norm=None) * np.cos(np.pi * rng.random() * t)
                      for t in grid.times])
        f += 0.1 * rng.standard_normal(f.shape)
        phiT = solver.project(rng.standard_normal(solver.ops.n_vel))
        y = solver.solve_forward(np.zeros(solver.ops.n_vel), f=f)
        phi = solver.solve_adjoint(phiT)
        lhs, rhs = duality_gap(grid, y, phi, F=f)
        fnorm = np.sqrt(grid.dt * sum(l2_norm(grid, f[k]) ** 2 for k in range(grid.nt)))
        rel = abs(lhs - rhs) / (fnorm * l2_norm(grid, phiT))
        worst = max(worst, rel)
        dual_rows.append((n, lhs, rhs, rel))
    sio.write_csv(out / "duality.csv", ["pair", "terminal_pairing", "source_pairing", "relative_gap"], dual_rows)

    y0 = initial_state(setup, cfg["seed"])
    traj = solver.solve_forward(y0)
    sio.write_trajectory_summary(out / "trajectory.csv", grid, traj, solver)
    idx = _dump_indices(setup, cfg)
    sio.write_field_dump(out / "fields_y.bin", grid, grid.times[idx], traj.velocity[idx])
    div = max_abs_divergence(solver, traj.velocity)
    checks.add("divergence_free", div <= DIV_TOL, div)
    checks.add("duality", worst <= 1e-10, worst)
    return {
        "spatial_errors": sp_err, "spatial_order": sp_order,
        "temporal_errors": tm_err, "temporal_order": tm_order,
        "duality_max_relative_gap": worst, "max_divergence": div,
    }, checks


def _hum_point(values: dict, eps: float, sub: str):
    """One HUM solve; writes inside ``sub`` and returns (summary, checks dict)."""
    cfg = from_mapping(values)
    setup = make_setup(cfg)
    grid, solver = setup.grid, setup.solver
    out = Path(sub)
    out.mkdir(parents=True, exist_ok=True)
    y0 = initial_state(setup, cfg["seed"])
    w = setup.weights()
    res = solve_penalized_hum(y0, None, cfg["i"], eps, w, solver, tol=cfg["cg_tol"],
                              max_iter=cfg["cg_max_iter"])
    h = res.history
    sio.write_csv(out / "cg.csv", ["iteration", "dual_functional", "residual"],
                  [(k, fval, r) for k, (fval, r) in enumerate(zip(h.functional, h.residual))])
    vn = res.control.norms(grid)
    yn = res.trajectory.norms(grid)
    sio.write_csv(out / "hum.csv", ["t", "control_norm", "state_norm"], zip(grid.times, vn, yn))
    sio.write_trajectory_summary(out / "trajectory.csv", grid, res.trajectory, solver)
    idx = _dump_indices(setup, cfg)
    sio.write_field_dump(out / "fields_y.bin", grid, grid.times[idx], res.trajectory.velocity[idx])
    sio.write_field_dump(out / "fields_v.bin", grid, grid.times[idx], res.control.values[idx])
    vi, outside = control_leaks(grid, res.control.values, cfg["i"])
    div = max_abs_divergence(solver, res.trajectory.velocity)
    summary = dict(res.summary(), eps=eps, phiT_norm=res.phiT_norm, max_abs_vi=vi,
                   max_abs_v_outside_omega=outside, max_divergence=div)
    checks = {"component_eliminated": (vi == 0.0, vi), "support_in_omega": (outside == 0.0, outside),
              "divergence_free": (div <= DIV_TOL, div), "cg_converged": (res.converged, res.cg_iterations)}
    return summary, checks


def _hum(cfg, out: Path, jobs: int):
    setup = make_setup(cfg)
    sio.write_weights_csv(out / "weights.csv", setup.grid, setup.weights())
    eps_list = cfg["eps_list"] or [cfg["eps"]]
    subs = [str(out / f"eps_{k}") for k in range(len(eps_list))]
    results = _map(_hum_point, [(cfg.values, e, s) for e, s in zip(eps_list, subs)], jobs)
    checks = Checks()
    points = []
    for e, sub, (summ, chk) in zip(eps_list, subs, results):
        points.append(dict(summ, directory=Path(sub).name))
        for name, (ok, val) in chk.items():
            checks.add(f"eps={e!r}:{name}", ok, val)
    sio.write_csv(out / "eps_sweep.csv", ["eps", "terminal_norm", "eps_phiT_norm", "cg_iterations"],
                  [(p["eps"], p["terminal_norm"], p["eps_phiT_norm"], p["cg_iterations"]) for p in points])
    summary = {"s": setup.s, "points": points}
    if len(points) == 1:
        summary.update(points[0])
    return summary, checks


def _audit(cfg, out: Path, jobs: int):
    setup = make_setup(cfg)
    grid, solver = setup.grid, setup.solver
    s_list = [setup.s * f for f in cfg["s_factors"]]
    rep = audit_sweep(s_list, cfg["n_samples"], cfg["i"], grid, setup.weights, solver, seed0=cfg["seed"])
    sio.write_csv(out / "audit.csv",
                  ["s", "lambda", "sample_seed", "lhs27", "rhs27", "ratio27", "lhs33", "rhs33", "ratio33"],
                  [(r.s, r.lam, r.seed, r.lhs27, r.rhs27, r.ratio27, r.lhs33, r.rhs33, r.ratio33)
                   for r in rep.rows])
    sio.write_weights_csv(out / "weights.csv", grid, setup.weights())
    # scale invariance on the first few seeds
    worst_scale = 0.0
    for s in s_list:
        w = setup.weights(s)
        for n in range(min(3, cfg["n_samples"])):
            a = make_sample(cfg["seed"] + n, grid, solver)
            b = make_sample(cfg["seed"] + n, grid, solver, scale=10.0)
            for fn in (carleman_ratio_27, carleman_ratio_33):
                ra, rb = fn(a, cfg["i"], w, grid).ratio, fn(b, cfg["i"], w, grid).ratio
                if ra != 0:
                    worst_scale = max(worst_scale, abs(rb - ra) / abs(ra))
    ratios = np.array([[r.ratio27, r.ratio33] for r in rep.rows])
    checks = Checks()
    checks.add("ratios_finite", bool(np.all(np.isfinite(ratios))))
    checks.add("max_ratio_below_1e6", float(ratios.max()) < 1e6, float(ratios.max()))
    checks.add("scale_invariant", worst_scale <= 1e-8, worst_scale)
    checks.add("late_agreement", rep.max_late_disagreement <= 1e-12, rep.max_late_disagreement)
    summary = {
        "s_values": s_list,
        "max_ratio27": [rep.max_ratio[s][0] for s in s_list],
        "max_ratio33": [rep.max_ratio[s][1] for s in s_list],
        "median_ratio27": [rep.median_ratio[s][0] for s in s_list],
        "median_ratio33": [rep.median_ratio[s][1] for s in s_list],
        "flags": rep.flags,
        "max_late_disagreement": rep.max_late_disagreement,
        "max_scale_change": worst_scale,
    }
    return summary, checks


def _picard_rows(hist):
    return [(st.k, st.residual, st.terminal_norm, st.source_norm) for st in hist.states]


def _nonlinear_point(values: dict, amplitude: float, sub: str | None):
    cfg = from_mapping(values)
    setup = make_setup(cfg)
    grid, solver = setup.grid, setup.solver
    y0 = initial_state(setup, cfg["seed"], norm=amplitude)
    hist = solve_nonlinear(y0, cfg["i"], cfg["eps"], setup.weights(), solver,
                           max_iter=cfg["picard_max_iter"], tol=cfg["picard_tol"],
                           cg_tol=cfg["cg_tol"], amplitude=amplitude)
    res = {
        "amplitude": amplitude,
        "converged": hist.converged,
        "diverged": hist.diverged,
        "iterations": len(hist.states),
        "residuals": hist.residuals,
        "linear_terminal_norm": hist.linear_terminal_norm,
        "nonlinear_terminal_norm": hist.nonlinear_terminal_norm,
        "source_norms_finite": bool(all(np.isfinite(st.source_norm) for st in hist.states)),
    }
    checks = {}
    if hist.final is not None and hist.converged:
        vi, outside = control_leaks(grid, hist.final.control.values, cfg["i"])
        div = max_abs_divergence(solver, hist.final.trajectory.velocity)
        res.update(max_abs_vi=vi, max_abs_v_outside_omega=outside, max_divergence=div)
        checks = {"component_eliminated": (vi == 0.0, vi), "support_in_omega": (outside == 0.0, outside),
                  "divergence_free": (div <= DIV_TOL, div)}
    if sub is not None:
        out = Path(sub)
        out.mkdir(parents=True, exist_ok=True)
        sio.write_csv(out / "picard.csv", ["k", "residual", "terminal_norm", "weighted_source_norm"],
                      _picard_rows(hist))
    return res, checks


def _nonlinear(cfg, out: Path, jobs: int):
    res, chk = _nonlinear_point(cfg.values, cfg["amplitude"], str(out))
    checks = Checks()
    for name, (ok, val) in chk.items():
        checks.add(name, ok, val)
    r = res["residuals"]
    checks.add("converged", res["converged"])
    checks.add("residuals_decreasing", all(b < a for a, b in zip(r, r[1:])))
    checks.add("source_norms_finite", res["source_norms_finite"])
    if res["converged"]:
        ratio = res["nonlinear_terminal_norm"] / res["linear_terminal_norm"] if res["linear_terminal_norm"] > 0 \
            else (0.0 if res["nonlinear_terminal_norm"] == 0 else float("inf"))
        res["resimulation_ratio"] = ratio
        checks.add("resimulation_within_2x", ratio <= 2.0, ratio)
    return res, checks


def _delta_sweep(cfg, out: Path, jobs: int):
    amps = cfg["amplitudes"]
    subs = [str(out / f"amp_{k}") for k in range(len(amps))]
    first = _map(_nonlinear_point, [(cfg.values, a, s) for a, s in zip(amps, subs)], jobs)
    cache = {a: r for a, (r, _) in zip(amps, first)}
    extra = [len(amps)]

    def run_at(a):
        if a not in cache:
            sub = str(out / f"amp_{extra[0]}")
            extra[0] += 1
            cache[a] = _nonlinear_point(cfg.values, a, sub)[0]
        return cache[a]["converged"]

    est = estimate_delta(amps, run_at, bisections=cfg["bisections"])
    sio.write_csv(out / "delta.csv", ["amplitude", "converged", "iterations", "linear_terminal_norm",
                                      "nonlinear_terminal_norm"],
                  [(a, ok, cache[a]["iterations"], cache[a]["linear_terminal_norm"],
                    cache[a]["nonlinear_terminal_norm"]) for a, ok in zip(est.amplitudes, est.converged)])
    checks = Checks()
    for a, (r, chk) in zip(amps, first):
        for name, (ok, val) in chk.items():
            checks.add(f"amplitude={a!r}:{name}", ok, val)
    ordered = est.lower is None or est.upper is None or est.lower < est.upper
    checks.add("bracket_ordered", ordered, [est.lower, est.upper])
    summary = {"lower": est.lower, "upper": est.upper, "open_bracket": est.open_bracket,
               "empty_bracket": est.empty, "tested": est.amplitudes, "converged": est.converged,
               "eps": cfg["eps"]}
    return summary, checks


KIND_RUNNERS = {
    "forward-check": _forward_check,
    "hum": _hum,
    "audit": _audit,
    "nonlinear": _nonlinear,
    "delta-sweep": _delta_sweep,
}


def _map(fn, arglist, jobs: int):
    if jobs <= 1 or len(arglist) <= 1:
        return [fn(*a) for a in arglist]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(fn, *a) for a in arglist]
        return [f.result() for f in futs]


def versions() -> dict:
    return {"stokesnull": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class RunOutcome:
    directory: Path
    summary: dict
    failed: list

    @property
    def ok(self) -> bool:
        return not self.failed


def run(cfg: ExperimentConfig, output_dir=None, jobs: int = 1) -> RunOutcome:
    """Execute the experiment; raises ConfigError for invalid configs."""
    diags = validate(cfg)
    if diags:
        raise ConfigError("; ".join(diags))
    out = Path(output_dir if output_dir is not None else cfg["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.echo())
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    (out / "versions.json").write_text(json.dumps(versions(), indent=2, sort_keys=True) + "\n")
    metrics, checks = KIND_RUNNERS[cfg["kind"]](cfg, out, jobs)
    summary = {
        "kind": cfg["kind"],
        "seed": cfg["seed"],
        "metrics": _jsonable(metrics),
        "checks": _jsonable(checks.items),
        "failed_checks": checks.failed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunOutcome(out, summary, checks.failed)
