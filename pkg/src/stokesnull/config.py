"""Flat ``key = value`` experiment configuration.

One key per line, ``#`` starts a comment, blank lines are ignored.  Lists
are comma separated.  Unknown keys are errors.  See ``SCHEMA`` for every
accepted key with its type, default and meaning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .control import N_COMPONENTS
from .geometry import GeometryError, build_grid, parse_region

KINDS = ("forward-check", "hum", "audit", "nonlinear", "delta-sweep")


class ConfigError(ValueError):
    pass


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _s_value(text):
    return "auto" if str(text).strip() == "auto" else float(text)


def _opt_float(text):
    return None if str(text).strip() in ("", "none") else float(text)


# key: (parser, default, help)
SCHEMA = {
    "kind": (str, None, "forward-check | hum | audit | nonlinear | delta-sweep"),
    "nx": (int, 32, "cells in x"),
    "ny": (int, 32, "cells in y"),
    "nt": (int, 64, "time steps"),
    "T": (float, 1.0, "final time"),
    "omega": (str, "rect(0.3,0.7,0.3,0.7)", "control region"),
    "omega0": (str, "disc(0.5,0.5,0.1)", "inner region holding the critical point of eta"),
    "s": (_s_value, "auto", "weight parameter s, or auto"),
    "s_target": (_opt_float, None, "auto mode: solve s*alpha*(T/2) = s_target instead of peak placement"),
    "lambda": (float, 1.0, "weight parameter lambda"),
    "exp_clamp": (float, 60.0, "exponent clamp"),
    "floor_delta": (float, 1e-2, "floor of ell as a fraction of T"),
    "cg_tol": (float, 1e-10, "relative CG residual tolerance"),
    "cg_max_iter": (int, 500, "CG iteration budget"),
    "eps": (float, 1e-4, "penalty parameter"),
    "eps_list": (_floats, [], "optional eps sweep (hum); overrides eps"),
    "i": (int, 2, "index of the vanishing control component"),
    "seed": (int, 0, "master seed"),
    "output_dir": (str, "runs/out", "artifact directory"),
    "n_samples": (int, 50, "audit: number of seeded samples"),
    "s_factors": (_floats, [1.0, 2.0, 4.0], "audit: multiples of the auto s"),
    "amplitude": (float, 1e-2, "nonlinear: L2 norm of y0"),
    "amplitudes": (_floats, [1e-2, 1e-1, 1.0, 10.0, 100.0], "delta-sweep: ascending amplitudes"),
    "bisections": (int, 3, "delta-sweep: bisection steps inside the bracket"),
    "picard_tol": (float, 1e-9, "relative Picard tolerance (weighted norm)"),
    "picard_max_iter": (int, 30, "Picard iteration budget"),
    "conv_grids": (_ints, [16, 32, 64], "forward-check: spatial grids"),
    "conv_nts": (_ints, [32, 64, 128], "forward-check: time step counts"),
    "dump_times": (_floats, [0.0, 0.5, 1.0], "fractions of T at which fields are dumped"),
}

REQUIRED = {"kind"}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def replace(self, **kw) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in kw.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key '{k}'")
            vals[k] = v
        return ExperimentConfig(vals)

    def echo(self) -> str:
        """Canonical text form (parses back to the same config)."""
        lines = []
        for k in SCHEMA:
            v = self.values[k]
            if isinstance(v, list):
                v = ",".join(repr(x) for x in v)
            elif v is None:
                v = "none"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def parse_text(text: str, source: str = "<config>") -> ExperimentConfig:
    raw = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key '{key}'")
        if key in raw:
            raise ConfigError(f"{source}:{n}: duplicate key '{key}'")
        raw[key] = val
    return from_mapping(raw, source)


def from_mapping(raw: dict, source: str = "<config>") -> ExperimentConfig:
    """Build a config from string (or already typed) values, filling defaults."""
    vals = {}
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(f"{source}: unknown key '{key}'")
    for key, (parse, default, _) in SCHEMA.items():
        if key in raw:
            v = raw[key]
            try:
                vals[key] = parse(v) if isinstance(v, str) or parse in (int, float) else v
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{source}: key '{key}': cannot parse {v!r} ({exc})") from None
        else:
            vals[key] = list(default) if isinstance(default, list) else default
    return ExperimentConfig(vals)


def load(path) -> ExperimentConfig:
    path = Path(path)
    return parse_text(path.read_text(), str(path))


def validate(cfg: ExperimentConfig) -> list[str]:
    """Schema diagnostics; empty iff ``run`` would accept the config."""
    d = []
    v = cfg.values
    for key in REQUIRED:
        if v.get(key) is None:
            d.append(f"{key}: required key missing")
    kind = v.get("kind")
    if kind is not None and kind not in KINDS:
        d.append(f"kind: unknown experiment kind '{kind}' (expected one of {', '.join(KINDS)})")
    if v["i"] not in range(1, N_COMPONENTS + 1):
        d.append(f"i: component index out of range ({v['i']}; expected 1..{N_COMPONENTS})")
    try:
        build_grid(v["nx"], v["ny"], v["nt"], v["T"], parse_region(v["omega"]), parse_region(v["omega0"]))
    except GeometryError as exc:
        d.append(f"grid: {exc}")
    s = v["s"]
    if s != "auto" and not s > 0:
        d.append(f"s: must be positive or 'auto', got {s}")
    if v["s_target"] is not None and not v["s_target"] > 0:
        d.append("s_target: must be positive")
    if not v["lambda"] > 0:
        d.append("lambda: must be positive")
    if not v["exp_clamp"] > 0:
        d.append("exp_clamp: must be positive")
    if not 0 < v["floor_delta"] < 0.25:
        d.append("floor_delta: must lie in (0, 0.25)")
    if not 0 < v["cg_tol"] < 1:
        d.append("cg_tol: must lie in (0, 1)")
    if v["cg_max_iter"] < 1:
        d.append("cg_max_iter: must be >= 1")
    if kind in ("hum", "nonlinear", "delta-sweep"):
        if not v["eps"] > 0:
            d.append(f"eps: must be positive for kind={kind}, got {v['eps']}")
        if any(not e > 0 for e in v["eps_list"]):
            d.append("eps_list: every entry must be positive")
    if kind == "audit":
        if v["n_samples"] < 1:
            d.append("n_samples: must be >= 1")
        if not v["s_factors"] or any(not f > 0 for f in v["s_factors"]):
            d.append("s_factors: need at least one positive factor")
    if kind == "nonlinear" and not v["amplitude"] > 0:
        d.append("amplitude: must be positive")
    if kind == "delta-sweep":
        amps = v["amplitudes"]
        if not amps or any(not a > 0 for a in amps) or amps != sorted(amps):
            d.append("amplitudes: need positive values in ascending order")
        if v["bisections"] < 0:
            d.append("bisections: must be >= 0")
    if kind in ("nonlinear", "delta-sweep"):
        if not v["picard_tol"] > 0:
            d.append("picard_tol: must be positive")
        if v["picard_max_iter"] < 1:
            d.append("picard_max_iter: must be >= 1")
    if kind == "forward-check":
        if len(v["conv_grids"]) < 2 or any(n < 4 for n in v["conv_grids"]):
            d.append("conv_grids: need at least two grids with n >= 4")
        if len(v["conv_nts"]) < 2 or any(n < 4 for n in v["conv_nts"]):
            d.append("conv_nts: need at least two step counts >= 4")
    if any(not 0 <= f <= 1 for f in v["dump_times"]):
        d.append("dump_times: fractions must lie in [0, 1]")
    return d


def schema_doc() -> str:
    width = max(len(k) for k in SCHEMA)
    out = []
    for k, (_, default, doc) in SCHEMA.items():
        dflt = ",".join(map(str, default)) if isinstance(default, list) else default
        out.append(f"{k:<{width}}  {doc} (default: {dflt})")
    return "\n".join(out)
