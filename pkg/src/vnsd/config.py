"""Plain-text ``key=value`` configuration with dotted section prefixes.

Example::

    # solver settings
    solver.points = 32,32,32
    solver.dt = 1e-3
    solver.steps = 200
    initial.kind = random_solenoidal
    initial.amplitude = 0.5
    scan.eps = 0.01
"""
from __future__ import annotations

import math
import re
from pathlib import Path

from .solver import InitialSpec, SolverConfig

SOLVER_KEYS = {"points", "periods", "mu", "dt", "steps", "dealias", "project_columns",
               "checkpoint_every", "seed", "forcing"}
INITIAL_KEYS = {"kind", "slope", "amplitude", "kcut"}


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        k = k.strip()
        if not k:
            raise ConfigError(f"line {n}: empty key")
        out[k] = v.strip()
    return out


def load_config(path) -> dict:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _float(v: str) -> float:
    """A float, also accepting multiples of pi such as ``2pi`` or ``0.5*pi``."""
    s = v.strip().lower()
    m = re.fullmatch(r"([-+0-9.e]*)\s*\*?\s*pi", s)
    try:
        if m:
            coef = m.group(1)
            return (float(coef) if coef not in ("", "+", "-") else float(coef + "1")) * math.pi
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"not a number: {v!r}") from exc


def floats(v: str) -> tuple:
    return tuple(_float(p) for p in v.replace(";", ",").split(",") if p.strip())


def ints(v: str) -> tuple:
    try:
        return tuple(int(p) for p in v.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"not a list of integers: {v!r}") from exc


def get(cfg: dict, key: str, default=None, kind=str):
    if key not in cfg:
        return default
    v = cfg[key]
    if kind is bool:
        return _bool(v)
    if kind is float:
        return _float(v)
    if kind is int:
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: not an integer: {v!r}") from exc
    return kind(v)


def solver_config(cfg: dict) -> SolverConfig:
    """Build a SolverConfig from ``solver.*``, ``initial.*`` keys."""
    unknown = [k for k in cfg if k.startswith("solver.") and k[7:] not in SOLVER_KEYS]
    unknown += [k for k in cfg if k.startswith("initial.") and k[8:] not in INITIAL_KEYS]
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    base = SolverConfig()
    points = ints(cfg["solver.points"]) if "solver.points" in cfg else base.points
    if len(points) == 1:
        points = points * 3
    periods = floats(cfg["solver.periods"]) if "solver.periods" in cfg else base.periods
    if len(periods) == 1:
        periods = periods * 3
    init = InitialSpec(
        kind=get(cfg, "initial.kind", "taylor_green"),
        slope=get(cfg, "initial.slope", -5.0 / 3.0, float),
        amplitude=get(cfg, "initial.amplitude", 1.0, float),
        kcut=get(cfg, "initial.kcut", None, float),
    )
    mu = get(cfg, "solver.mu", 1.0, float)
    forcing = None
    fname = get(cfg, "solver.forcing", "none")
    if fname != "none":
        from .manufactured import SOLUTIONS

        if fname not in SOLUTIONS:
            raise ConfigError(f"unknown forcing {fname!r}; expected none or one of {sorted(SOLUTIONS)}")
        forcing = SOLUTIONS[fname](mu)
    return SolverConfig(
        points=tuple(points), periods=tuple(periods), mu=mu,
        dt=get(cfg, "solver.dt", base.dt, float), steps=get(cfg, "solver.steps", base.steps, int),
        dealias=get(cfg, "solver.dealias", True, bool),
        project_columns=get(cfg, "solver.project_columns", True, bool),
        initial=init, forcing=forcing,
        checkpoint_every=get(cfg, "solver.checkpoint_every", 0, int),
        seed=get(cfg, "solver.seed", 0, int),
    )
