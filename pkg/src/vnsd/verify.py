"""Built-in invariant suite behind ``vnsd verify``.

Each check is small (16^3 grids or smaller) and returns ``(ok, detail)``.
"""
from __future__ import annotations

import math
import traceback

import numpy as np

from . import diagnostics as dg
from . import grid_fields as gf
from . import persistence as ps
from .covering import hausdorff_premeasure
from .solver import InitialSpec, Stepper, energy_budget, identity_tensor, make_initial, State


def _leray():
    g = gf.make_grid((16, 16, 16))
    v = np.random.default_rng(1).standard_normal((3,) + g.points)
    pv = gf.leray_project(g, v)
    err = gf.l2_norm(g, gf.leray_project(g, pv) - pv) / gf.l2_norm(g, v)
    return err <= 1e-13 and gf.divergence_error(g, pv) <= 1e-10, f"idempotence {err:.2e}"


def _column_identity():
    g = gf.make_grid((16, 16, 16))
    s = make_initial(InitialSpec("identity_plus_perturbation", amplitude=0.5), g, seed=2)
    a = gf.elastic_stress_div(g, s.F)
    b = gf.tensor_stress_div(g, s.F)
    err = np.max(np.abs(a - b)) / np.max(np.abs(b))
    return err <= 1e-10, f"relative difference {err:.2e}"


def _tg_pressure():
    g = gf.make_grid((16, 16, 4))
    s = make_initial("taylor_green", g)
    X, Y, _ = g.coords
    err = np.max(np.abs(s.p - (np.cos(2 * X) + np.cos(2 * Y)) / 4))
    return err <= 1e-10, f"max error {err:.2e}"


def _tg_decay():
    g = gf.make_grid((16, 16, 4))
    s = make_initial("taylor_green", g)
    st = Stepper(g, 1e-3)
    x = s
    for n in range(100):
        x = st.step(x, n)
    err = np.max(np.abs(x.u - s.u * math.exp(-2 * x.time)))
    return err <= 1e-8, f"max error {err:.2e} at t={x.time!r}"


def _fixed_point():
    g = gf.make_grid((8, 8, 8))
    s = State(g, 0.0, np.zeros((3,) + g.points), identity_tensor(g), mu=0.7)
    x = Stepper(g, 0.05, mu=0.7).step(s)
    err = max(np.max(np.abs(x.u)), np.max(np.abs(x.F - s.F)))
    return err <= 1e-13, f"drift {err:.2e}"


def _energy_law():
    g = gf.make_grid((16, 16, 16))
    x = make_initial(InitialSpec("identity_plus_perturbation", amplitude=0.2), g, seed=3)
    st = Stepper(g, 1e-3)
    cum = 0.0
    for n in range(50):
        y = st.step(x, n)
        cum = energy_budget(x, y, cum).cumulative_residual
        x = y
    return cum <= 1e-5, f"cumulative residual {cum:.2e} over 50 steps"


def _checkpoint():
    g = gf.make_grid((8, 8, 8))
    s = make_initial(InitialSpec("identity_plus_perturbation", amplitude=0.3), g, seed=4)
    data = ps.checkpoint_bytes(s)
    r = ps.state_from_bytes(data)
    same = ps.checkpoint_bytes(r) == data and len(data) == ps.checkpoint_size(g.points)
    kinds = []
    for bad in (b"X" + data[1:], data[:-10],
                data[:200] + bytes([data[200] ^ 1]) + data[201:]):
        try:
            ps.state_from_bytes(bad)
            kinds.append(None)
        except ps.CheckpointError as exc:
            kinds.append(type(exc))
    ok = same and kinds == [ps.BadMagicError, ps.TruncatedCheckpointError, ps.CRCMismatchError]
    return ok, f"roundtrip {'bitwise' if same else 'MISMATCH'}, corruption classes {[k.__name__ if k else None for k in kinds]}"


def _iteration():
    theta, beta, M, c1, eps1 = 0.25, 1.0 / 3.0, 1.0, 1.0, 1.0
    gate, eps2 = dg.iteration_constants(theta, beta, M, c1, eps1)
    q = theta ** (1.0 / 3.0 - beta / 2.0)
    ref = (1.0 - q) * min(0.5 * eps1, theta ** (5.0 / 3.0) * (1.0 - theta**beta) * M / 2.0)
    return eps2 == ref and gate == (c1 * q <= 1.0), f"eps2 = {eps2!r}"


def _covering():
    seg = np.zeros((1001, 4))
    seg[:, 1] = np.linspace(0.0, 1.0, 1001)
    pm = [hausdorff_premeasure(seg, d).premeasure for d in (0.1, 0.05, 0.025)]
    one = hausdorff_premeasure([[0.0, 0.0, 0.0, 0.0]], 0.1).premeasure
    ok = one == 0.1 and all(abs(p - 0.5) <= 0.05 for p in pm)
    return ok, f"point {one!r}, segment {pm}"


def _scaling():
    g = gf.make_grid((16, 16, 16))
    s = make_initial(InitialSpec("identity_plus_perturbation", amplitude=0.3), g, seed=5)
    win = dg.SpaceTimeWindow.frozen_fields(g, s.u, s.F)
    x0 = tuple(4 * h for h in g.spacing)
    rw = dg.rescale(win, x0, 0.0, 0.5)
    a = dg.quantity_Ebar(rw, dg.ParabolicCylinder((0, 0, 0), 0.0, 1.0))
    b = 0.5 * dg.quantity_Ebar(win, dg.ParabolicCylinder(x0, 0.0, 0.5))
    err = abs(a - b) / b
    return err <= 1e-8, f"relative difference {err:.2e}"


def _constant_field():
    g = gf.make_grid((16, 16, 16))
    u = np.zeros((3,) + g.points)
    u[0] = 1.0
    win = dg.SpaceTimeWindow.frozen_fields(g, u, p=0.0)
    r = 0.5
    q = dg.ckn_ABCD(win, dg.ParabolicCylinder((1.0, 1.0, 1.0), 0.0, r))
    vol = 4.0 / 3.0 * math.pi * r**3
    err = max(abs(q.A - vol / r) / (vol / r), abs(q.C - vol) / vol, q.B, q.D)
    return err <= 1e-8, f"max deviation {err:.2e}"


CHECKS = [
    ("leray_idempotent", _leray),
    ("column_stress_identity", _column_identity),
    ("taylor_green_pressure", _tg_pressure),
    ("taylor_green_decay", _tg_decay),
    ("identity_fixed_point", _fixed_point),
    ("energy_law", _energy_law),
    ("checkpoint_roundtrip", _checkpoint),
    ("iteration_constants", _iteration),
    ("covering_oracles", _covering),
    ("rescale_identity", _scaling),
    ("constant_field_quantities", _constant_field),
]


def run_suite() -> list:
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception:
            ok, detail = False, traceback.format_exc(limit=1).strip().splitlines()[-1]
        out.append((name, bool(ok), detail))
    return out
