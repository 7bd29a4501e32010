import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vnsd import diagnostics as dg
from vnsd.diagnostics import ParabolicCylinder as Cyl
from vnsd.diagnostics import SpaceTimeWindow
from vnsd.grid_fields import make_grid
from vnsd.manufactured import coupled_trig_solution
from vnsd.quadrature import RTOL, ball_volume
from vnsd.solver import InitialSpec, State, Stepper, make_initial, zero_state

from conftest import mollified_B_oracle, mollified_profile, trig_field


def _smooth_window(points=(16, 16, 16), dt=1e-3, steps=40, amplitude=0.5, kind="taylor_green_3d", seed=0):
    g = make_grid(points)
    x = make_initial(InitialSpec(kind, amplitude=amplitude, kcut=3), g, seed=seed)
    st_ = Stepper(g, dt)
    w = SpaceTimeWindow(g)
    w.record(x)
    for n in range(steps):
        x = st_.step(x, n)
        w.record(x)
    return w


def _constant_window(grid, c=1.0):
    u = np.zeros((3,) + grid.points)
    u[0] = c
    return SpaceTimeWindow.frozen_fields(grid, u, p=0.0)


def _linear_window(L=100.0, n=8):
    # u = (y - L/2, 0, 0) to first order: a long-wavelength shear on a large box
    g = make_grid((n, n, n), (L, L, L))
    X, Y, Z = g.coords
    u = np.zeros((3,) + g.points)
    u[0] = L / (2 * math.pi) * np.sin(2 * math.pi * (Y - L / 2) / L) + 0 * X + 0 * Z
    return SpaceTimeWindow.frozen_fields(g, u), (L / 2, L / 2, L / 2)


# -- window bookkeeping -------------------------------------------------------------

def test_record_basics(grid16):
    w = SpaceTimeWindow(grid16, retention=1.0)
    w.record(zero_state(grid16))
    assert len(w) == 1
    for t in (0.5, 1.0, 1.5):
        w.record(zero_state(grid16, time=t))
    assert w.span == (0.5, 1.5)
    with pytest.raises(ValueError, match="misordered"):
        w.record(zero_state(grid16, time=1.2))
    with pytest.raises(ValueError, match="non-uniform"):
        w.record(zero_state(grid16, time=2.2))


def test_frozen_window_rejects_record(grid16):
    w = _constant_window(grid16)
    with pytest.raises(dg.WindowError):
        w.record(zero_state(grid16))


def test_cylinder_outside_window():
    w = _smooth_window(steps=10)
    with pytest.raises(dg.WindowError, match="outside window"):
        dg.ckn_ABCD(w, Cyl((1, 1, 1), 0.005, 0.2))
    with pytest.raises(dg.WindowError, match="r\\^2/8"):
        dg.ckn_ABCD(w, Cyl((1, 1, 1), 0.005, 0.05))


# -- A, B, C, D -----------------------------------------------------------------------

def test_constant_field_closed_forms(grid16):
    r = 0.5
    q = dg.ckn_ABCD(_constant_window(grid16), Cyl((1.0, 1.0, 1.0), 0.0, r))
    assert q.A == pytest.approx(4 / 3 * math.pi * 0.25, rel=1e-12)
    assert q.B == 0.0 or abs(q.B) <= 1e-20
    assert q.C == pytest.approx(4 / 3 * math.pi * r**3, rel=1e-12)
    assert q.D == 0.0
    assert q.script_E == q.A**1.5 + q.D**2


def test_zero_fields(grid16):
    w = SpaceTimeWindow.frozen_fields(grid16, np.zeros((3,) + grid16.points))
    q = dg.ckn_quantities(w, Cyl((0, 0, 0), 0.0, 0.4))
    assert (q.A, q.B, q.C, q.D, q.E, q.Ebar) == (0.0,) * 6


def test_B_scales_like_r4_frozen(grid16):
    s = make_initial(InitialSpec("taylor_green_3d"), grid16)
    w = SpaceTimeWindow.frozen_fields(grid16, s.u)
    radii = (0.4, 0.2, 0.1, 0.05)
    B = [dg.ckn_B(w, Cyl((0.7, 0.3, 1.1), 0.0, r)) for r in radii]
    slope = np.polyfit(np.log(radii), np.log(B), 1)[0]
    assert slope == pytest.approx(4.0, abs=0.3)


def test_alpha_scaling_laws():
    w = _smooth_window(steps=40, kind="identity_plus_perturbation", amplitude=0.3)
    cyl = Cyl((1.0, 2.0, 3.0), 0.02, 0.2)
    a = dg.ckn_ABCD(w, cyl)
    b = dg.ckn_ABCD(dg.scale_fields(w, 2.0), cyl)
    assert b.A == pytest.approx(4 * a.A, rel=1e-12)
    assert b.B == pytest.approx(4 * a.B, rel=1e-12)
    assert b.C == pytest.approx(8 * a.C, rel=1e-12)
    assert b.D == pytest.approx(8 * a.D, rel=1e-12)
    for centred in (True, False):
        t1 = dg.excess_terms(w, cyl, centred)
        t2 = dg.excess_terms(dg.scale_fields(w, 2.0), cyl, centred)
        assert t2[0] == pytest.approx(2 * t1[0], rel=1e-12)
        assert t2[1] == pytest.approx(4 * t1[1], rel=1e-12)
        assert t2[2] == pytest.approx(2 * t1[2], rel=1e-12)


# -- E and Ebar -----------------------------------------------------------------------

def test_E_of_constants_is_zero(grid16):
    u = np.zeros((3,) + grid16.points) + np.array([0.5, -1.0, 2.0])[:, None, None, None]
    F = np.zeros((3, 3) + grid16.points) + 1.3
    w = SpaceTimeWindow.frozen_fields(grid16, u, F, p=0.7)
    assert dg.quantity_E(w, Cyl((1, 2, 3), 0.0, 0.5)) <= 1e-12


def test_Ebar_of_constant_velocity(grid16):
    assert dg.quantity_Ebar(_constant_window(grid16, -2.5), Cyl((1, 2, 3), 0.0, 0.5)) == pytest.approx(2.5, rel=1e-12)


def test_linear_field_E_ratio():
    w, c = _linear_window()
    ratio = dg.quantity_E(w, Cyl(c, 0.0, 0.25)) / dg.quantity_E(w, Cyl(c, 0.0, 0.5))
    assert ratio == pytest.approx(0.5, abs=1e-3)


def test_rescale_identities():
    w = _smooth_window(steps=40, kind="identity_plus_perturbation", amplitude=0.3)
    g = w.grid
    x0 = tuple(3 * h for h in g.spacing)
    t0 = w.times[20]
    lam = 0.5
    rw = dg.rescale(w, x0, t0, lam)
    R = 0.4
    small = Cyl(x0, t0, lam * R)
    big = Cyl((0, 0, 0), 0.0, R)
    assert dg.quantity_Ebar(rw, big) == pytest.approx(lam * dg.quantity_Ebar(w, small), rel=1e-8)
    assert dg.quantity_E(rw, big) == pytest.approx(lam * dg.quantity_E(w, small), rel=1e-8)


def test_rescale_identity_map_and_nested_lookup():
    w = _smooth_window(steps=8)
    same = dg.rescale(w, (0, 0, 0), 0.0, 1.0)
    for a, b in zip(w.snapshots, same.snapshots):
        assert np.array_equal(a.u, b.u) and np.array_equal(a.p, b.p) and a.time == b.time
    g = w.grid
    x0 = tuple(2 * h for h in g.spacing)
    rw = dg.rescale(w, x0, w.times[4], 0.5)
    s, r = w.snapshots[2], rw.snapshots[2]
    assert np.array_equal(r.u, 0.5 * np.roll(s.u, (-2, -2, -2), axis=(1, 2, 3)))
    assert np.array_equal(r.p, 0.25 * np.roll(s.p, (-2, -2, -2), axis=(0, 1, 2)))


def test_rescaled_residual_is_comparable():
    w = _smooth_window(steps=10)
    rw = dg.rescale(w, tuple(h for h in w.grid.spacing), w.times[5], 0.5)
    assert dg.pde_residual(rw) <= 10 * dg.pde_residual(w)


def test_forced_residual_small():
    sol = coupled_trig_solution()
    g = make_grid((16, 16, 16))
    x = sol.state(g, 0.0)
    st_ = Stepper(g, 1e-3, forcing=sol)
    w = SpaceTimeWindow(g)
    w.record(x)
    for n in range(4):
        x = st_.step(x, n)
        w.record(x)
    assert dg.pde_residual(w, forcing=sol) <= 1e-5


# -- criterion scan ---------------------------------------------------------------------

def test_scan_zero_fields(grid16):
    w = SpaceTimeWindow.frozen_fields(grid16, np.zeros((3,) + grid16.points))
    rep = dg.criterion_scan(w, [(1, 1, 1, 0), (2, 2, 2, 0)], (0.4, 0.2, 0.1), 1e-2)
    assert rep.flag_count == 0 and np.all(rep.B == 0)


def test_scan_smooth_no_flags():
    w = _smooth_window(dt=3e-4, steps=160)
    t = w.times[80]
    rep = dg.criterion_scan(w, [(0.7, 0.3, 1.1, t), (2.0, 4.0, 5.0, t)], (0.2, 0.1, 0.05), 1e-2)
    assert rep.flag_count == 0
    assert np.all(np.diff(rep.B, axis=1) < 0)


def test_scan_rejects_non_dyadic(grid16):
    with pytest.raises(ValueError, match="dyadic"):
        dg.criterion_scan(_constant_window(grid16), [(0, 0, 0, 0)], (0.4, 0.3), 1e-2)


@settings(max_examples=8, deadline=None)
@given(shift=st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3)), seed=st.integers(0, 1000))
def test_scan_translation_invariance(shift, seed):
    g = make_grid((16, 16, 16))
    u = trig_field(g, (3,), seed=seed)
    w1 = SpaceTimeWindow.frozen_fields(g, u, p=0.0)
    w2 = SpaceTimeWindow.frozen_fields(g, np.roll(u, shift, axis=(1, 2, 3)), p=0.0)
    c = (1.0, 2.0, 3.0)
    c2 = tuple(ci + si * h for ci, si, h in zip(c, shift, g.spacing))
    radii = (0.8, 0.4)
    r1 = dg.criterion_scan(w1, [c + (0.0,)], radii, 5.0, m=1)
    r2 = dg.criterion_scan(w2, [c2 + (0.0,)], radii, 5.0, m=1)
    assert np.allclose(r1.B, r2.B, rtol=1e-10, atol=0)
    assert np.array_equal(r1.flags, r2.flags)


def test_mollified_profile_matches_radial_oracle_and_flags():
    g = make_grid((64, 64, 64))
    for eta in (0.4, 0.2):
        u, c = mollified_profile(g, eta)
        w = SpaceTimeWindow.frozen_fields(g, u, p=0.0)
        radii = (2 * eta, eta, eta / 2)
        rep = dg.criterion_scan(w, [c + (0.0,)], radii, 1.0, m=3)
        oracle = [mollified_B_oracle(r, eta) for r in radii]
        assert np.allclose(rep.B[0], oracle, rtol=RTOL)
        assert rep.flag_count == 1
        plateau = max(oracle)
        assert dg.criterion_scan(w, [c + (0.0,)], radii, plateau * (1 - RTOL)).flag_count == 1
        assert dg.criterion_scan(w, [c + (0.0,)], radii, plateau * (1 + RTOL)).flag_count == 0


# -- local energy ----------------------------------------------------------------------

def test_local_energy_trivial(grid16):
    w = SpaceTimeWindow(grid16)
    for t in (0.0, 0.1, 0.2):
        w.record(zero_state(grid16, time=t))
    assert dg.local_energy_check(w, dg.BumpSpec((1, 1, 1), math.pi / 2)) == 0.0
    w2 = _smooth_window(steps=10)
    assert dg.local_energy_check(w2, dg.BumpSpec((1, 1, 1), math.pi / 2, amplitude=0.0)) == 0.0


def test_local_energy_forced_convergence():
    sol = coupled_trig_solution()
    g = make_grid((32, 32, 32))
    spec = dg.BumpSpec((1.0, 2.0, 3.0), 2 * math.pi / 4)
    res = []
    for dt in (0.02, 0.01, 0.005):
        x = sol.state(g, 0.0)
        st_ = Stepper(g, dt, forcing=sol)
        w = SpaceTimeWindow(g)
        w.record(x)
        for n in range(int(round(0.2 / dt))):
            x = st_.step(x, n)
            w.record(x)
        res.append(abs(dg.local_energy_check(w, spec, forcing=sol)))
    scale = 0.5 * float(np.sum(x.u**2) + np.sum(x.F**2)) * g.cell_volume
    assert max(res) <= 1e-3 * scale
    assert math.log2(res[0] / res[1]) >= 1.8
    assert math.log2(res[1] / res[2]) >= 1.8


# -- Serrin norm ------------------------------------------------------------------------

def test_serrin(grid16):
    w = SpaceTimeWindow.frozen_fields(grid16, np.zeros((3,) + grid16.points))
    assert dg.serrin_norm(w, 5, 10) == 0.0
    c = 1.7
    ball = ((1.0, 2.0, 3.0), 0.8)
    val = dg.serrin_norm(_constant_window(grid16, c), 5, 10, ball=ball)
    assert val == pytest.approx(c * ball_volume(0.8) ** (1 / 5) * 1.0 ** (1 / 10), rel=1e-12)
    with pytest.raises(ValueError, match="3/s"):
        dg.serrin_norm(w, 3, 3)


def test_serrin_time_dependent():
    w = _smooth_window(steps=20)
    g = w.grid
    vals = []
    for s in w.snapshots:
        dens = np.sum(s.u**2, axis=0) ** 2.5 + np.abs(s.p) ** 2.5 + np.sum(s.F**2, axis=(0, 1)) ** 2.5
        vals.append((np.sum(dens) * g.cell_volume) ** 2)
    expect = np.sum((np.array(vals[1:]) + np.array(vals[:-1])) / 2 * np.diff(w.times)) ** 0.1
    assert dg.serrin_norm(w, 5, 10) == pytest.approx(expect, rel=1e-12)


# -- decay report -------------------------------------------------------------------------

def test_decay_constant_undefined(grid16):
    rec = dg.decay_report(_constant_window(grid16), (1, 1, 1), 0.0, 0.5, 0.25)
    assert rec.ratio is None and rec.ratio_text == "undefined"


@pytest.mark.parametrize("theta", [0.25, 0.125])
def test_decay_linear_profile(theta):
    w, c = _linear_window()
    rec = dg.decay_report(w, c, 0.0, 0.5, theta)
    assert rec.ratio == pytest.approx(theta ** (1 / 3), rel=1e-3)


def test_decay_monotone_on_smooth_run():
    w = _smooth_window(dt=3e-4, steps=600)
    t = w.times[300]
    a = dg.decay_report(w, (0.7, 0.3, 1.1), t, 0.4, 0.25)
    b = dg.decay_report(w, (0.7, 0.3, 1.1), t, 0.4, 0.125)
    assert b.E_theta_r < a.E_theta_r


# -- iteration constants --------------------------------------------------------------------

def _eps2_oracle(theta, beta, M, c1, eps1):
    e = 1.0 / 3.0 - beta / 2.0
    q = theta**e
    return c1 * q <= 1.0, (1.0 - q) * min(0.5 * eps1, theta ** (5.0 / 3.0) * (1.0 - theta**beta) * M / 2.0)


def test_iteration_constants_cases():
    assert dg.iteration_constants(0.25, 1 / 3, 1, 1, 1) == _eps2_oracle(0.25, 1 / 3, 1, 1, 1)
    gate, eps2 = dg.iteration_constants(0.25, 0.1, 1.0, 5.0, 1.0)
    assert gate is False and eps2 > 0
    near = dg.iteration_constants(0.25, 2 / 3 - 1e-12, 1.0, 1.0, 1.0)[1]
    assert 0 <= near <= 1e-11
    with pytest.raises(ValueError):
        dg.iteration_constants(0.5, 0.3, 1, 1, 1)


@settings(max_examples=200, deadline=None)
@given(theta=st.floats(1e-6, 0.5, exclude_max=True), beta=st.floats(1e-6, 2 / 3, exclude_max=True),
       M=st.floats(1e-6, 1e6), c1=st.floats(1e-6, 1e6), eps1=st.floats(1e-6, 1e6))
def test_iteration_constants_property(theta, beta, M, c1, eps1):
    assert dg.iteration_constants(theta, beta, M, c1, eps1) == _eps2_oracle(theta, beta, M, c1, eps1)


def test_ckn_csv(tmp_path, grid16):
    q = dg.ckn_quantities(_constant_window(grid16), Cyl((1, 1, 1), 0.0, 0.5))
    path = tmp_path / "ckn.csv"
    dg.write_ckn_csv(path, [q])
    head, row = path.read_text().splitlines()
    assert head == ",".join(dg.CKN_COLUMNS)
    assert float(row.split(",")[-1]) == q.script_E
