import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from vnsd import grid_fields as gf
from vnsd import persistence as ps
from vnsd.grid_fields import make_grid
from vnsd.solver import (
    CFLError, InitialSpec, SolverConfig, SolverError, State, Stepper, energy_budget,
    identity_tensor, make_initial, pressure_solve, run, state_energies, step, zero_state,
)


def _tg_pressure_symbolic():
    x, y = sp.symbols("x y")
    u = [sp.sin(x) * sp.cos(y), -sp.cos(x) * sp.sin(y)]
    X = (x, y)
    conv = [sum(u[j] * sp.diff(u[i], X[j]) for j in range(2)) for i in range(2)]
    source = -sum(sp.diff(conv[i], X[i]) for i in range(2))   # lap p = -div((u.grad)u)
    p = (sp.cos(2 * x) + sp.cos(2 * y)) / 4
    return sp.simplify(sp.diff(p, x, 2) + sp.diff(p, y, 2) - source), p


# -- pressure ---------------------------------------------------------------------

def test_pressure_trivial(grid16):
    z3 = np.zeros((3,) + grid16.points)
    z33 = np.zeros((3, 3) + grid16.points)
    assert np.all(pressure_solve(grid16, z3, z33) == 0)
    u = z3 + np.array([0.3, -1.0, 2.0])[:, None, None, None]
    F = identity_tensor(grid16) * 1.7
    assert np.max(np.abs(pressure_solve(grid16, u, F))) <= 1e-14


def test_taylor_green_pressure_symbolic_and_numeric():
    residual, p = _tg_pressure_symbolic()
    assert residual == 0
    g = make_grid((16, 16, 4))
    s = make_initial("taylor_green", g)
    X, Y, _ = g.coords
    assert np.max(np.abs(s.p - (np.cos(2 * X) + np.cos(2 * Y)) / 4)) <= 1e-10
    assert abs(np.mean(s.p)) <= 1e-12


# -- single steps -------------------------------------------------------------------

def test_zero_state_stays_zero(grid16):
    s = step(zero_state(grid16), 0.01)
    assert np.all(s.u == 0) and np.all(s.F == 0)


@settings(max_examples=15, deadline=None)
@given(mu=st.floats(0.01, 10.0), dt=st.floats(1e-4, 0.5))
def test_identity_is_fixed_point(mu, dt):
    g = make_grid((8, 8, 8))
    s = State(g, 0.0, np.zeros((3,) + g.points), identity_tensor(g), mu)
    st_ = Stepper(g, dt, mu)
    x = s
    for n in range(3):
        x = st_.step(x, n)
    assert np.max(np.abs(x.u)) <= 1e-13
    assert np.max(np.abs(x.F - s.F)) <= 3e-13


def test_taylor_green_short_decay():
    g = make_grid((16, 16, 4))
    s = make_initial("taylor_green", g)
    st_ = Stepper(g, 1e-3)
    x = s
    for n in range(100):
        x = st_.step(x, n)
    assert x.time == pytest.approx(0.1, abs=0)
    assert np.max(np.abs(x.u - s.u * math.exp(-2 * x.time))) <= 1e-10


def test_cfl_rejection(grid16):
    s = make_initial(InitialSpec("taylor_green", amplitude=10.0), grid16)
    with pytest.raises(CFLError, match="CFL"):
        Stepper(grid16, 0.1).step(s)


def test_stepper_restarts_on_foreign_state(grid16):
    s = make_initial(InitialSpec("random_solenoidal", amplitude=0.5, kcut=3), grid16, seed=1)
    a = Stepper(grid16, 1e-3)
    x1 = a.step(s)
    x2 = a.step(x1)              # AB2 continuation
    y2 = a.step(x1.with_time(x1.time))   # a copy restarts with the midpoint step
    assert not np.array_equal(x2.u, y2.u)
    assert np.max(np.abs(x2.u - y2.u)) <= 1e-6


def test_stepper_rejects_mismatch(grid16):
    s = zero_state(grid16, mu=2.0)
    with pytest.raises(ValueError, match="mu"):
        Stepper(grid16, 1e-3, mu=1.0).step(s)
    with pytest.raises(ValueError, match="grid"):
        Stepper(make_grid((8, 8, 8)), 1e-3, mu=2.0).step(s)


# -- energy budget ----------------------------------------------------------------------

def test_budget_zero_states(grid16):
    b = energy_budget(zero_state(grid16), zero_state(grid16, time=0.1))
    assert b.row()[1:] == (0.0,) * 7


@pytest.mark.parametrize("t", [0.0, 0.3])
def test_taylor_green_kinetic_closed_form(t):
    g = make_grid((16, 16, 16))
    s = make_initial("taylor_green", g)
    s = State(g, t, s.u * math.exp(-2 * t), s.F)
    e = state_energies(s)
    assert e.kinetic == pytest.approx(2 * math.pi**3 * math.exp(-4 * t), rel=1e-8)
    assert e.diss_u == pytest.approx(2 * 2 * 2 * math.pi**3 * math.exp(-4 * t), rel=1e-8)


def test_mu_doubling_doubles_elastic_dissipation(grid16):
    s = make_initial(InitialSpec("identity_plus_perturbation", amplitude=0.3), grid16, seed=2)
    a = state_energies(s)
    b = state_energies(State(grid16, 0.0, s.u, s.F, mu=2.0))
    assert b.diss_F == pytest.approx(2 * a.diss_F, rel=1e-14)
    assert b.diss_u == a.diss_u


def _decaying_run(grid, dt, T, amplitude=0.5, seed=3):
    x = make_initial(InitialSpec("identity_plus_perturbation", amplitude=amplitude, kcut=2.5), grid, seed=seed)
    st_ = Stepper(grid, dt)
    cum, totals = 0.0, [state_energies(x).kinetic + state_energies(x).elastic]
    for n in range(int(round(T / dt))):
        y = st_.step(x, n)
        b = energy_budget(x, y, cum)
        cum = b.cumulative_residual
        totals.append(b.kinetic + b.elastic)
        x = y
    return cum, np.array(totals)


def test_energy_monotone_and_second_order(grid16):
    r1, totals = _decaying_run(grid16, 2e-3, 0.2)
    r2, _ = _decaying_run(grid16, 1e-3, 0.2)
    assert np.all(np.diff(totals) <= 0)
    assert math.log2(r1 / r2) == pytest.approx(2.0, abs=0.2)


def test_seeded_column_divergence_does_not_grow(grid16):
    rng = np.random.default_rng(4)
    base = make_initial(InitialSpec("identity_plus_perturbation", amplitude=0.3, kcut=3), grid16, seed=4)
    F = base.F + 0.05 * gf.dealias(grid16, rng.standard_normal((3, 3) + grid16.points))
    x = State(grid16, 0.0, base.u, F)
    st_ = Stepper(grid16, 1e-3, project_columns=False)
    prev = state_energies(x).divFt_l2
    assert prev > 0
    for n in range(50):
        x = st_.step(x, n)
        cur = state_energies(x).divFt_l2
        assert cur <= prev + 1e-8
        prev = cur
    assert st_.reprojections == 0


# -- initial conditions ---------------------------------------------------------------

def test_initial_taylor_green(grid16):
    s = make_initial("taylor_green", grid16)
    assert gf.divergence_error(grid16, s.u) <= 1e-10
    assert np.all(s.F == 0)


def test_initial_random_is_deterministic(grid16):
    spec = InitialSpec("random_solenoidal", slope=-5 / 3)
    a = make_initial(spec, grid16, seed=42)
    b = make_initial(spec, grid16, seed=42)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.F, b.F)
    c = make_initial(spec, grid16, seed=43)
    assert not np.array_equal(a.u, c.u)


def test_identity_plus_perturbation_spectrum():
    g = make_grid((64, 64, 64))
    s = make_initial(InitialSpec("identity_plus_perturbation", slope=-5 / 3), g, seed=5)
    P = s.F - identity_tensor(g)
    k, E = gf.shell_spectrum(g, P)
    assert gf.fit_spectrum_slope(k, E, 2, gf.default_kcut(g) - 1) == pytest.approx(-5 / 3, abs=0.3)
    assert gf.column_divergence_error(g, s.F) <= 1e-10


def test_unknown_initial_kind(grid16):
    with pytest.raises(ValueError, match="unknown initial"):
        make_initial("vortex_ring", grid16)


# -- runs -------------------------------------------------------------------------------

def test_run_final_time_exact(tmp_path):
    cfg = SolverConfig(points=(8, 8, 8), dt=0.01, steps=10, initial=InitialSpec("taylor_green", amplitude=0.1),
                       checkpoint_every=5)
    tr = run(cfg, tmp_path)
    assert tr.final.time == 0.1
    assert [n for n, _ in tr.checkpoints] == [0, 5, 10]
    ref = ps.read_checkpoint(tmp_path / "ckpt_000010.vnsd")
    assert np.array_equal(ref.u, tr.final.u) and np.array_equal(ref.F, tr.final.F)
    assert ref.time == tr.final.time
    rows = ps.read_timeseries(tmp_path / "timeseries.csv")
    assert rows.shape == (10, 8)
    assert (tmp_path / "manifest.txt").exists()


def test_run_writes_failed_checkpoint(tmp_path):
    cfg = SolverConfig(points=(8, 8, 8), dt=0.5, steps=3, initial=InitialSpec("taylor_green", amplitude=2.0))
    with pytest.raises(SolverError):
        run(cfg, tmp_path)
    assert ps.read_checkpoint(tmp_path / "failed.vnsd").time == 0.0


def test_run_in_memory_matches_stepper():
    cfg = SolverConfig(points=(8, 8, 8), dt=1e-3, steps=20, initial=InitialSpec("random_solenoidal", kcut=2))
    tr = run(cfg)
    x = make_initial(cfg.initial, cfg.grid, cfg.seed)
    st_ = Stepper(cfg.grid, cfg.dt)
    for n in range(20):
        x = st_.step(x, n)
    assert np.array_equal(x.u, tr.final.u)
