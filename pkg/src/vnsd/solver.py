"""Time integration of the damped viscoelastic Navier-Stokes system.

    du/dt + (u.grad)u = lap u - grad p + div(F F^t)
    dF/dt + (u.grad)F = mu lap F + (grad u) F
    div u = 0,  div F^t = 0

Both Laplacians are integrated exactly by an integrating factor; the
nonlinear terms (and any forcing) use second-order Adams-Bashforth, with an
integrating-factor midpoint step to start.  Pressure is eliminated by Leray
projection and recovered on demand from its Poisson equation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import grid_fields as gf
from .grid_fields import Grid

log = logging.getLogger(__name__)

CFL_NUMBER = 0.5
COLUMN_REPROJECT_TOL = 1e-12

Forcing = Callable[[Grid, float], tuple]


class SolverError(RuntimeError):
    """A step was rejected (CFL violation or non-finite values)."""


class CFLError(SolverError):
    pass


class State:
    """Snapshot ``(t, u, F, p)`` with damping ``mu``.

    ``p`` is diagnostic: when not supplied it is computed from ``u``, ``F``
    and the momentum part of ``forcing`` (if any) through
    :func:`pressure_solve` on first access.
    """

    def __init__(self, grid: Grid, time: float, u: np.ndarray, F: np.ndarray, mu: float = 1.0,
                 p: Optional[np.ndarray] = None, stress_form: str = "column",
                 forcing: Optional["Forcing"] = None):
        if not mu > 0:
            raise ValueError("mu must be positive")
        u = np.asarray(u, dtype=float)
        F = np.asarray(F, dtype=float)
        if u.shape != (3,) + grid.points or F.shape != (3, 3) + grid.points:
            raise ValueError("u must be (3, *grid) and F (3, 3, *grid)")
        self.grid = grid
        self.time = float(time)
        self.u = u
        self.F = F
        self.mu = float(mu)
        self.stress_form = stress_form
        self.forcing = forcing
        self._p = None if p is None else np.asarray(p, dtype=float)

    @property
    def p(self) -> np.ndarray:
        if self._p is None:
            body = None if self.forcing is None else self.forcing(self.grid, self.time)[0]
            self._p = pressure_solve(self.grid, self.u, self.F, self.stress_form, body)
        return self._p

    def with_time(self, time: float) -> "State":
        p = self._p if self.forcing is None else None
        return State(self.grid, time, self.u, self.F, self.mu, p, self.stress_form, self.forcing)

    def __repr__(self) -> str:
        return f"State(t={self.time!r}, grid={self.grid.points}, mu={self.mu!r})"


def zero_state(grid: Grid, mu: float = 1.0, time: float = 0.0) -> State:
    return State(grid, time, np.zeros((3,) + grid.points), np.zeros((3, 3) + grid.points), mu)


def identity_tensor(grid: Grid) -> np.ndarray:
    F = np.zeros((3, 3) + grid.points)
    for i in range(3):
        F[i, i] = 1.0
    return F


# -- pressure ---------------------------------------------------------------

def _nonlinear_u(grid: Grid, u: np.ndarray, F: np.ndarray, stress_form: str) -> np.ndarray:
    """``(u.grad)u - div(F F^t)`` in physical space (dealiased)."""
    if stress_form == "column":
        stress = gf.elastic_stress_div(grid, F, check=False)
    elif stress_form == "tensor":
        stress = gf.tensor_stress_div(grid, F)
    else:
        raise ValueError(f"unknown stress form {stress_form!r}")
    return gf.convective_term(grid, u, u) - stress


def pressure_solve(grid: Grid, u: np.ndarray, F: np.ndarray, stress_form: str = "column",
                   body_force: Optional[np.ndarray] = None) -> np.ndarray:
    """Zero-mean periodic solution of ``-lap p = div[(u.grad)u - sum_k (F_k.grad)F_k - f]``.

    ``f`` is an optional momentum body force.
    """
    n = _nonlinear_u(grid, u, F, stress_form)
    if body_force is not None:
        n = n - body_force
    nh = gf.to_spectral(grid, n)
    div = gf.divergence_hat(grid, nh)
    k2 = grid.k2
    inv = np.divide(1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
    return gf.to_physical(grid, div * inv)


# -- energy budget ------------------------------------------------------------

@dataclass(frozen=True)
class EnergyBudget:
    time: float
    kinetic: float
    elastic: float
    diss_u: float
    diss_F: float
    step_residual: float = 0.0
    cumulative_residual: float = 0.0
    div_u_max: float = 0.0
    divFt_l2: float = 0.0

    def row(self) -> tuple:
        return (self.time, self.kinetic, self.elastic, self.diss_u, self.diss_F,
                self.cumulative_residual, self.div_u_max, self.divFt_l2)


def _spectral_integral(grid: Grid, fh: np.ndarray, weight=None) -> float:
    """``int |f|^2`` from rfft coefficients, optionally with a spectral weight."""
    a = fh.real**2 + fh.imag**2
    if weight is not None:
        a = a * weight
    return float(np.sum(grid.rfft_weights * a) * grid.volume / grid.size**2)


def state_energies(state: State) -> EnergyBudget:
    """Energies, dissipation rates and constraint measures of one state."""
    g = state.grid
    uh = gf.to_spectral(g, state.u)
    Fh = gf.to_spectral(g, state.F)
    kin = 0.5 * _spectral_integral(g, uh)
    ela = 0.5 * _spectral_integral(g, Fh)
    du = _spectral_integral(g, uh, g.k2)
    dF = state.mu * _spectral_integral(g, Fh, g.k2)
    div_u = gf.to_physical(g, gf.divergence_hat(g, uh))
    divFt_h = gf.divergence_hat(g, np.swapaxes(Fh, 0, 1))
    return EnergyBudget(
        time=state.time, kinetic=kin, elastic=ela, diss_u=du, diss_F=dF,
        div_u_max=float(np.max(np.abs(div_u))),
        divFt_l2=math.sqrt(_spectral_integral(g, divFt_h)),
    )


def _log_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise logarithmic mean, falling back to the arithmetic mean."""
    out = 0.5 * (a + b)
    ok = (a > 0) & (b > 0) & (np.abs(a - b) > 1e-12 * np.maximum(a, b))
    la, lb = np.log(a[ok]), np.log(b[ok])
    out[ok] = (a[ok] - b[ok]) / (la - lb)
    return out


def _dissipation_integral(grid: Grid, ah: np.ndarray, bh: np.ndarray, dt: float) -> float:
    """``dt``-integral of ``int |grad f|^2`` between two spectral states.

    Each wavevector's energy is taken to vary exponentially over the step, so
    viscous decay is integrated exactly and the rule stays second order.
    """
    axes = tuple(range(ah.ndim - 3))
    ea = np.sum(ah.real**2 + ah.imag**2, axis=axes)
    eb = np.sum(bh.real**2 + bh.imag**2, axis=axes)
    lm = _log_mean(ea, eb)
    return float(dt * np.sum(grid.rfft_weights * grid.k2 * lm) * grid.volume / grid.size**2)


def energy_budget(prev: State, next: State, cumulative: float = 0.0) -> EnergyBudget:
    """Budget row for ``next`` with the discrete energy-law residual of the step.

    The step residual is ``|Delta(kinetic + elastic) + int (diss_u + diss_F) dt|``.
    The dissipation integral uses a per-mode exponential rule.
    """
    a = state_energies(prev)
    b = state_energies(next)
    g = next.grid
    dt = next.time - prev.time
    diss = (_dissipation_integral(g, gf.to_spectral(g, prev.u), gf.to_spectral(g, next.u), dt)
            + next.mu * _dissipation_integral(g, gf.to_spectral(g, prev.F), gf.to_spectral(g, next.F), dt))
    res = abs((b.kinetic + b.elastic) - (a.kinetic + a.elastic) + diss)
    return replace(b, step_residual=res, cumulative_residual=cumulative + res)


# -- time stepping ------------------------------------------------------------

class Stepper:
    """Integrating-factor AB2 stepper that keeps its own nonlinear history.

    Feeding back the state returned by the previous call continues the AB2
    sequence; any other state restarts with a midpoint step.
    """

    def __init__(self, grid: Grid, dt: float, mu: float = 1.0, forcing: Optional[Forcing] = None,
                 project_columns: bool = True, dealias: bool = True, cfl: float = CFL_NUMBER):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.dt = float(dt)
        self.mu = float(mu)
        self.forcing = forcing
        self.project_columns = project_columns
        self.dealias = dealias
        self.cfl = cfl
        self.reprojections = 0
        self._mask = grid.dealias_mask if dealias else np.ones(grid.spectral_shape, dtype=bool)
        self._stress_form = "column" if project_columns else "tensor"
        k2 = grid.k2
        self._eu = np.exp(-k2 * self.dt)
        self._eu_half = np.exp(-k2 * self.dt / 2)
        self._eF = np.exp(-self.mu * k2 * self.dt)
        self._eF_half = np.exp(-self.mu * k2 * self.dt / 2)
        self._hmin = min(grid.spacing)
        self._prev = None   # (state produced last, N_u, N_F at that state)
        self._last = None   # (N_u, N_F) at the state before it

    def reset(self) -> None:
        self._prev = None
        self._last = None

    def _product(self, a: np.ndarray) -> np.ndarray:
        return gf.to_spectral(self.grid, a) * self._mask

    def rhs(self, uh: np.ndarray, Fh: np.ndarray, t: float):
        """Projected nonlinear + forcing tendencies in spectral space."""
        g = self.grid
        u = gf.to_physical(g, uh)
        F = gf.to_physical(g, Fh)
        gu = gf.to_physical(g, gf.gradient_hat(g, uh))        # [i, l]
        gF = gf.to_physical(g, gf.gradient_hat(g, Fh))        # [i, k, l]
        adv_u = np.einsum("lxyz,ilxyz->ixyz", u, gu)
        if self._stress_form == "column":
            stress_h = self._product(np.einsum("lkxyz,iklxyz->ixyz", F, gF))
        else:
            ffT = self._product(np.einsum("ikxyz,jkxyz->ijxyz", F, F))
            stress_h = gf.divergence_hat(g, ffT)
        adv_F = np.einsum("lxyz,iklxyz->ikxyz", u, gF)
        stretch = np.einsum("ilxyz,ljxyz->ijxyz", gu, F)
        Nu = stress_h - self._product(adv_u)
        NF = self._product(stretch - adv_F)
        if self.forcing is not None:
            fu, fF = self.forcing(g, t)
            Nu = Nu + self._product(np.broadcast_to(fu, (3,) + g.points))
            NF = NF + self._product(np.broadcast_to(fF, (3, 3) + g.points))
        return gf.leray_hat(g, Nu), NF

    def _check_cfl(self, state: State) -> None:
        umax = float(np.max(np.sqrt(np.sum(state.u**2, axis=0))))
        if umax > 0 and self.dt > self.cfl * self._hmin / umax * (1 + 1e-12):
            raise CFLError(
                f"dt={self.dt} exceeds CFL bound {self.cfl * self._hmin / umax:.6g} at t={state.time}"
            )

    def step(self, state: State, n_steps_taken: Optional[int] = None) -> State:
        if state.grid != self.grid:
            raise ValueError("state grid differs from stepper grid")
        if state.mu != self.mu:
            raise ValueError("state mu differs from stepper mu")
        self._check_cfl(state)
        g, dt = self.grid, self.dt
        uh = gf.to_spectral(g, state.u)
        Fh = gf.to_spectral(g, state.F)
        Nu, NF = self.rhs(uh, Fh, state.time)

        if self._prev is not None and self._prev[0] is state:
            Nu1, NF1 = self._prev[1], self._prev[2]
            uh_new = self._eu * (uh + 1.5 * dt * Nu) - 0.5 * dt * self._eu * self._eu * Nu1
            Fh_new = self._eF * (Fh + 1.5 * dt * NF) - 0.5 * dt * self._eF * self._eF * NF1
        else:
            uh_mid = self._eu_half * (uh + 0.5 * dt * Nu)
            Fh_mid = self._eF_half * (Fh + 0.5 * dt * NF)
            Nu_m, NF_m = self.rhs(uh_mid, Fh_mid, state.time + 0.5 * dt)
            uh_new = self._eu * uh + dt * self._eu_half * Nu_m
            Fh_new = self._eF * Fh + dt * self._eF_half * NF_m

        uh_new = gf.leray_hat(g, uh_new)
        if self.project_columns:
            Fh_new = self._maybe_reproject(Fh_new)
        u_new = gf.to_physical(g, uh_new)
        F_new = gf.to_physical(g, Fh_new)
        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(F_new))):
            raise SolverError(f"non-finite values after step from t={state.time}")
        if n_steps_taken is None:
            t_new = state.time + dt
        else:
            t_new = (n_steps_taken + 1) * dt
        new = State(g, t_new, u_new, F_new, self.mu, stress_form=self._stress_form, forcing=self.forcing)
        self._prev = (new, Nu, NF)
        return new

    def _maybe_reproject(self, Fh: np.ndarray) -> np.ndarray:
        g = self.grid
        cols = np.swapaxes(Fh, 0, 1)
        div = gf.to_physical(g, gf.divergence_hat(g, cols))
        F = gf.to_physical(g, Fh)
        worst = 0.0
        for j in range(3):
            scale = gf.rms(F[:, j]) * g.kmax
            if scale > 0:
                worst = max(worst, float(np.max(np.abs(div[j]))) / scale)
        if worst > COLUMN_REPROJECT_TOL:
            self.reprojections += 1
            log.info("re-projecting F columns (relative column divergence %.3e)", worst)
            return np.swapaxes(gf.leray_hat(g, cols), 0, 1)
        return Fh


def step(state: State, dt: float, forcing: Optional[Forcing] = None, project_columns: bool = True) -> State:
    """One self-starting (midpoint) step; use :class:`Stepper` for AB2 sequences."""
    return Stepper(state.grid, dt, state.mu, forcing, project_columns).step(state)


# -- initial conditions ---------------------------------------------------------

@dataclass(frozen=True)
class InitialSpec:
    kind: str = "taylor_green"
    slope: float = -5.0 / 3.0
    amplitude: float = 1.0
    kcut: Optional[float] = None


INITIAL_KINDS = ("taylor_green", "taylor_green_3d", "random_solenoidal",
                 "identity_plus_perturbation", "zero", "identity")
# run() also accepts "manufactured": the exact solution of a manufactured forcing at t = 0


def _child_seeds(seed, n: int):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(n)


def make_initial(spec, grid: Grid, seed=0, mu: float = 1.0) -> State:
    """Initial state for ``spec`` (an :class:`InitialSpec` or a kind name)."""
    if isinstance(spec, str):
        spec = InitialSpec(spec)
    X, Y, Z = grid.coords
    kx, ky, kz = (2 * np.pi / L for L in grid.periods)
    F = np.zeros((3, 3) + grid.points)
    if spec.kind == "taylor_green":
        u = np.stack(np.broadcast_arrays(
            np.sin(kx * X) * np.cos(ky * Y) + 0 * Z,
            -np.cos(kx * X) * np.sin(ky * Y) + 0 * Z,
            0 * X + 0 * Y + 0 * Z,
        )).astype(float) * spec.amplitude
    elif spec.kind == "taylor_green_3d":
        u = np.stack(np.broadcast_arrays(
            np.sin(kx * X) * np.cos(ky * Y) * np.cos(kz * Z),
            -np.cos(kx * X) * np.sin(ky * Y) * np.cos(kz * Z),
            0 * X + 0 * Y + 0 * Z,
        )).astype(float) * spec.amplitude
    elif spec.kind == "random_solenoidal":
        (s_u,) = _child_seeds(seed, 1)
        u = gf.random_solenoidal_field(grid, spec.slope, spec.amplitude, s_u, spec.kcut)
    elif spec.kind == "identity_plus_perturbation":
        seeds = _child_seeds(seed, 4)
        u = gf.random_solenoidal_field(grid, spec.slope, spec.amplitude, seeds[0], spec.kcut)
        F = identity_tensor(grid)
        for j in range(3):
            F[:, j] += gf.random_solenoidal_field(grid, spec.slope, spec.amplitude, seeds[j + 1], spec.kcut)
    elif spec.kind == "zero":
        u = np.zeros((3,) + grid.points)
    elif spec.kind == "identity":
        u = np.zeros((3,) + grid.points)
        F = identity_tensor(grid)
    else:
        raise ValueError(f"unknown initial condition {spec.kind!r}; expected one of {INITIAL_KINDS}")
    mask = grid.dealias_mask
    uh = gf.leray_hat(grid, gf.to_spectral(grid, u) * mask)
    Fh = np.swapaxes(gf.leray_hat(grid, np.swapaxes(gf.to_spectral(grid, F) * mask, 0, 1)), 0, 1)
    return State(grid, 0.0, gf.to_physical(grid, uh), gf.to_physical(grid, Fh), mu)


# -- runs -------------------------------------------------------------------------

@dataclass
class SolverConfig:
    points: tuple = (32, 32, 32)
    periods: tuple = (2 * math.pi, 2 * math.pi, 2 * math.pi)
    mu: float = 1.0
    dt: float = 1e-3
    steps: int = 100
    dealias: bool = True
    project_columns: bool = True
    initial: InitialSpec = field(default_factory=InitialSpec)
    forcing: Optional[Forcing] = None
    checkpoint_every: int = 0
    seed: int = 0

    @property
    def grid(self) -> Grid:
        return Grid(tuple(self.points), tuple(self.periods))


@dataclass
class Trajectory:
    final: State
    budgets: list
    checkpoints: list  # (step, State) or (step, Path) when written to disk
    reprojections: int = 0


def run(config: SolverConfig, out_dir=None, initial: Optional[State] = None,
        callback: Optional[Callable[[int, State], None]] = None) -> Trajectory:
    """Integrate ``config.steps`` steps, one :class:`EnergyBudget` row per step.

    Time after step n is ``n * dt`` (no accumulated rounding).  With
    ``out_dir`` set, checkpoints, ``timeseries.csv`` and a run manifest are
    written there.  A failing step writes ``failed.vnsd`` with the last good
    state before re-raising.
    """
    from . import persistence

    grid = config.grid
    if initial is not None:
        state = initial
    elif config.initial.kind == "manufactured":
        if not hasattr(config.forcing, "state"):
            raise ValueError("initial kind 'manufactured' needs a manufactured forcing")
        state = config.forcing.state(grid, 0.0)
    else:
        state = make_initial(config.initial, grid, config.seed, config.mu)
    stepper = Stepper(grid, config.dt, config.mu, config.forcing, config.project_columns, config.dealias)
    out = Path(out_dir) if out_dir is not None else None
    ts_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ts_path = out / "timeseries.csv"
        if ts_path.exists():
            ts_path.unlink()
        init_path = out / "ckpt_000000.vnsd"
        persistence.write_checkpoint(state, init_path)
        persistence.write_manifest(out / "manifest.txt", config, init_path)

    budgets = []
    checkpoints = [(0, out / "ckpt_000000.vnsd" if out is not None else state)]
    cumulative = 0.0
    t0 = state.time
    if callback is not None:
        callback(0, state)
    for n in range(config.steps):
        try:
            new = stepper.step(state)
        except SolverError:
            if out is not None:
                persistence.write_checkpoint(state, out / "failed.vnsd")
            raise
        new = new.with_time(t0 + (n + 1) * config.dt)
        stepper._prev = (new,) + stepper._prev[1:]
        b = energy_budget(state, new, cumulative)
        cumulative = b.cumulative_residual
        budgets.append(b)
        if ts_path is not None:
            persistence.append_timeseries(ts_path, b)
        state = new
        if callback is not None:
            callback(n + 1, state)
        if config.checkpoint_every and (n + 1) % config.checkpoint_every == 0:
            if out is not None:
                path = out / f"ckpt_{n + 1:06d}.vnsd"
                persistence.write_checkpoint(state, path)
                checkpoints.append((n + 1, path))
            else:
                checkpoints.append((n + 1, state))
    return Trajectory(state, budgets, checkpoints, stepper.reprojections)
