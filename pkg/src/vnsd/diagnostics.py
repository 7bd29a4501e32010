"""Local regularity quantities on parabolic cylinders.

A :class:`SpaceTimeWindow` holds uniformly spaced snapshots ``(t, u, F, p)``.
Cylinder integrals ``int_{t-r^2/2}^{t+r^2/2} int_{B_r(x)} ...`` combine the
ball quadrature of :mod:`vnsd.quadrature` in space with the exact integral of
the piecewise-linear interpolant between snapshots in time.  A *frozen*
window holds a single time-independent snapshot, for which every time
integral is the slice value times ``r**2``.

Scaled quantities on ``Q_r(x, t)``, with ``|F|`` the Frobenius norm:

    A    = max over slices of (1/r)   int_B |u|^2 + |F|^2
    B    = (1/r)   iint |grad u|^2 + |grad F|^2
    C    = (1/r^2) iint |u|^3 + |F|^3
    D    = (1/r^2) iint |p|^{3/2}
    E    = avg|u - u_Q|^3 ^(1/3) + r avg|p - p_B(s)|^{3/2} ^(2/3) + avg|F - F_Q|^3 ^(1/3)
    Ebar = avg|u|^3 ^(1/3)       + r avg|p|^{3/2} ^(2/3)          + avg|F|^3 ^(1/3)

where averages are over the cylinder (volume ``|B_r| r^2``) and ``p_B(s)``
is the ball mean of ``p`` on each time slice.
"""
from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from . import grid_fields as gf
from .grid_fields import AXES, Grid
from .quadrature import ball_lattice, ball_volume
from .solver import State, pressure_solve

TIME_TOL = 1e-12
SAMPLE_CACHE_BYTES = 256 * 2**20


class WindowError(ValueError):
    """A cylinder or operation does not fit inside the window."""


@dataclass(frozen=True, eq=False)
class Snapshot:
    time: float
    u: np.ndarray
    F: np.ndarray
    p: np.ndarray


@dataclass(frozen=True)
class ParabolicCylinder:
    center: tuple
    time: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("cylinder radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def interval(self) -> tuple:
        h = 0.5 * self.radius**2
        return (self.time - h, self.time + h)

    @property
    def volume(self) -> float:
        return ball_volume(self.radius) * self.radius**2


@dataclass(frozen=True)
class CknQuantities:
    cylinder: ParabolicCylinder
    A: float
    B: float
    C: float
    D: float
    E: float = math.nan
    Ebar: float = math.nan

    @property
    def script_E(self) -> float:
        return self.A**1.5 + self.D**2

    def row(self) -> dict:
        c = self.cylinder
        return {"x": c.center[0], "y": c.center[1], "z": c.center[2], "t": c.time, "r": c.radius,
                "A": self.A, "B": self.B, "C": self.C, "D": self.D, "E": self.E,
                "Ebar": self.Ebar, "script_E": self.script_E}


class SpaceTimeWindow:
    """Uniformly spaced snapshots on one grid, oldest first.

    ``retention`` bounds the time span kept by :meth:`record`; older
    snapshots are evicted.  ``dt_snap`` is fixed by the first two snapshots
    unless given.
    """

    def __init__(self, grid: Grid, mu: float = 1.0, dt_snap: Optional[float] = None,
                 retention: Optional[float] = None, frozen: bool = False):
        self.grid = grid
        self.mu = float(mu)
        self.dt_snap = dt_snap
        self.retention = retention
        self.frozen = frozen
        self.snapshots: list[Snapshot] = []
        self._cache: OrderedDict = OrderedDict()
        self._cache_bytes = 0
        self._ckn: dict = {}

    # -- construction ------------------------------------------------------

    @classmethod
    def from_states(cls, states: Sequence[State], retention: Optional[float] = None) -> "SpaceTimeWindow":
        if not states:
            raise ValueError("need at least one state")
        w = cls(states[0].grid, states[0].mu, retention=retention)
        for s in states:
            w.record(s)
        return w

    @classmethod
    def frozen_fields(cls, grid: Grid, u, F=None, p=None, mu: float = 1.0, time: float = 0.0) -> "SpaceTimeWindow":
        """Time-independent window: the fields hold for every time."""
        u = np.asarray(u, dtype=float)
        F = np.zeros((3, 3) + grid.points) if F is None else np.asarray(F, dtype=float)
        p = pressure_solve(grid, u, F) if p is None else np.broadcast_to(np.asarray(p, dtype=float), grid.points)
        w = cls(grid, mu, frozen=True)
        w.snapshots.append(Snapshot(float(time), u, F, np.asarray(p)))
        return w

    def record(self, state: State) -> "SpaceTimeWindow":
        if self.frozen:
            raise WindowError("cannot record into a frozen window")
        if state.grid != self.grid:
            raise ValueError("state grid differs from window grid")
        t = float(state.time)
        if self.snapshots:
            last = self.snapshots[-1].time
            if not t > last:
                raise ValueError(f"misordered time: {t} after {last}")
            gap = t - last
            if self.dt_snap is None:
                self.dt_snap = gap
            elif abs(gap - self.dt_snap) > TIME_TOL * self.dt_snap + 8 * np.finfo(float).eps * abs(t):
                raise ValueError(f"non-uniform time spacing: gap {gap} vs dt_snap {self.dt_snap}")
        self.snapshots.append(Snapshot(t, state.u, state.F, state.p))
        self._ckn.clear()
        if self.retention is not None:
            while self.snapshots[-1].time - self.snapshots[0].time > self.retention * (1 + TIME_TOL):
                self._evict(self.snapshots.pop(0))
        return self

    def _evict(self, snap: Snapshot) -> None:
        for key in [k for k in self._cache if k[0] is snap]:
            self._cache_bytes -= self._cache.pop(key).nbytes

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def span(self) -> tuple:
        if not self.snapshots:
            raise WindowError("empty window")
        return (self.snapshots[0].time, self.snapshots[-1].time)

    def __len__(self) -> int:
        return len(self.snapshots)

    # -- sampling ------------------------------------------------------------

    def _samples(self, snap: Snapshot, lat) -> np.ndarray:
        """``(49, n)`` node values: u (3), F (9), p (1), grad u (9), grad F (27)."""
        key = (snap, lat)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        g = self.grid
        base = np.concatenate([snap.u, snap.F.reshape((9,) + g.points), snap.p[None]])
        if lat.exact:
            gu = gf.gradient(g, snap.u).reshape((9,) + g.points)
            gF = gf.gradient(g, snap.F).reshape((27,) + g.points)
            vals = lat.sample(np.concatenate([base, gu, gF]))
        else:
            coef = gf.to_spectral(g, base) / g.size
            kd = g.kd
            grads = np.stack([1j * k * coef[:12] for k in kd], axis=1)  # (12, 3, ...)
            vals = lat.sample_rfft(np.concatenate([coef, grads.reshape((36,) + g.spectral_shape)]))
        self._cache[key] = vals
        self._cache_bytes += vals.nbytes
        while self._cache_bytes > SAMPLE_CACHE_BYTES and len(self._cache) > 1:
            self._cache_bytes -= self._cache.popitem(last=False)[1].nbytes
        return vals

    def _slices(self, cyl: ParabolicCylinder, min_slice_check: bool = True):
        """Snapshots touching the cylinder, their time weights and the A-slices."""
        if not self.snapshots:
            raise WindowError("empty window")
        if 2 * cyl.radius >= min(self.grid.periods):
            raise WindowError(f"cylinder radius {cyl.radius} too large for the box")
        r2 = cyl.radius**2
        if self.frozen:
            s = self.snapshots[0]
            return [s], np.array([r2]), [s]
        a, b = cyl.interval
        t0, t1 = self.span
        tol = TIME_TOL * max(1.0, abs(t0), abs(t1))
        if a < t0 - tol or b > t1 + tol:
            raise WindowError(f"cylinder time interval [{a}, {b}] outside window [{t0}, {t1}]")
        if min_slice_check and self.dt_snap is not None and self.dt_snap > r2 / 8 * (1 + 1e-9):
            raise WindowError(f"snapshot spacing {self.dt_snap} exceeds r^2/8 = {r2 / 8} for r = {cyl.radius}")
        a, b = max(a, t0), min(b, t1)
        times = self.times
        w = np.zeros(len(times))
        for k in range(len(times) - 1):
            lo, hi = max(a, times[k]), min(b, times[k + 1])
            if hi <= lo:
                continue
            dt = times[k + 1] - times[k]
            # integral of the two hat functions over [lo, hi]
            w[k] += ((times[k + 1] - lo) ** 2 - (times[k + 1] - hi) ** 2) / (2 * dt)
            w[k + 1] += ((hi - times[k]) ** 2 - (lo - times[k]) ** 2) / (2 * dt)
        use = np.flatnonzero(w > 0)
        half = 0.5 * r2 * (1 + 1e-9)
        a_slices = [self.snapshots[k] for k in range(len(times)) if abs(times[k] - cyl.time) <= half]
        if not a_slices:
            raise WindowError("no snapshot inside the cylinder time interval")
        return [self.snapshots[k] for k in use], w[use], a_slices

    def lattice(self, cyl: ParabolicCylinder):
        return ball_lattice(self.grid, cyl.center, cyl.radius)


# -- pointwise magnitudes of sampled values -------------------------------------

def _norm2(vals: np.ndarray, lo: int, hi: int) -> np.ndarray:
    return np.sum(vals[lo:hi] ** 2, axis=0)


def _u2(v):
    return _norm2(v, 0, 3)


def _F2(v):
    return _norm2(v, 3, 12)


def _grad2(v):
    return _norm2(v, 13, 49)


def ckn_ABCD(window: SpaceTimeWindow, cyl: ParabolicCylinder) -> CknQuantities:
    """A, B, C, D on ``cyl`` (E and Ebar left as NaN)."""
    hit = window._ckn.get(cyl)
    if hit is not None:
        return hit
    lat = window.lattice(cyl)
    snaps, tw, a_snaps = window._slices(cyl)
    r = cyl.radius
    B = C = D = 0.0
    energy = {}
    for s, w in zip(snaps, tw):
        v = window._samples(s, lat)
        u2, F2 = _u2(v), _F2(v)
        energy[s] = float(lat.integrate(u2 + F2))
        B += w * float(lat.integrate(_grad2(v)))
        C += w * float(lat.integrate(u2**1.5 + F2**1.5))
        D += w * float(lat.integrate(np.abs(v[12]) ** 1.5))
    for s in a_snaps:
        if s not in energy:
            v = window._samples(s, lat)
            energy[s] = float(lat.integrate(_u2(v) + _F2(v)))
    A = max(energy[s] for s in a_snaps)
    q = CknQuantities(cyl, A / r, B / r, C / r**2, D / r**2)
    window._ckn[cyl] = q
    return q


def excess_terms(window: SpaceTimeWindow, cyl: ParabolicCylinder, centered: bool = True) -> tuple:
    """``(u term, p term, F term)`` of E (``centered``) or of Ebar.

    Under ``(u, p, F) -> (a u, a^2 p, a F)`` the u and F terms scale by ``a``
    and the pressure term by ``a^2``.
    """
    lat = window.lattice(cyl)
    snaps, tw, _ = window._slices(cyl)
    vol = cyl.volume
    samples = [window._samples(s, lat) for s in snaps]
    if centered:
        mean = sum(w * lat.integrate(v[:12]) for v, w in zip(samples, tw)) / vol
    su = sF = sp = 0.0
    for v, w in zip(samples, tw):
        if centered:
            d = v[:12] - mean[:, None]
            pc = v[12] - float(lat.integrate(v[12])) / lat.volume
        else:
            d, pc = v[:12], v[12]
        su += w * float(lat.integrate(_norm2(d, 0, 3) ** 1.5))
        sF += w * float(lat.integrate(_norm2(d, 3, 12) ** 1.5))
        sp += w * float(lat.integrate(np.abs(pc) ** 1.5))
    return (su / vol) ** (1 / 3), cyl.radius * (sp / vol) ** (2 / 3), (sF / vol) ** (1 / 3)


def quantity_E(window: SpaceTimeWindow, cyl: ParabolicCylinder) -> float:
    """Mean-removed excess with the per-slice ball mean of the pressure."""
    return sum(excess_terms(window, cyl, True))


def quantity_Ebar(window: SpaceTimeWindow, cyl: ParabolicCylinder) -> float:
    return sum(excess_terms(window, cyl, False))


def ckn_quantities(window: SpaceTimeWindow, cyl: ParabolicCylinder) -> CknQuantities:
    q = ckn_ABCD(window, cyl)
    return CknQuantities(cyl, q.A, q.B, q.C, q.D, quantity_E(window, cyl), quantity_Ebar(window, cyl))


# -- rescaling --------------------------------------------------------------------

def _shift(grid: Grid, f: np.ndarray, x0) -> np.ndarray:
    """``f(x0 + x)`` on the grid: an index roll when ``x0`` is a grid point."""
    idx = [c / h for c, h in zip(x0, grid.spacing)]
    if all(abs(i - round(i)) < 1e-9 for i in idx):
        return np.roll(f, tuple(-int(round(i)) for i in idx), axis=AXES)
    fh = gf.to_spectral(grid, f)
    phase = np.exp(1j * sum(k * c for k, c in zip(grid.kd, x0)))
    return gf.to_physical(grid, fh * phase)


def rescale(window: SpaceTimeWindow, x0, t0: float, lam: float) -> SpaceTimeWindow:
    """Window of ``(lam u, lam^2 p, lam F)`` at ``(x0 + lam y, t0 + lam^2 s)``.

    The rescaled grid keeps the point counts and stretches the periods by
    ``1/lam``, so every rescaled collocation point is an original one when
    ``x0`` is a grid point; otherwise fields are shifted spectrally.
    """
    if not 0 < lam <= 1:
        raise ValueError("lambda must lie in (0, 1]")
    if not window.snapshots:
        raise WindowError("empty window")
    if not window.frozen:
        a, b = window.span
        if not a - TIME_TOL <= t0 <= b + TIME_TOL:
            raise WindowError(f"t0 = {t0} outside window [{a}, {b}]")
    g = window.grid
    ng = Grid(g.points, tuple(L / lam for L in g.periods))
    out = SpaceTimeWindow(ng, window.mu, frozen=window.frozen,
                          dt_snap=None if window.dt_snap is None else window.dt_snap / lam**2,
                          retention=None if window.retention is None else window.retention / lam**2)
    for s in window.snapshots:
        out.snapshots.append(Snapshot(
            (s.time - t0) / lam**2,
            lam * _shift(g, s.u, x0),
            lam * _shift(g, s.F, x0),
            lam**2 * _shift(g, s.p, x0),
        ))
    return out


def scale_fields(window: SpaceTimeWindow, alpha: float) -> SpaceTimeWindow:
    """Same window with ``u, F`` scaled by ``alpha`` and ``p`` by ``alpha**2``."""
    out = SpaceTimeWindow(window.grid, window.mu, window.dt_snap, window.retention, window.frozen)
    out.snapshots = [Snapshot(s.time, alpha * s.u, alpha * s.F, alpha**2 * s.p) for s in window.snapshots]
    return out


def pde_residual(window: SpaceTimeWindow, forcing=None) -> float:
    """Relative L2 residual of both evolution equations at interior snapshots.

    Time derivatives are centred differences between neighbouring snapshots,
    so the residual is ``O(dt_snap^2)`` plus the solver's own error.  The
    result is normalised by the L2 size of the time-derivative and diffusion
    terms and is therefore invariant under parabolic rescaling.
    """
    if window.frozen or len(window) < 3:
        raise WindowError("residual needs at least three time-dependent snapshots")
    g = window.grid
    worst = 0.0
    snaps = window.snapshots
    for k in range(1, len(snaps) - 1):
        s, sm, sp = snaps[k], snaps[k - 1], snaps[k + 1]
        dt = sp.time - sm.time
        ut = (sp.u - sm.u) / dt
        Ft = (sp.F - sm.F) / dt
        lu = gf.laplacian(g, s.u)
        lF = window.mu * gf.laplacian(g, s.F)
        Ru = ut + gf.convective_term(g, s.u, s.u) - lu + gf.gradient(g, s.p) - gf.tensor_stress_div(g, s.F)
        RF = Ft + gf.convective_term(g, s.u, s.F) - lF - gf.stretching_term(g, s.u, s.F)
        if forcing is not None:
            fu, fF = forcing(g, s.time)
            Ru = Ru - fu
            RF = RF - fF
        scale = gf.l2_norm(g, ut) + gf.l2_norm(g, Ft) + gf.l2_norm(g, lu) + gf.l2_norm(g, lF)
        if scale > 0:
            worst = max(worst, (gf.l2_norm(g, Ru) + gf.l2_norm(g, RF)) / scale)
    return worst


# -- criterion scan ---------------------------------------------------------------

@dataclass
class ScanReport:
    centers: list            # (x, y, z, t)
    radii: tuple
    B: np.ndarray            # (n_centers, n_radii)
    estimate: np.ndarray
    flags: np.ndarray
    eps: float
    m: int

    @property
    def flag_count(self) -> int:
        return int(np.sum(self.flags))

    def flagged_points(self) -> np.ndarray:
        """``(n, 4)`` array of flagged ``(t, x, y, z)``."""
        pts = [(c[3], c[0], c[1], c[2]) for c, f in zip(self.centers, self.flags) if f]
        return np.array(pts, dtype=float).reshape(-1, 4)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SCAN_COLUMNS)
            for i, c in enumerate(self.centers):
                for j, r in enumerate(self.radii):
                    w.writerow([i, *(repr(float(v)) for v in c), repr(float(r)), repr(float(self.B[i, j])),
                                repr(float(self.estimate[i])), int(self.flags[i]), repr(float(self.eps))])


SCAN_COLUMNS = ("center", "x", "y", "z", "t", "r", "B", "estimate", "flag", "eps")


def _check_dyadic(radii) -> tuple:
    radii = tuple(float(r) for r in radii)
    if not radii:
        raise ValueError("empty radii list")
    for a, b in zip(radii, radii[1:]):
        if abs(a / b - 2.0) > 1e-9:
            raise ValueError(f"radii must be dyadic decreasing, got {a} then {b}")
    return radii


def criterion_scan(window: SpaceTimeWindow, centers, radii, eps: float, m: int = 3) -> ScanReport:
    """B over dyadic radii per centre; flag where the max of the last ``m`` is >= eps.

    ``centers`` are ``(x, y, z, t)`` tuples.
    """
    radii = _check_dyadic(radii)
    if m < 1:
        raise ValueError("m must be at least 1")
    centers = [tuple(float(v) for v in c) for c in centers]
    B = np.zeros((len(centers), len(radii)))
    for i, c in enumerate(centers):
        for j, r in enumerate(radii):
            B[i, j] = ckn_B(window, ParabolicCylinder(c[:3], c[3], r))
    est = B[:, -m:].max(axis=1) if len(centers) else np.zeros(0)
    return ScanReport(centers, radii, B, est, est >= eps, float(eps), m)


def ckn_B(window: SpaceTimeWindow, cyl: ParabolicCylinder) -> float:
    lat = window.lattice(cyl)
    snaps, tw, _ = window._slices(cyl)
    tot = sum(w * float(lat.integrate(_grad2(window._samples(s, lat)))) for s, w in zip(snaps, tw))
    return tot / cyl.radius


# -- local energy inequality ---------------------------------------------------------

@dataclass(frozen=True)
class BumpSpec:
    """``phi(x) = amplitude * (1 - |x - c|^2/w^2)^power`` inside the ball of radius ``w``.

    A polynomial bump is only ``C^(power-1)``, but its spectrum decays
    algebraically fast, so box sums of ``phi`` against resolved fields stay
    accurate on coarse grids.
    """
    center: tuple
    width: float
    amplitude: float = 1.0
    power: int = 12


def bump(grid: Grid, spec: BumpSpec):
    """``(phi, grad phi, lap phi)`` on the grid, with minimum-image distance."""
    if spec.power < 3:
        raise ValueError("bump power must be at least 3")
    d = []
    for X, c, L in zip(grid.coords, spec.center, grid.periods):
        dx = X - c
        d.append(dx - L * np.round(dx / L))
    d = np.broadcast_arrays(*d)
    w2 = spec.width**2
    m, a = spec.power, spec.amplitude
    q = (d[0] ** 2 + d[1] ** 2 + d[2] ** 2) / w2
    one = np.clip(1.0 - q, 0.0, None)
    phi = a * one**m
    dphi = -m * a * one ** (m - 1)                    # d phi / d q
    d2phi = m * (m - 1) * a * one ** (m - 2)          # d2 phi / d q2
    grad = np.stack([dphi * 2 * di / w2 for di in d])
    lap = d2phi * 4 * q / w2 + dphi * 6 / w2
    return phi, grad, lap


def local_energy_check(window: SpaceTimeWindow, spec: BumpSpec, forcing=None) -> float:
    """Signed ``LHS - RHS`` of the localized energy balance at the last snapshot.

    With ``phi`` independent of time and ``e = (|u|^2 + |F|^2)/2``,

        LHS = int phi e (t1) + iint phi (|grad u|^2 + mu |grad F|^2)
        RHS = int phi e (t0) + iint lap phi (|u|^2 + mu |F|^2)/2
              + iint (e + p) u.grad phi - iint d_j phi u_i (F F^t)_ij
              [+ iint phi (u.f_u + F:f_F)]

    Space integrals are full-box sums, time integrals the trapezoid rule.
    Smooth solutions give a residual at truncation-error level; weak
    solutions only need ``LHS <= RHS``.
    """
    if window.frozen:
        raise WindowError("local energy check needs a time-dependent window")
    if 2 * spec.width >= min(window.grid.periods):
        raise WindowError("bump support exceeds the box")
    g = window.grid
    phi, gphi, lphi = bump(g, spec)
    dv = g.cell_volume
    rates = []
    for s in window.snapshots:
        u2 = np.sum(s.u**2, axis=0)
        F2 = np.sum(s.F**2, axis=(0, 1))
        e = 0.5 * (u2 + F2)
        gu2 = np.sum(gf.gradient(g, s.u) ** 2, axis=(0, 1))
        gF2 = np.sum(gf.gradient(g, s.F) ** 2, axis=(0, 1, 2))
        diss = np.sum(phi * (gu2 + window.mu * gF2)) * dv
        udg = np.einsum("ixyz,ixyz->xyz", s.u, gphi)
        ffT = np.einsum("ikxyz,jkxyz->ijxyz", s.F, s.F)
        stress = np.einsum("ixyz,jxyz,ijxyz->xyz", s.u, gphi, ffT)
        flux = np.sum(lphi * 0.5 * (u2 + window.mu * F2) + (e + s.p) * udg - stress) * dv
        if forcing is not None:
            fu, fF = forcing(g, s.time)
            flux += np.sum(phi * (np.sum(s.u * fu, axis=0) + np.sum(s.F * fF, axis=(0, 1)))) * dv
        rates.append((np.sum(phi * e) * dv, diss, flux))
    rates = np.array(rates)
    t = window.times
    lhs = rates[-1, 0] + trapezoid(rates[:, 1], t)
    rhs = rates[0, 0] + trapezoid(rates[:, 2], t)
    return float(lhs - rhs)


# -- Serrin-type norm -------------------------------------------------------------------

def serrin_norm(window: SpaceTimeWindow, s: float, s_prime: float, ball=None) -> float:
    """``( int ( int |u|^s + |p|^{s/2} + |F|^s dx )^{s'/s} dt )^{1/s'}``.

    The space integral is over the whole box, or over ``ball = (center,
    radius)``; the time integral is the trapezoid rule over the window (a
    frozen window is treated as lasting one time unit).
    """
    if not (3.0 / s + 2.0 / s_prime <= 1.0):
        raise ValueError(f"exponents violate 3/s + 2/s' <= 1 (got {3.0 / s + 2.0 / s_prime})")
    if not s_prime >= s:
        raise ValueError("exponents violate s' >= s")
    g = window.grid
    vals = []
    for snap in window.snapshots:
        dens = (np.sum(snap.u**2, axis=0) ** (s / 2) + np.abs(snap.p) ** (s / 2)
                + np.sum(snap.F**2, axis=(0, 1)) ** (s / 2))
        if ball is None:
            I = float(np.sum(dens) * g.cell_volume)
        else:
            lat = ball_lattice(g, tuple(ball[0]), float(ball[1]))
            I = float(lat.integrate(lat.sample(dens)))
        vals.append(I ** (s_prime / s))
    if window.frozen:
        total = vals[0]
    else:
        total = float(trapezoid(vals, window.times))
    return total ** (1.0 / s_prime)


# -- decay ratio ----------------------------------------------------------------------

@dataclass(frozen=True)
class DecayRecord:
    center: tuple
    time: float
    r: float
    theta: float
    E_r: float
    E_theta_r: float
    ratio: Optional[float]   # None when E(r) is degenerate

    @property
    def ratio_text(self) -> str:
        return "undefined" if self.ratio is None else repr(self.ratio)


def decay_report(window: SpaceTimeWindow, center, time: float, r: float, theta: float) -> DecayRecord:
    """``E(theta r) / (theta^{2/3} E(r))``; the ratio is None when ``E(r)`` vanishes.

    ``E(r)`` counts as vanishing when it is below ``1e-12`` times the
    un-centred excess, i.e. at the rounding level of the mean removal.
    """
    if not 0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 1/2)")
    big = ParabolicCylinder(center, time, r)
    small = ParabolicCylinder(center, time, theta * r)
    Er = quantity_E(window, big)
    Et = quantity_E(window, small)
    floor = 1e-12 * quantity_Ebar(window, big)
    ratio = None if Er <= floor else Et / (theta ** (2.0 / 3.0) * Er)
    return DecayRecord(tuple(float(c) for c in center), float(time), float(r), float(theta), Er, Et, ratio)


# -- iteration arithmetic --------------------------------------------------------------

def iteration_constants(theta: float, beta: float, M: float, c1: float, eps1: float):
    """Gate and threshold of the excess-decay iteration.

    Evaluated with exactly this expression tree (float64)::

        e    = 1.0/3.0 - beta/2.0
        q    = theta ** e
        gate = c1 * q <= 1.0
        eps2 = (1.0 - q) * min(0.5 * eps1, theta ** (5.0/3.0) * (1.0 - theta ** beta) * M / 2.0)
    """
    if not 0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 1/2)")
    if not 0 < beta < 2.0 / 3.0:
        raise ValueError("beta must lie in (0, 2/3)")
    if not (M > 0 and c1 > 0 and eps1 > 0):
        raise ValueError("M, c1 and eps1 must be positive")
    e = 1.0 / 3.0 - beta / 2.0
    q = theta**e
    gate = c1 * q <= 1.0
    eps2 = (1.0 - q) * min(0.5 * eps1, theta ** (5.0 / 3.0) * (1.0 - theta**beta) * M / 2.0)
    return gate, eps2


# -- CSV helpers ----------------------------------------------------------------------

CKN_COLUMNS = ("x", "y", "z", "t", "r", "A", "B", "C", "D", "E", "Ebar", "script_E")


def write_ckn_csv(path, quantities: Sequence[CknQuantities]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CKN_COLUMNS)
        for q in quantities:
            row = q.row()
            w.writerow([repr(float(row[c])) for c in CKN_COLUMNS])
