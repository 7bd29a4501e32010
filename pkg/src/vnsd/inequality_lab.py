"""Empirical constants for the local functional inequalities.

Each check evaluates, per sample and per radius pair ``(r, rho)``, a
left-hand side and the list of right-hand terms of an inequality
``lhs <= c * sum(terms)``, then fits ``c`` as the largest observed ratio.
The fitted constant is a property of the ensemble, never a universal bound.

Inequality ids:

* ``interpolation``           ``|v|_{L^q(B)} <= c (|v|_2^a |grad v|_2^(1-a) + |v|_2 |B|^(1/q-1/2))``, ``a = 3/q - 1/2``
* ``cubic_bound``             ``C(r) <= c ((r/rho)^3 A(rho)^1.5 + (rho/r)^3 A(rho)^.75 B(rho)^.75)``
* ``energy_bound``            ``A(rho/2) + B(rho/2) <= c (C^(2/3) + C^(1/3) D^(2/3) + A^.5 B^.5 C^(1/3))`` at ``rho``
* ``pressure_decay``          ``D(r) <= c ((r/rho) D(rho) + (rho/r)^2 A(rho)^.75 B(rho)^.75)``
* ``pressure_integrability``  ``iint_{Q_r} |p|^(5/3) <= c iint_{Q_rho} (|grad u|^2 + |grad F|^2 + 1)``
* ``excess_bound``            ``r Ebar(r) <= c (C(r) + A(r)^1.5 + D(r)^2)^(1/3)``
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diagnostics as dg
from . import grid_fields as gf
from .grid_fields import Grid
from .quadrature import ball_lattice, ball_volume
from .solver import InitialSpec, Stepper, make_initial

GENERATORS = ("random_solenoidal", "solver_trajectory", "constant", "linear")
LEMMAS = ("cubic_bound", "energy_bound", "pressure_decay", "pressure_integrability", "excess_bound")
EQUATION_LEMMAS = ("energy_bound", "pressure_decay", "pressure_integrability")
DEFAULT_PAIRS = ((0.25, 0.5), (0.125, 0.5), (0.125, 0.25), (0.0625, 0.25))


@dataclass(frozen=True)
class EnsembleSpec:
    generator: str = "random_solenoidal"
    count: int = 10
    seed: int = 0
    points: tuple = (16, 16, 16)
    periods: tuple = (2 * math.pi,) * 3
    pairs: tuple = DEFAULT_PAIRS
    slope: float = -5.0 / 3.0
    amplitude: float = 1.0
    kcut: Optional[float] = None
    # solver trajectories
    mu: float = 1.0
    dt: float = 1e-3
    warmup_steps: int = 50

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if self.count < 1:
            raise ValueError("ensemble count must be at least 1")
        half = 0.5 * min(self.periods)
        for r, rho in self.pairs:
            if not 0 < r <= rho <= half:
                raise ValueError(f"radius pair ({r}, {rho}) must satisfy 0 < r <= rho <= half the smallest period")

    @property
    def grid(self) -> Grid:
        return Grid(tuple(self.points), tuple(self.periods))


@dataclass(frozen=True)
class Sample:
    index: int
    r: float
    rho: float
    lhs: float
    terms: tuple

    @property
    def rhs(self) -> float:
        return float(sum(self.terms))

    @property
    def ratio(self) -> float:
        if self.rhs > 0:
            return self.lhs / self.rhs
        return math.nan


@dataclass
class InequalityReport:
    lemma_id: str
    samples: list = field(default_factory=list)
    seed: int = 0
    count: int = 0
    resolution: tuple = ()

    @property
    def c_fit(self) -> float:
        return fit_constant([(s.lhs, s.rhs) for s in self.samples])

    def violations(self, c: float) -> int:
        """Samples with ``lhs > c * rhs`` (compared through the same ratio as the fit)."""
        n = 0
        for s in self.samples:
            if s.rhs > 0:
                n += s.lhs / s.rhs > c
            elif s.lhs > 0:
                n += 1
        return n

    def worst(self) -> Optional[Sample]:
        live = [s for s in self.samples if s.rhs > 0]
        return max(live, key=lambda s: s.lhs / s.rhs) if live else None

    def extend(self, other: "InequalityReport") -> None:
        self.samples.extend(other.samples)

    def to_csv(self, path) -> None:
        nterm = max((len(s.terms) for s in self.samples), default=0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lemma_id", "sample", "r", "rho", "lhs"] + [f"rhs_term_{i + 1}" for i in range(nterm)] + ["ratio"])
            for s in self.samples:
                w.writerow([self.lemma_id, s.index, repr(s.r), repr(s.rho), repr(s.lhs)]
                           + [repr(float(t)) for t in s.terms] + [repr(s.ratio)])


def fit_constant(samples) -> float:
    """``max(lhs / rhs)`` over samples, skipping vacuous ``(0, 0)`` pairs.

    A sample with ``rhs == 0`` and ``lhs > 0`` cannot satisfy any inequality
    of this form and raises ``ValueError``.
    """
    best = 0.0
    for lhs, rhs in samples:
        if rhs == 0:
            if lhs == 0:
                continue
            raise ValueError(f"impossible sample: lhs = {lhs} with rhs = 0")
        if rhs < 0 or lhs < 0:
            raise ValueError("samples must be non-negative")
        best = max(best, lhs / rhs)
    return best


# -- ensemble generation -----------------------------------------------------------

def _random_center(rng, grid: Grid) -> tuple:
    return tuple(float(v) for v in rng.uniform(0, 1, 3) * np.array(grid.periods))


def ensemble_windows(ens: EnsembleSpec):
    """Yield ``(index, window, center, time)`` per ensemble member."""
    g = ens.grid
    rng = np.random.default_rng(ens.seed)
    seeds = np.random.SeedSequence(ens.seed).spawn(ens.count)
    rho_max = max(rho for _, rho in ens.pairs)
    r_min = min(r for r, _ in ens.pairs)
    for i in range(ens.count):
        center = _random_center(rng, g)
        if ens.generator == "constant":
            u = np.zeros((3,) + g.points)
            u[0] = ens.amplitude
            yield i, dg.SpaceTimeWindow.frozen_fields(g, u, p=0.0, mu=ens.mu), center, 0.0
        elif ens.generator == "linear":
            u = np.zeros((3,) + g.points)
            L = g.periods[1]
            u[0] = ens.amplitude * L / (2 * np.pi) * np.sin(2 * np.pi * g.coords[1] / L) + 0 * g.coords[0]
            yield i, dg.SpaceTimeWindow.frozen_fields(g, u, p=0.0, mu=ens.mu), center, 0.0
        elif ens.generator == "random_solenoidal":
            sub = seeds[i].spawn(4)
            u = gf.random_solenoidal_field(g, ens.slope, ens.amplitude, sub[0], ens.kcut)
            F = np.stack([gf.random_solenoidal_field(g, ens.slope, ens.amplitude, sub[j + 1], ens.kcut)
                          for j in range(3)], axis=1)
            yield i, dg.SpaceTimeWindow.frozen_fields(g, u, F, mu=ens.mu), center, 0.0
        else:
            spec = InitialSpec("identity_plus_perturbation", ens.slope, ens.amplitude, ens.kcut)
            state = make_initial(spec, g, seeds[i], ens.mu)
            stepper = Stepper(g, ens.dt, ens.mu)
            if ens.dt > r_min**2 / 8:
                raise ValueError(f"dt = {ens.dt} too coarse for r = {r_min} (needs dt <= r^2/8)")
            n_window = int(math.ceil(rho_max**2 / ens.dt)) + 1
            for _ in range(ens.warmup_steps):
                state = stepper.step(state)
            win = dg.SpaceTimeWindow(g, ens.mu)
            for k in range(n_window):
                win.record(state)
                if k < n_window - 1:
                    state = stepper.step(state)
            t_mid = 0.5 * (win.span[0] + win.span[1])
            yield i, win, center, t_mid


# -- interpolation inequality --------------------------------------------------------

def _ball_values(grid: Grid, v: np.ndarray, lat) -> tuple:
    """``(|v|^2, |grad v|^2)`` at the ball nodes."""
    win = dg.SpaceTimeWindow(grid, frozen=True)
    snap = dg.Snapshot(0.0, v, np.zeros((3, 3) + grid.points), np.zeros(grid.points))
    vals = win._samples(snap, lat)
    return np.sum(vals[0:3] ** 2, axis=0), np.sum(vals[13:22] ** 2, axis=0)


def interpolation_terms(grid: Grid, v: np.ndarray, center, radius: float, q: float = 3.0):
    """``(lhs, (term1, term2))`` of the interpolation inequality on a ball."""
    if not 2.0 <= q <= 6.0:
        raise ValueError(f"exponent {q} outside [2, 6]")
    lat = ball_lattice(grid, tuple(center), float(radius))
    v2, g2 = _ball_values(grid, v, lat)
    lq = float(lat.integrate(v2 ** (q / 2))) ** (1 / q)
    l2 = math.sqrt(float(lat.integrate(v2)))
    gl2 = math.sqrt(float(lat.integrate(g2)))
    a = 3.0 / q - 0.5
    vol = ball_volume(radius)
    # q = 2 gives a = 1 and no gradient factor
    t1 = l2**a * gl2 ** (1 - a) if a < 1 else l2
    return lq, (t1, l2 / vol ** (0.5 - 1.0 / q))


def interpolation_check(ens: EnsembleSpec, q: float = 3.0) -> InequalityReport:
    """Fit the interpolation constant over ``u`` of each member on balls of radius ``rho``."""
    if not 2.0 <= q <= 6.0:
        raise ValueError(f"exponent {q} outside [2, 6]")
    rep = InequalityReport("interpolation", seed=ens.seed, count=ens.count, resolution=tuple(ens.points))
    rhos = sorted({rho for _, rho in ens.pairs}, reverse=True)
    for i, u, center in _velocity_fields(ens):
        for rho in rhos:
            lhs, terms = interpolation_terms(ens.grid, u, center, rho, q)
            rep.samples.append(Sample(i, rho, rho, lhs, terms))
    return rep


def _velocity_fields(ens: EnsembleSpec):
    """Like :func:`ensemble_windows` but only the velocity, skipping F and p when possible."""
    if ens.generator != "random_solenoidal":
        for i, win, center, _ in ensemble_windows(ens):
            yield i, win.snapshots[-1].u, center
        return
    g = ens.grid
    rng = np.random.default_rng(ens.seed)
    seeds = np.random.SeedSequence(ens.seed).spawn(ens.count)
    for i in range(ens.count):
        center = _random_center(rng, g)
        yield i, gf.random_solenoidal_field(g, ens.slope, ens.amplitude, seeds[i].spawn(4)[0], ens.kcut), center


# -- lemma checks ------------------------------------------------------------------

def lemma_terms(lemma_id: str, win, center, t: float, r: float, rho: float):
    """``(lhs, terms)`` for one window, centre and radius pair."""
    cyl_r = dg.ParabolicCylinder(center, t, r)
    cyl_rho = dg.ParabolicCylinder(center, t, rho)
    if lemma_id == "cubic_bound":
        qr, qrho = dg.ckn_ABCD(win, cyl_r), dg.ckn_ABCD(win, cyl_rho)
        return qr.C, ((r / rho) ** 3 * qrho.A**1.5, (rho / r) ** 3 * qrho.A**0.75 * qrho.B**0.75)
    if lemma_id == "energy_bound":
        # evaluated on the pair (rho/2, rho)
        half = dg.ckn_ABCD(win, cyl_r)
        q = dg.ckn_ABCD(win, cyl_rho)
        return half.A + half.B, (q.C ** (2 / 3), q.C ** (1 / 3) * q.D ** (2 / 3),
                                 q.A**0.5 * q.B**0.5 * q.C ** (1 / 3))
    if lemma_id == "pressure_decay":
        qr, qrho = dg.ckn_ABCD(win, cyl_r), dg.ckn_ABCD(win, cyl_rho)
        return qr.D, ((r / rho) * qrho.D, (rho / r) ** 2 * qrho.A**0.75 * qrho.B**0.75)
    if lemma_id == "pressure_integrability":
        lhs = _cylinder_power(win, cyl_r, 12, 5.0 / 3.0)
        grad = dg.ckn_B(win, cyl_rho) * rho
        return lhs, (grad, cyl_rho.volume)
    if lemma_id == "excess_bound":
        q = dg.ckn_ABCD(win, cyl_r)
        return r * dg.quantity_Ebar(win, cyl_r), ((q.C + q.script_E) ** (1 / 3),)
    raise ValueError(f"unknown lemma id {lemma_id!r}; expected one of {LEMMAS}")


def _cylinder_power(win, cyl, row: int, power: float) -> float:
    lat = win.lattice(cyl)
    snaps, tw, _ = win._slices(cyl)
    return float(sum(w * lat.integrate(np.abs(win._samples(s, lat)[row]) ** power) for s, w in zip(snaps, tw)))


def _pairs_for(lemma_id: str, pairs) -> list:
    if lemma_id == "energy_bound":
        return [(rho / 2, rho) for rho in sorted({rho for _, rho in pairs}, reverse=True)]
    return list(pairs)


def lemma_ratio_check(lemma_id: str, ens: EnsembleSpec) -> InequalityReport:
    return lemma_ratio_checks([lemma_id], ens)[lemma_id]


def lemma_ratio_checks(lemma_ids, ens: EnsembleSpec) -> dict:
    """Several inequalities evaluated on one pass over the ensemble."""
    for lemma_id in lemma_ids:
        if lemma_id not in LEMMAS:
            raise ValueError(f"unknown lemma id {lemma_id!r}; expected one of {LEMMAS}")
        if lemma_id in EQUATION_LEMMAS and ens.generator != "solver_trajectory":
            raise ValueError(f"{lemma_id} uses the equations and needs a solver_trajectory ensemble")
    reps = {k: InequalityReport(k, seed=ens.seed, count=ens.count, resolution=tuple(ens.points)) for k in lemma_ids}
    for i, win, center, t in ensemble_windows(ens):
        for lemma_id in lemma_ids:
            for r, rho in _pairs_for(lemma_id, ens.pairs):
                lhs, terms = lemma_terms(lemma_id, win, center, t, r, rho)
                reps[lemma_id].samples.append(Sample(i, r, rho, float(lhs), tuple(float(x) for x in terms)))
    return reps
