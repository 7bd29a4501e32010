"""Manufactured solutions: symbolic forcing that makes a closed form exact.

Given ``(u*, F*, p*)`` as sympy expressions in ``x, y, z, t``, the residual
forcing is

    g_u = u_t + (u.grad)u - lap u + grad p - div(F F^t)
    g_F = F_t + (u.grad)F - mu lap F - (grad u) F

so that ``(u*, F*, p*)`` solves the forced system exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy as sp

from .grid_fields import Grid

x, y, z, t = sp.symbols("x y z t", real=True)
X = (x, y, z)


def _div(v) -> sp.Expr:
    return sum(sp.diff(v[i], X[i]) for i in range(3))


def _lap(f) -> sp.Expr:
    return sum(sp.diff(f, X[i], 2) for i in range(3))


@dataclass(frozen=True, eq=False)
class ManufacturedSolution:
    name: str
    u: tuple          # 3 expressions
    F: tuple          # 3 x 3 expressions, F[i][j]
    p: sp.Expr
    mu: float
    g_u: tuple
    g_F: tuple

    @cached_property
    def _funcs(self):
        args = (x, y, z, t)
        flat = list(self.u) + [e for row in self.F for e in row] + [self.p]
        flat += list(self.g_u) + [e for row in self.g_F for e in row]
        return [sp.lambdify(args, e, "numpy") for e in flat]

    def _eval(self, grid: Grid, time: float, lo: int, hi: int) -> np.ndarray:
        X_, Y_, Z_ = grid.coords
        out = np.empty((hi - lo,) + grid.points)
        for k, f in enumerate(self._funcs[lo:hi]):
            out[k] = np.broadcast_to(f(X_, Y_, Z_, time), grid.points)
        return out

    def fields(self, grid: Grid, time: float):
        """``(u, F, p)`` arrays of the exact solution at ``time``."""
        u = self._eval(grid, time, 0, 3)
        F = self._eval(grid, time, 3, 12).reshape((3, 3) + grid.points)
        p = self._eval(grid, time, 12, 13)[0]
        return u, F, p

    def forcing(self, grid: Grid, time: float):
        """``(g_u, g_F)`` arrays; usable directly as a solver forcing callable."""
        gu = self._eval(grid, time, 13, 16)
        gF = self._eval(grid, time, 16, 25).reshape((3, 3) + grid.points)
        return gu, gF

    def state(self, grid: Grid, time: float = 0.0):
        from .solver import State

        u, F, p = self.fields(grid, time)
        return State(grid, time, u, F, self.mu, p=p - np.mean(p))

    def __call__(self, grid: Grid, time: float):
        return self.forcing(grid, time)


def manufactured_forcing(u, F, p, mu: float = 1.0, name: str = "custom") -> ManufacturedSolution:
    """Residual forcing for the closed form ``(u, F, p)``.

    Raises ``ValueError`` unless ``u`` and every column of ``F`` are
    divergence free identically.
    """
    u = [sp.sympify(e) for e in u]
    F = [[sp.sympify(e) for e in row] for row in F]
    p = sp.sympify(p)
    if sp.simplify(_div(u)) != 0:
        raise ValueError("non-solenoidal input: div u != 0")
    for j in range(3):
        if sp.simplify(_div([F[i][j] for i in range(3)])) != 0:
            raise ValueError(f"non-solenoidal input: column {j} of F has nonzero divergence")
    grad_u = [[sp.diff(u[i], X[j]) for j in range(3)] for i in range(3)]
    FFt = [[sum(F[i][k] * F[j][k] for k in range(3)) for j in range(3)] for i in range(3)]
    g_u = []
    for i in range(3):
        e = (sp.diff(u[i], t) + sum(u[j] * grad_u[i][j] for j in range(3)) - _lap(u[i])
             + sp.diff(p, X[i]) - sum(sp.diff(FFt[i][j], X[j]) for j in range(3)))
        g_u.append(e)
    g_F = []
    for i in range(3):
        row = []
        for j in range(3):
            e = (sp.diff(F[i][j], t) + sum(u[l] * sp.diff(F[i][j], X[l]) for l in range(3))
                 - mu * _lap(F[i][j]) - sum(grad_u[i][l] * F[l][j] for l in range(3)))
            row.append(e)
        g_F.append(tuple(row))
    return ManufacturedSolution(name, tuple(u), tuple(tuple(r) for r in F), p, float(mu), tuple(g_u), tuple(g_F))


def zero_solution(mu: float = 1.0) -> ManufacturedSolution:
    zero = sp.Integer(0)
    return manufactured_forcing([zero] * 3, [[zero] * 3] * 3, zero, mu, "zero")


def taylor_green_solution(mu: float = 1.0) -> ManufacturedSolution:
    """Decaying 2-D Taylor-Green vortex with ``F = 0`` (an unforced solution)."""
    d = sp.exp(-2 * t)
    u = [d * sp.sin(x) * sp.cos(y), -d * sp.cos(x) * sp.sin(y), sp.Integer(0)]
    p = sp.exp(-4 * t) * (sp.cos(2 * x) + sp.cos(2 * y)) / 4
    return manufactured_forcing(u, [[sp.Integer(0)] * 3] * 3, p, mu, "taylor_green")


def coupled_trig_solution(mu: float = 1.0) -> ManufacturedSolution:
    """Time-periodic trigonometric ``(u, F, p)`` with nonzero u and F - I."""
    a = sp.Rational(3, 10) * (1 + sp.sin(t) / 2)
    cols = [
        (sp.sin(y), sp.sin(z), sp.cos(x)),
        (sp.cos(z), sp.cos(x), sp.sin(y)),
        (sp.sin(y + z), sp.cos(x - z), sp.sin(x + y)),
    ]
    F = [[(1 if i == j else 0) + a * cols[j][i] for j in range(3)] for i in range(3)]
    u = [sp.cos(t) * sp.sin(y), sp.cos(t) * sp.sin(z), sp.cos(t) * sp.sin(x)]
    p = sp.Rational(1, 10) * sp.cos(t) * sp.cos(x + y)
    return manufactured_forcing(u, F, p, mu, "coupled_trig")


SOLUTIONS = {"zero": zero_solution, "taylor_green": taylor_green_solution, "coupled_trig": coupled_trig_solution}
