"""Greedy parabolic-cylinder covering of a finite spacetime point set.

A cylinder of radius ``d`` centred at ``(tc, xc)`` is the closed set
``|x - xc| <= d, |t - tc| <= d^2/2``.  The premeasure at scale ``delta`` is
``sum r_i`` over the chosen cylinders, all of radius ``delta``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

SLACK = 1e-12


@dataclass(frozen=True)
class CoveringEstimate:
    delta: float
    premeasure: float
    count: int
    covered: int
    centers: np.ndarray   # (count, 4) rows (t, x, y, z)

    def row(self) -> tuple:
        return (self.delta, self.premeasure, self.count, self.covered)


COVERING_COLUMNS = ("delta", "premeasure", "cylinders", "points")


def _inside(pts: np.ndarray, c: np.ndarray, delta: float) -> np.ndarray:
    dx = np.sqrt(np.sum((pts[:, 1:] - c[1:]) ** 2, axis=1))
    dt = np.abs(pts[:, 0] - c[0])
    return (dx <= delta * (1 + SLACK)) & (dt <= 0.5 * delta**2 * (1 + SLACK))


def hausdorff_premeasure(points, delta: float) -> CoveringEstimate:
    """Greedy covering of ``points`` (rows ``(t, x, y, z)``) by radius-``delta`` cylinders.

    Repeatedly take the lexicographically first uncovered point ``q`` and
    place a cylinder at whichever of ``q``, ``q +- delta e_i`` or
    ``q +- delta^2/2 e_t`` covers the most uncovered points (first wins ties).
    Every candidate contains ``q``, so each pass covers at least one point.

    The count is optimal, hence monotone under adding points, for sets on an
    axis-aligned line.  For general sets a superset can occasionally need
    fewer greedy cylinders.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 4)
    n = len(pts)
    if n == 0:
        return CoveringEstimate(float(delta), 0.0, 0, 0, np.zeros((0, 4)))
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    scale = np.array([2.0 / delta, 1.0, 1.0, 1.0])
    tree = cKDTree(pts * scale)
    reach = np.sqrt(2.0) * delta * (1 + 1e-9)

    stencil = [np.zeros(4)]
    for i in (1, 2, 3):
        for sgn in (1.0, -1.0):
            e = np.zeros(4)
            e[i] = sgn * delta
            stencil.append(e)
    for sgn in (1.0, -1.0):
        e = np.zeros(4)
        e[0] = sgn * 0.5 * delta**2
        stencil.append(e)

    covered = np.zeros(n, dtype=bool)
    centers = []
    nxt = 0
    while True:
        while nxt < n and covered[nxt]:
            nxt += 1
        if nxt == n:
            break
        q = pts[nxt]
        best, best_hits = None, -1
        for s in stencil:
            c = q + s
            idx = np.asarray(tree.query_ball_point(c * scale, reach), dtype=int)
            idx = idx[~covered[idx]] if len(idx) else idx
            hits = idx[_inside(pts[idx], c, delta)] if len(idx) else idx
            if len(hits) > best_hits:
                best, best_hits, best_idx = c, len(hits), hits
        covered[best_idx] = True
        centers.append(best)
    k = len(centers)
    return CoveringEstimate(float(delta), k * float(delta), k, n, np.array(centers))


def covering_ladder(points, deltas) -> list:
    return [hausdorff_premeasure(points, d) for d in deltas]


def write_covering_csv(path, estimates) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COVERING_COLUMNS)
        for e in estimates:
            w.writerow([repr(e.delta), repr(e.premeasure), e.count, e.covered])
