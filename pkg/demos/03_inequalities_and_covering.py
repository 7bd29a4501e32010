"""Fitted inequality constants and covering premeasures.

Run with ``python demos/03_inequalities_and_covering.py``.
"""
# %%
import math

import numpy as np

from vnsd import inequality_lab as il
from vnsd.covering import covering_ladder

# %% [markdown]
# The fitted constant is the worst ratio lhs/rhs over an ensemble.  It is a
# property of that ensemble, so both seed and resolution are printed.

# %%
for n in (16, 32):
    ens = il.EnsembleSpec("random_solenoidal", count=20, seed=1, points=(n, n, n))
    rep = il.interpolation_check(ens, q=3.0)
    w = rep.worst()
    print(f"interpolation {n}^3: c_fit={rep.c_fit:.4f} worst sample {w.index} at r={w.r}")

# %%
ens = il.EnsembleSpec("random_solenoidal", count=10, seed=2)
for lemma, rep in il.lemma_ratio_checks(["cubic_bound", "excess_bound"], ens).items():
    print(f"{lemma}: c_fit={rep.c_fit:.4g}, violations at c_fit: {rep.violations(rep.c_fit)}")

# %% [markdown]
# The constant field gives a ratio that can be checked by hand:
# C(r) = |B_r| and A(rho) = |B_rho|/rho, so the ratio is sqrt(3 / 4 pi).

# %%
rep = il.lemma_ratio_check("cubic_bound", il.EnsembleSpec("constant", count=1, pairs=((0.25, 0.5),)))
print(f"constant field ratio {rep.samples[0].ratio:.12f} vs {math.sqrt(3 / (4 * math.pi)):.12f}")

# %% [markdown]
# Covering premeasures: a spatial segment has finite one-dimensional
# parabolic measure, a temporal one does not.

# %%
deltas = (0.1, 0.05, 0.025)
xs = np.linspace(0, 1, 1001)
segment = np.column_stack([0 * xs, xs, 0 * xs, 0 * xs])
ts = np.linspace(0, 1, 20001)
line = np.column_stack([ts, 0 * ts, 0 * ts, 0 * ts])
for a, b in zip(covering_ladder(segment, deltas), covering_ladder(line, deltas)):
    print(f"delta={a.delta:<6} spatial {a.premeasure:.3f}   temporal {b.premeasure:.2f}")
