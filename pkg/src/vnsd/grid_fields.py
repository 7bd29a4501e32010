"""Periodic-box discretization and spectral operators.

Fields are plain ``numpy`` arrays whose last three axes are the collocation
grid.  Leading axes carry components:

* scalar  ``(Nx, Ny, Nz)``
* vector  ``(3, Nx, Ny, Nz)``
* tensor  ``(3, 3, Nx, Ny, Nz)`` with ``F[i, j]`` the (i, j) entry, so the
  j-th column is ``F[:, j]``.

Gradients append the derivative index last: ``gradient(u)[i, j]`` is
``du_i/dx_j`` and ``gradient(F)[i, k, l]`` is ``dF_ik/dx_l``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

AXES = (-3, -2, -1)
MIN_POINTS = 4
COLUMN_TOL = 1e-10

_workers = int(os.environ.get("VNSD_THREADS", "1") or 1)


def set_workers(n: int) -> None:
    """Set the number of FFT worker threads (results do not depend on it)."""
    global _workers
    _workers = max(1, int(n))


def get_workers() -> int:
    return _workers


@dataclass(frozen=True)
class Grid:
    """Uniform periodic collocation grid on ``[0, L0) x [0, L1) x [0, L2)``."""

    points: tuple[int, int, int]
    periods: tuple[float, float, float] = (2 * math.pi, 2 * math.pi, 2 * math.pi)

    def __post_init__(self):
        if len(self.points) != 3 or len(self.periods) != 3:
            raise ValueError("grid needs exactly three axes")
        for n in self.points:
            if int(n) != n or n <= 0:
                raise ValueError(f"point counts must be positive integers, got {self.points}")
            if n % 2:
                raise ValueError(f"odd point count {n} in {self.points}")
            if n < MIN_POINTS:
                raise ValueError(f"point count {n} below minimum {MIN_POINTS}")
        for length in self.periods:
            if not (length > 0 and math.isfinite(length)):
                raise ValueError(f"periods must be positive, got {self.periods}")
        object.__setattr__(self, "points", tuple(int(n) for n in self.points))
        object.__setattr__(self, "periods", tuple(float(x) for x in self.periods))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.points

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(L / n for L, n in zip(self.periods, self.points))

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        nx, ny, nz = self.points
        return (nx, ny, nz // 2 + 1)

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.arange(self.points[axis]) * self.spacing[axis]

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays ``(X, Y, Z)``."""
        x, y, z = (self.axis_coords(a) for a in range(3))
        return (x[:, None, None], y[None, :, None], z[None, None, :])

    def mesh(self) -> np.ndarray:
        """Dense ``(3, Nx, Ny, Nz)`` coordinate array."""
        return np.stack(np.broadcast_arrays(*self.coords))

    @cached_property
    def _k1d(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nx, ny, nz = self.points
        lx, ly, lz = self.periods
        kx = 2 * np.pi / lx * np.fft.fftfreq(nx, 1.0 / nx)
        ky = 2 * np.pi / ly * np.fft.fftfreq(ny, 1.0 / ny)
        kz = 2 * np.pi / lz * np.fft.rfftfreq(nz, 1.0 / nz)
        return kx, ky, kz

    @cached_property
    def k(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavenumbers broadcast to the rfft layout."""
        kx, ky, kz = self._k1d
        return (kx[:, None, None], ky[None, :, None], kz[None, None, :])

    @cached_property
    def kd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Derivative wavenumbers: as ``k`` but with the Nyquist mode zeroed."""
        out = []
        for a, (k, n) in enumerate(zip(self._k1d, self.points)):
            k = k.copy()
            nyq = n // 2 if a < 2 else len(k) - 1
            k[nyq] = 0.0
            shape = [1, 1, 1]
            shape[a] = -1
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.k
        return kx**2 + ky**2 + kz**2

    @cached_property
    def kd2(self) -> np.ndarray:
        kx, ky, kz = self.kd
        return kx**2 + ky**2 + kz**2

    @cached_property
    def kmax(self) -> float:
        return float(max(np.pi * n / L for n, L in zip(self.points, self.periods)))

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask in the rfft layout: keep integer modes with ``|n_i| < N_i/3``."""
        nx, ny, nz = self.points
        ix = np.abs(np.fft.fftfreq(nx, 1.0 / nx))[:, None, None]
        iy = np.abs(np.fft.fftfreq(ny, 1.0 / ny))[None, :, None]
        iz = np.fft.rfftfreq(nz, 1.0 / nz)[None, None, :]
        return (3 * ix < nx) & (3 * iy < ny) & (3 * iz < nz)

    @cached_property
    def rfft_weights(self) -> np.ndarray:
        """Multiplicity of each rfft coefficient in the full spectrum."""
        nz = self.points[2]
        w = np.full(self.spectral_shape[2], 2.0)
        w[0] = 1.0
        w[-1] = 1.0 if nz % 2 == 0 else 2.0
        return w[None, None, :]

    @cached_property
    def kfull(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """1-D wavenumbers of the full (complex) FFT layout, for interpolation."""
        return tuple(
            2 * np.pi / L * np.fft.fftfreq(n, 1.0 / n) for n, L in zip(self.points, self.periods)
        )


def make_grid(points_per_axis, period_per_axis=None) -> Grid:
    """Build a grid; ``period_per_axis`` defaults to ``2*pi`` on each axis."""
    if period_per_axis is None:
        period_per_axis = (2 * math.pi,) * 3
    return Grid(tuple(points_per_axis), tuple(period_per_axis))


# -- transforms ---------------------------------------------------------------

def to_spectral(grid: Grid, f: np.ndarray) -> np.ndarray:
    _check_shape(grid, f)
    return sfft.rfftn(f, axes=AXES, workers=_workers)


def to_physical(grid: Grid, fh: np.ndarray) -> np.ndarray:
    return sfft.irfftn(fh, s=grid.points, axes=AXES, workers=_workers)


def _check_shape(grid: Grid, f: np.ndarray) -> None:
    if f.shape[-3:] != grid.points:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.points}")


def dealias(grid: Grid, f: np.ndarray) -> np.ndarray:
    return to_physical(grid, to_spectral(grid, f) * grid.dealias_mask)


# -- differential operators ----------------------------------------------------

def gradient_hat(grid: Grid, fh: np.ndarray) -> np.ndarray:
    kx, ky, kz = grid.kd
    return np.stack([1j * kx * fh, 1j * ky * fh, 1j * kz * fh], axis=-4)


def gradient(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Spectral gradient; a new derivative axis is inserted before the grid axes."""
    return to_physical(grid, gradient_hat(grid, to_spectral(grid, f)))


def divergence_hat(grid: Grid, vh: np.ndarray) -> np.ndarray:
    kx, ky, kz = grid.kd
    return 1j * (kx * vh[..., 0, :, :, :] + ky * vh[..., 1, :, :, :] + kz * vh[..., 2, :, :, :])


def divergence(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Spectral divergence, contracting the last component axis."""
    if v.shape[-4] != 3:
        raise ValueError("divergence needs a 3-component axis before the grid axes")
    return to_physical(grid, divergence_hat(grid, to_spectral(grid, v)))


def column_divergence(grid: Grid, F: np.ndarray) -> np.ndarray:
    """``div F^t``: entry j is ``sum_i dF_ij/dx_i``, the divergence of column j."""
    return divergence(grid, np.swapaxes(F, 0, 1))


def laplacian(grid: Grid, f: np.ndarray) -> np.ndarray:
    return to_physical(grid, -grid.k2 * to_spectral(grid, f))


def leray_hat(grid: Grid, vh: np.ndarray) -> np.ndarray:
    """Apply ``I - k k^T / |k|^2`` mode by mode to a spectral vector field."""
    kx, ky, kz = grid.kd
    k2 = grid.kd2
    inv = np.divide(1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
    kdotv = (kx * vh[..., 0, :, :, :] + ky * vh[..., 1, :, :, :] + kz * vh[..., 2, :, :, :]) * inv
    return np.stack(
        [vh[..., 0, :, :, :] - kx * kdotv, vh[..., 1, :, :, :] - ky * kdotv, vh[..., 2, :, :, :] - kz * kdotv],
        axis=-4,
    )


def leray_project(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto discretely divergence-free fields."""
    return to_physical(grid, leray_hat(grid, to_spectral(grid, v)))


def project_columns(grid: Grid, F: np.ndarray) -> np.ndarray:
    """Leray-project each column of a tensor field."""
    return np.swapaxes(leray_project(grid, np.swapaxes(F, 0, 1)), 0, 1)


# -- nonlinear terms -----------------------------------------------------------

def _same_grid(grid: Grid, *fields: np.ndarray) -> None:
    for f in fields:
        if f.shape[-3:] != grid.points:
            raise ValueError(f"grid mismatch: field shape {f.shape} vs grid {grid.points}")


def convective_term(grid: Grid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``(u . grad) v`` for a vector ``u`` and any-rank ``v``; 2/3-rule dealiased."""
    _same_grid(grid, u, v)
    gv = gradient(grid, v)
    prod = np.einsum("lxyz,...lxyz->...xyz", u, gv)
    return dealias(grid, prod)


def elastic_stress_div(grid: Grid, F: np.ndarray, check: bool = True) -> np.ndarray:
    """Column form ``sum_k (F_k . grad) F_k`` of ``div(F F^t)``.

    The two agree only when the columns are divergence free, so by default
    the column constraint is verified first.
    """
    _same_grid(grid, F)
    if check:
        err = column_divergence_error(grid, F)
        if err > COLUMN_TOL:
            raise ValueError(f"column constraint required: relative column divergence {err:.3e}")
    gF = gradient(grid, F)  # [i, k, l] = dF_ik/dx_l
    prod = np.einsum("lkxyz,iklxyz->ixyz", F, gF)
    return dealias(grid, prod)


def tensor_stress_div(grid: Grid, F: np.ndarray) -> np.ndarray:
    """``div(F F^t)`` through the dealiased product ``F F^t``; no constraint needed."""
    _same_grid(grid, F)
    ffT = dealias(grid, np.einsum("ikxyz,jkxyz->ijxyz", F, F))
    return divergence(grid, ffT)


def stretching_term(grid: Grid, u: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``(grad u) F`` with ``(grad u)_ij = du_i/dx_j``; dealiased."""
    _same_grid(grid, u, F)
    gu = gradient(grid, u)
    return dealias(grid, np.einsum("ilxyz,ljxyz->ijxyz", gu, F))


# -- norms and constraint measures --------------------------------------------

def l2_norm(grid: Grid, f: np.ndarray) -> float:
    """Discrete L2 norm over the box, summing all leading components."""
    return float(np.sqrt(np.sum(f * f) * grid.cell_volume))


def spectral_l2_norm(grid: Grid, fh: np.ndarray) -> float:
    """L2 norm from rfft coefficients (Parseval)."""
    s = np.sum(grid.rfft_weights * (fh.real**2 + fh.imag**2))
    return float(np.sqrt(s * grid.cell_volume / grid.size))


def rms(f: np.ndarray) -> float:
    n = int(np.prod(f.shape[-3:]))
    return float(np.sqrt(np.sum(f * f) / n))


def divergence_error(grid: Grid, v: np.ndarray) -> float:
    """``max|div v| / (rms(v) * kmax)``; zero for a zero field."""
    scale = rms(v) * grid.kmax
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(divergence(grid, v)))) / scale


def column_divergence_error(grid: Grid, F: np.ndarray) -> float:
    """Worst column of ``divergence_error`` over the three columns of F."""
    return max(divergence_error(grid, F[:, j]) for j in range(3))


# -- random fields and spectra -------------------------------------------------

def default_kcut(grid: Grid) -> float:
    """Largest physical wavenumber magnitude kept isotropically by the 2/3 rule."""
    return min(2 * np.pi / L * ((n - 1) // 3) for n, L in zip(grid.points, grid.periods))


def random_solenoidal_field(
    grid: Grid,
    slope: float = -5.0 / 3.0,
    amplitude: float = 1.0,
    seed=0,
    kcut: float | None = None,
) -> np.ndarray:
    """Gaussian random divergence-free vector field with a power-law spectrum.

    The shell-summed energy spectrum scales like ``k**slope`` for
    ``0 < |k| <= kcut`` and ``sqrt(mean |v|^2) == amplitude``.  Coefficients
    are drawn on an integer-mode lattice that depends only on ``kcut`` and the
    periods, so two grids with the same periods and ``kcut`` produce the same
    continuous field sampled at different resolutions.
    """
    if not slope < 0:
        raise ValueError("slope must be negative")
    if kcut is None:
        kcut = default_kcut(grid)
    K = [int(math.floor(kcut * L / (2 * np.pi) + 1e-9)) for L in grid.periods]
    for k_i, n in zip(K, grid.points):
        if 3 * k_i >= n:
            raise ValueError(f"kcut={kcut} is not resolved below the dealias cutoff of {grid.points}")
    rng = np.random.default_rng(seed)
    shape = tuple(2 * k_i + 1 for k_i in K)
    a = rng.standard_normal((3,) + shape) + 1j * rng.standard_normal((3,) + shape)
    c = 0.5 * (a + np.conj(a[:, ::-1, ::-1, ::-1]))

    n_axes = [np.arange(-k_i, k_i + 1) for k_i in K]
    kx = (2 * np.pi / grid.periods[0] * n_axes[0])[:, None, None]
    ky = (2 * np.pi / grid.periods[1] * n_axes[1])[None, :, None]
    kz = (2 * np.pi / grid.periods[2] * n_axes[2])[None, None, :]
    k2 = kx**2 + ky**2 + kz**2
    kmag = np.sqrt(k2)
    keep = (k2 > 0) & (kmag <= kcut * (1 + 1e-12))
    shape_fn = np.where(keep, np.power(np.where(keep, kmag, 1.0), (slope - 2.0) / 2.0), 0.0)
    c = c * shape_fn
    inv = np.divide(1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
    kdotc = (kx * c[0] + ky * c[1] + kz * c[2]) * inv
    c = np.stack([c[0] - kx * kdotc, c[1] - ky * kdotc, c[2] - kz * kdotc])

    energy = float(np.sum(np.abs(c) ** 2))
    if energy == 0.0:
        return np.zeros((3,) + grid.points)
    c *= amplitude / math.sqrt(energy)

    full = np.zeros((3,) + grid.points, dtype=complex)
    ix = np.ix_(*(np.mod(n, N) for n, N in zip(n_axes, grid.points)))
    full[(slice(None),) + ix] = c * grid.size
    return np.ascontiguousarray(sfft.ifftn(full, axes=AXES, workers=_workers).real)


def shell_spectrum(grid: Grid, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shell-summed spectrum ``E(k)`` of ``mean |v|^2 / 2`` on integer shells of ``dk``."""
    vh = to_spectral(grid, v) / grid.size
    dens = 0.5 * grid.rfft_weights * np.sum(np.abs(vh) ** 2, axis=tuple(range(vh.ndim - 3)))
    dk = min(2 * np.pi / L for L in grid.periods)
    shell = np.rint(np.sqrt(grid.k2) / dk).astype(int)
    E = np.bincount(shell.ravel(), weights=dens.ravel())
    return np.arange(len(E)) * dk, E


def fit_spectrum_slope(k: np.ndarray, E: np.ndarray, kmin: float, kmax: float) -> float:
    """Least-squares slope of ``log E`` against ``log k`` on ``kmin <= k <= kmax``."""
    sel = (k >= kmin) & (k <= kmax) & (E > 0)
    if sel.sum() < 2:
        raise ValueError("need at least two populated shells to fit a slope")
    return float(np.polyfit(np.log(k[sel]), np.log(E[sel]), 1)[0])
