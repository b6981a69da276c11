"""Periodic potentials, cell averages and numerical two-scale pairings.

A zero-mean curl-free periodic field ``f = sum_k c_k exp(2 pi i k.y)`` is the
gradient of ``phi = sum_k d_k exp(2 pi i k.y)`` with
``d_k = (c_k . k) / (2 pi i |k|^2)``; the routines below do this on uniform
grids with the FFT.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

MEAN_TOL = 1e-10
CURL_TOL = 1e-8


class UnderResolvedError(ValueError):
    """Quadrature does not resolve the oscillation of the integrand."""


@dataclasses.dataclass(frozen=True)
class PeriodicField:
    """Samples on the uniform grid ``y = i / M`` of the ``dim``-dimensional unit cell.

    ``values`` has shape ``(M,) * dim`` for a scalar field and
    ``(M,) * dim + (dim,)`` for a vector field.
    """

    values: np.ndarray
    dim: int = 3

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if values.ndim not in (self.dim, self.dim + 1):
            raise ValueError(f"values of shape {values.shape} do not fit a {self.dim}-dimensional grid")
        grid = values.shape[: self.dim]
        if len(set(grid)) != 1 or grid[0] < 1:
            raise ValueError(f"grid must be M x ... x M, got {grid}")
        if values.ndim == self.dim + 1 and values.shape[-1] != self.dim:
            raise ValueError(f"vector fields need {self.dim} components, got {values.shape[-1]}")
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == self.dim + 1

    @property
    def mean(self) -> np.ndarray:
        axes = tuple(range(self.dim))
        return self.values.mean(axis=axes)

    def norm(self) -> float:
        """Root-mean-square of the samples (the discrete L2 norm on the cell)."""
        return float(np.sqrt(np.mean(np.abs(self.values) ** 2) * (self.dim if self.is_vector else 1)))

    @staticmethod
    def points(size: int, dim: int = 3) -> np.ndarray:
        axes = [np.arange(size) / size] * dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @classmethod
    def sample(cls, func: Callable[[np.ndarray], np.ndarray], size: int, dim: int = 3) -> "PeriodicField":
        """Evaluates ``func(y)`` with ``y`` of shape ``(M,)*dim + (dim,)``."""
        return cls(np.asarray(func(cls.points(size, dim))), dim)


def _wavenumbers(size: int, dim: int) -> np.ndarray:
    """Integer wavenumbers of the grid with Nyquist modes set to zero."""
    k1 = np.fft.fftfreq(size, 1.0 / size)
    if size % 2 == 0:
        k1[size // 2] = 0.0
    return np.stack(np.meshgrid(*([k1] * dim), indexing="ij"), axis=-1)


def _coefficients(field: PeriodicField) -> np.ndarray:
    axes = tuple(range(field.dim))
    return np.fft.fftn(field.values, axes=axes) / field.size**field.dim


def curl_defect(field: PeriodicField) -> float:
    """Relative size of the non-gradient part of a vector field, ``||c - k (k.c)/|k|^2|| / ||c||``."""
    if not field.is_vector:
        raise ValueError("curl_defect needs a vector field")
    c = _coefficients(field)
    k = _wavenumbers(field.size, field.dim)
    k2 = np.sum(k**2, axis=-1)
    safe = np.where(k2 == 0, 1.0, k2)
    longitudinal = k * (np.sum(k * c, axis=-1) / safe)[..., None]
    longitudinal[k2 == 0] = 0.0
    transverse = c - longitudinal
    # Nyquist modes have zeroed wavenumbers here, so they count as defect.
    den = float(np.linalg.norm(c))
    return float(np.linalg.norm(transverse)) / den if den > 0 else 0.0


def fourier_potential(
    field: PeriodicField, *, mean_tol: float = MEAN_TOL, curl_tol: float = CURL_TOL
) -> PeriodicField:
    """Zero-mean scalar potential whose spectral gradient reproduces ``field``.

    Raises:
        ValueError: if the mean of ``field`` exceeds ``mean_tol`` times its
            norm, or its curl defect exceeds ``curl_tol``.
    """
    if not field.is_vector:
        raise ValueError("fourier_potential needs a vector field")
    norm = field.norm()
    mean = float(np.linalg.norm(field.mean))
    if mean > mean_tol * norm:
        raise ValueError(f"field has nonzero mean {mean:.3e} (relative {mean / max(norm, 1e-300):.3e})")
    defect = curl_defect(field)
    if defect > curl_tol:
        raise ValueError(f"field is not curl free: relative defect {defect:.3e} > {curl_tol:.1e}")

    c = _coefficients(field)
    k = _wavenumbers(field.size, field.dim)
    k2 = np.sum(k**2, axis=-1)
    safe = np.where(k2 == 0, 1.0, k2)
    d = np.sum(c * k, axis=-1) / (2j * np.pi * safe)
    d[k2 == 0] = 0.0
    axes = tuple(range(field.dim))
    phi = np.fft.ifftn(d * field.size**field.dim, axes=axes)
    if np.all(field.values.imag == 0):
        phi = phi.real.astype(complex)
    return PeriodicField(phi, field.dim)


def spectral_gradient(field: PeriodicField) -> PeriodicField:
    """Gradient of a scalar periodic field by spectral differentiation."""
    if field.is_vector:
        raise ValueError("spectral_gradient needs a scalar field")
    axes = tuple(range(field.dim))
    c = np.fft.fftn(field.values, axes=axes)
    k = _wavenumbers(field.size, field.dim)
    grad = np.fft.ifftn(2j * np.pi * k * c[..., None], axes=axes)
    return PeriodicField(grad, field.dim)


def cell_average(samples: Union[PeriodicField, np.ndarray]) -> np.ndarray:
    """Arithmetic mean of cell samples.

    Arrays with more than one axis are read as ``(points..., components)``
    and averaged over all but the last axis; wrap grid data in
    :class:`PeriodicField` to average scalar grids.

    Raises:
        ValueError: for empty input.
    """
    if isinstance(samples, PeriodicField):
        return np.asarray(samples.mean)
    arr = np.asarray(samples)
    if arr.size == 0:
        raise ValueError("no samples")
    if arr.ndim <= 1:
        return np.asarray(arr.mean())
    return arr.reshape(-1, arr.shape[-1]).mean(axis=0)


class PairingResult(NamedTuple):
    finite: complex
    limit: complex
    richardson_gap: float


def _gauss_grid(domain: Sequence[tuple[float, float]], panels: Sequence[int], order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    pts, wts = [], []
    for (lo, hi), n in zip(domain, panels):
        edges = np.linspace(lo, hi, n + 1)
        a, b = edges[:-1, None], edges[1:, None]
        pts.append((0.5 * (b - a) * nodes + 0.5 * (a + b)).ravel())
        wts.append((0.5 * (b - a) * weights).ravel())
    grids = np.meshgrid(*pts, indexing="ij")
    w = np.ones_like(grids[0])
    for wi in np.meshgrid(*wts, indexing="ij"):
        w = w * wi
    return np.stack(grids, axis=-1), w


def _pair(u, psi, x, y, w) -> complex:
    return complex(np.sum(w * np.sum(np.asarray(u(x, y)) * np.asarray(psi(x, y)), axis=-1)))


def two_scale_pairing(
    U: Callable[[np.ndarray, np.ndarray], np.ndarray],
    d: float,
    Psi: Callable[[np.ndarray, np.ndarray], np.ndarray],
    grid: Sequence[int],
    *,
    domain: Optional[Sequence[tuple[float, float]]] = None,
    cell_points: int = 32,
    order: int = 4,
    tol: float = 1e-3,
    oscillating: Optional[Sequence[int]] = None,
) -> PairingResult:
    """``int_Omega U(x, x/d) . Psi(x, x/d) dx`` and its two-scale limit ``int int_Y U . Psi dy dx``.

    ``U`` and ``Psi`` map points ``x`` and ``y`` of shape ``(..., n)`` to
    vectors of shape ``(..., m)``; ``n = len(grid)`` is the dimension of the
    box ``domain`` (default the unit box).  ``grid[i]`` is the number of
    quadrature points along axis ``i`` (Gauss-Legendre panels of ``order``
    points).  Axes listed in ``oscillating`` (zero based, default all) must
    carry at least 8 points per period ``d``.  The oscillatory integral is recomputed on a grid twice as fine
    and the relative difference is reported as ``richardson_gap``.  The
    limit uses ``cell_points`` Gauss points per cell axis.

    Raises:
        UnderResolvedError: if an oscillating axis has fewer than 8 points per period
            ``d`` or the refined integral differs by more than ``tol``.
    """
    n = len(grid)
    if n < 1:
        raise ValueError("grid needs at least one axis")
    domain = [(0.0, 1.0)] * n if domain is None else [tuple(map(float, b)) for b in domain]
    if len(domain) != n:
        raise ValueError("domain and grid have different dimensions")
    if d <= 0:
        raise ValueError("d must be positive")
    oscillating = range(n) if oscillating is None else list(oscillating)
    panels = []
    for axis, ((lo, hi), pts) in enumerate(zip(domain, grid)):
        per_period = pts * d / (hi - lo)
        if axis in oscillating and per_period < 8:
            raise UnderResolvedError(f"{per_period:.2f} points per period on axis {axis}; at least 8 are needed")
        panels.append(max(1, math.ceil(pts / order)))

    def oscillatory(pan):
        x, w = _gauss_grid(domain, pan, order)
        return _pair(U, Psi, x, x / d, w)

    coarse = oscillatory(panels)
    fine = oscillatory([2 * p for p in panels])
    gap = abs(fine - coarse) / max(abs(fine), np.finfo(float).tiny)
    if gap > tol:
        raise UnderResolvedError(f"refining the grid changes the pairing by {gap:.3e} > {tol:.1e}")

    x, wx = _gauss_grid(domain, [max(1, math.ceil(p / order)) for p in grid], order)
    yq, wy = _gauss_grid([(0.0, 1.0)] * n, [max(1, cell_points // order)] * n, order)
    xs = x.reshape(-1, n)
    wxs = wx.reshape(-1)
    ys = yq.reshape(-1, n)
    wys = wy.reshape(-1)
    total = 0.0 + 0.0j
    for start in range(0, xs.shape[0], 4096):
        xb = xs[start : start + 4096]
        wb = wxs[start : start + 4096]
        xx = np.broadcast_to(xb[:, None, :], (xb.shape[0], ys.shape[0], n))
        yy = np.broadcast_to(ys[None, :, :], xx.shape)
        total += _pair(U, Psi, xx, yy, wb[:, None] * wys[None, :])
    return PairingResult(fine, complex(total), float(gap))
