"""Domain types, material admissibility checks and small tensor helpers.

Coefficient fields are plain Python values: a complex number, a 3x3 (or 2x2
for sheet conductivities) array, or a callable ``f(x, y)`` that maps arrays of
macroscopic points ``x`` and cell points ``y`` (both of shape ``(..., 3)``)
to an array of shape ``(...)`` or ``(..., 3, 3)``.  Cell points are wrapped
modulo one before every evaluation, so every field is Y-periodic by
construction.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Union

import numpy as np
from scipy.stats import qmc

Field = Union[complex, float, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]

# Lower bound ``c`` used when no explicit admissibility floor is given.
DEFAULT_FLOOR = 1e-8
DEFAULT_CEILING = 1e8


class InadmissibleMaterialError(ValueError):
    """Raised when coefficient data violate the lossy-medium assumptions."""


def tangential_projection(normal_axis: int) -> np.ndarray:
    """Returns the projector onto the plane orthogonal to a coordinate axis.

    Args:
        normal_axis: Sheet normal, one of 1, 2, 3.

    Returns:
        A real 3x3 diagonal matrix with a zero at ``normal_axis``.
    """
    if normal_axis not in (1, 2, 3):
        raise ValueError(f"normal_axis must be 1, 2 or 3, got {normal_axis!r}")
    diag = np.ones(3)
    diag[normal_axis - 1] = 0.0
    return np.diag(diag)


def normal_projection(normal: np.ndarray) -> np.ndarray:
    """Projectors ``I - n n^T`` for an array of unit normals of shape (..., 3)."""
    normal = np.asarray(normal, dtype=float)
    return np.eye(3) - normal[..., :, None] * normal[..., None, :]


def tangent_axes(normal_axis: int) -> tuple[int, int]:
    """Zero-based in-plane axes of a sheet with the given 1-based normal."""
    return tuple(a for a in range(3) if a != normal_axis - 1)  # type: ignore[return-value]


def wrap_cell(y: np.ndarray) -> np.ndarray:
    """Maps points into [0, 1); tiny negative inputs would otherwise round to 1."""
    r = np.mod(y, 1.0)
    return np.where(r >= 1.0, 0.0, r)


def _raw_eval(field: Field, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    if callable(field):
        value = np.asarray(field(x, wrap_cell(y)), dtype=complex)
        if value.shape in ((), (3, 3), (2, 2)):
            value = np.broadcast_to(value, batch + value.shape)
        return value
    value = np.asarray(field, dtype=complex)
    return np.broadcast_to(value, batch + value.shape)


def eval_volume(field: Field, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluates a permittivity field as 3x3 tensors of shape (..., 3, 3)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    value = _raw_eval(field, x, y)
    if value.shape == batch:
        return value[..., None, None] * np.eye(3)
    if value.shape == batch + (3, 3):
        return np.array(value)
    raise ValueError(f"volume coefficient has shape {value.shape}, expected {batch} or {batch + (3, 3)}")


def eval_surface(field: Field, x: np.ndarray, y: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Evaluates a sheet conductivity as tangential 3x3 tensors ``P sigma P``.

    Scalars become ``sigma * P``.  A 2x2 value is read in the coordinates of
    the two in-plane axes and is only accepted for axis-aligned normals.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    normal = np.asarray(normal, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1], normal.shape[:-1])
    proj = np.broadcast_to(normal_projection(normal), batch + (3, 3))
    value = _raw_eval(field, x, y)
    if value.shape == batch:
        return value[..., None, None] * proj
    if value.shape == batch + (2, 2):
        axis = _aligned_axis(normal)
        t1, t2 = tangent_axes(axis)
        full = np.zeros(batch + (3, 3), dtype=complex)
        full[..., [t1, t1, t2, t2], [t1, t2, t1, t2]] = value.reshape(batch + (4,))
        return full
    if value.shape == batch + (3, 3):
        return proj @ value @ proj
    raise ValueError(f"surface coefficient has shape {value.shape}")


def _aligned_axis(normal: np.ndarray) -> int:
    flat = normal.reshape(-1, 3)
    axis = int(np.argmax(np.abs(flat[0]))) + 1
    if not np.allclose(np.abs(flat), np.eye(3)[axis - 1]):
        raise ValueError("2x2 sheet conductivities require an axis-aligned sheet normal")
    return axis


@dataclasses.dataclass(frozen=True)
class MaterialModel:
    """Rescaled permittivity, rescaled sheet conductivity and constants.

    ``sigma`` is the d-independent conductivity: the physical sheet value at
    spacing ``d`` is ``d * sigma``.
    """

    epsilon: Field
    sigma: Field
    omega: float
    mu: float = 1.0
    lambda_imp: float = 1.0

    def __post_init__(self):
        for name in ("omega", "mu", "lambda_imp"):
            value = getattr(self, name)
            if not (np.isreal(value) and float(value) > 0):
                raise ValueError(f"{name} must be a positive real number, got {value!r}")

    def eps(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return eval_volume(self.epsilon, x, y)

    def sigma_t(self, x: np.ndarray, y: np.ndarray, normal: np.ndarray) -> np.ndarray:
        return eval_surface(self.sigma, x, y, normal)

    def replace(self, **changes) -> "MaterialModel":
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class FlatSheet:
    normal_axis: int = 3
    offset: float = 0.0

    def __post_init__(self):
        if self.normal_axis not in (1, 2, 3):
            raise ValueError(f"normal_axis must be 1, 2 or 3, got {self.normal_axis!r}")
        if not 0.0 <= self.offset < 1.0:
            raise ValueError(f"offset must lie in [0, 1), got {self.offset!r}")


@dataclasses.dataclass(frozen=True)
class GraphSheet:
    """Sheet ``{y3 = h(y1, y2)}`` given by a Y'-periodic height function.

    ``h`` and the optional ``grad_h`` are vectorized callables of ``(y1, y2)``;
    ``grad_h`` returns an array of shape (..., 2).  Without it, gradients are
    taken by centered differences.
    """

    h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_h: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-6

    normal_axis = 3

    def height(self, y1, y2) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.h(y1, y2), dtype=float), np.broadcast_shapes(np.shape(y1), np.shape(y2)))

    def gradient(self, y1, y2) -> np.ndarray:
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        if self.grad_h is not None:
            grad = np.asarray(self.grad_h(y1, y2), dtype=float)
            return np.broadcast_to(grad, np.broadcast_shapes(y1.shape, y2.shape) + (2,))
        s = self.fd_step
        g1 = (self.height(y1 + s, y2) - self.height(y1 - s, y2)) / (2 * s)
        g2 = (self.height(y1, y2 + s) - self.height(y1, y2 - s)) / (2 * s)
        return np.stack(np.broadcast_arrays(g1, g2), axis=-1)


Sheet = Union[FlatSheet, GraphSheet]


@dataclasses.dataclass(frozen=True)
class CellGeometry:
    """Structured N x N x N periodic grid on Y = [0, 1)^3 plus one sheet."""

    resolution: int
    sheet: Sheet = dataclasses.field(default_factory=FlatSheet)

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 4:
            raise ValueError(f"resolution must be an integer >= 4, got {self.resolution!r}")
        if isinstance(self.sheet, FlatSheet):
            plane = self.sheet.offset * self.resolution
            if abs(plane - round(plane)) > 1e-9:
                raise ValueError(
                    f"sheet offset {self.sheet.offset} is not on a grid plane of the N={self.resolution} grid"
                )
        elif isinstance(self.sheet, GraphSheet):
            check_graph_sheet(self.sheet)
        else:
            raise TypeError(f"unsupported sheet type {type(self.sheet).__name__}")

    @property
    def plane_index(self) -> int:
        """Grid plane carrying the (flat or pulled-back) sheet."""
        if isinstance(self.sheet, FlatSheet):
            return int(round(self.sheet.offset * self.resolution)) % self.resolution
        return 0

    @property
    def normal_axis(self) -> int:
        return self.sheet.normal_axis


def check_graph_sheet(sheet: GraphSheet, samples: int = 64) -> None:
    """Checks amplitude, periodicity and derivative bounds of a graph sheet."""
    t = (np.arange(samples) + 0.5) / samples
    y1, y2 = np.meshgrid(t, t, indexing="ij")
    h = sheet.height(y1, y2)
    if not np.all(np.isfinite(h)):
        raise ValueError("height function returned non-finite values")
    if np.max(np.abs(h)) > 1.0:
        raise ValueError(f"height amplitude {np.max(np.abs(h)):.3g} exceeds 1")
    shifted = sheet.height(y1 + 1.0, y2 + 1.0)
    if not np.allclose(h, shifted, atol=1e-10, rtol=0):
        raise ValueError("height function is not Y'-periodic")
    grad = sheet.gradient(y1, y2)
    if not np.all(np.isfinite(grad)):
        raise ValueError("height function is not differentiable at the sampled points")
    # Second derivatives by differencing the gradient on the sample grid.
    step = 1.0 / samples
    hess = np.concatenate(
        [np.gradient(grad[..., k], step, axis=a)[..., None] for k in range(2) for a in range(2)], axis=-1
    )
    if not np.all(np.isfinite(hess)):
        raise ValueError("height function has unbounded second derivatives")


@dataclasses.dataclass(frozen=True)
class AdmissibilityReport:
    min_im_eps: float
    max_abs_eps: float
    min_re_sigma: float
    max_abs_sigma: float
    passed: bool
    sample_count: int


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def imag_hermitian_part(a: np.ndarray) -> np.ndarray:
    """``(A - A^H) / 2i``, whose quadratic form is ``Im(xi^H A xi)``."""
    return (a - np.conj(np.swapaxes(a, -1, -2))) / 2j


def check_admissibility(
    materials: MaterialModel,
    samples: int = 1024,
    *,
    box: tuple[tuple[float, float], ...] = ((-1.0, 1.0),) * 3,
    normal_axis: int = 3,
    floor: float = DEFAULT_FLOOR,
    ceiling: float = DEFAULT_CEILING,
) -> AdmissibilityReport:
    """Samples the coefficient bounds ``c <= Im eps``, ``c <= Re sigma``.

    Points of the product Omega x Y come from an unscrambled Halton sequence,
    so a larger ``samples`` always contains the smaller sample set.  Tensor
    coefficients are judged by the extreme eigenvalues of the relevant
    Hermitian parts, the conductivity only on the sheet tangent plane.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    # Skip the origin of the sequence so that the first sample is interior.
    pts = qmc.Halton(d=6, scramble=False).random(samples + 1)[1:]
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    x = lo + pts[:, :3] * (hi - lo)
    y = pts[:, 3:]

    eps = materials.eps(x, y)
    im_eps = np.linalg.eigvalsh(imag_hermitian_part(eps))
    normal = np.eye(3)[normal_axis - 1]
    sig = materials.sigma_t(x, y, normal)
    t1, t2 = tangent_axes(normal_axis)
    sig_tt = sig[:, [t1, t2]][:, :, [t1, t2]]
    re_sig = np.linalg.eigvalsh(hermitian_part(sig_tt))

    min_im_eps = float(np.min(im_eps))
    max_abs_eps = float(np.max(np.linalg.norm(eps, ord=2, axis=(-2, -1))))
    min_re_sigma = float(np.min(re_sig))
    max_abs_sigma = float(np.max(np.linalg.norm(sig_tt, ord=2, axis=(-2, -1))))
    passed = (
        min_im_eps >= floor
        and min_re_sigma >= floor
        and np.isfinite(max_abs_eps)
        and np.isfinite(max_abs_sigma)
        and max_abs_eps <= ceiling
        and max_abs_sigma <= ceiling
    )
    return AdmissibilityReport(min_im_eps, max_abs_eps, min_re_sigma, max_abs_sigma, bool(passed), samples)


def as_tensor3(value) -> np.ndarray:
    """Promotes a scalar to a multiple of the identity; validates 3x3 input."""
    arr = np.asarray(value, dtype=complex)
    if arr.shape == ():
        return arr * np.eye(3)
    if arr.shape != (3, 3):
        raise ValueError(f"expected a scalar or a 3x3 tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor has non-finite entries")
    return arr
