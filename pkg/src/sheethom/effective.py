"""Effective permittivity from cell solutions, plus closed-form special cases.

With ``F_j = e_j + grad chi_j`` the effective tensor is

    eps_eff[:, j] = int_Y eps F_j  +  (i / w) int_S sigma P_T F_j

(``-1/(iw) = i/w``).  Testing the cell problem with ``conj(chi_i)`` gives an
equivalent energy form in which ``e_i`` is replaced by
``e_i + grad conj(chi_i)``; its imaginary quadratic form is a sum of lossy
integrals and so exposes coercivity.  Both forms are evaluated from the same
quadrature data, and their difference measures how well the discrete cell
problem was solved.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .cellsolver import CellSolution, assemble_cell_system, build_mesh, solve_correctors
from .core import CellGeometry, FlatSheet, MaterialModel, imag_hermitian_part, tangential_projection


class ENZRegimeError(ValueError):
    """The sheet conductivity is not in the plasmonic regime (``Im sigma > 0``, ``Re sigma`` small)."""


@dataclasses.dataclass(frozen=True)
class EffectiveTensor:
    """An effective permittivity together with its diagnostics.

    Attributes:
        eps_eff: The 3x3 tensor reported by the formula that produced it.
        eps_average: Tensor from the flux-average formula.
        eps_energy: Tensor from the energy formula.
        coercivity_margin: Smallest eigenvalue of the imaginary Hermitian part.
        formula_gap: Largest entrywise difference between the two formulas.
        formula: ``"average"`` or ``"energy"``.
    """

    eps_eff: np.ndarray
    eps_average: np.ndarray
    eps_energy: np.ndarray
    coercivity_margin: float
    formula_gap: float
    formula: str = "average"


def _check_consistent(solution: CellSolution, materials: Optional[MaterialModel], geometry) -> None:
    system = solution.system
    if solution.grad_chi.shape[0] != system.mesh.n_elements or solution.chi.shape[0] != system.n:
        raise ValueError("solution does not match its mesh")
    if geometry is not None and geometry != system.mesh.geometry:
        raise ValueError("geometry differs from the one the cell system was assembled on")
    if materials is not None and not np.isclose(float(materials.omega), system.omega, rtol=1e-14, atol=0.0):
        raise ValueError(f"materials.omega = {materials.omega} differs from the assembled omega = {system.omega}")


def _both_formulas(solution: CellSolution) -> tuple[np.ndarray, np.ndarray]:
    s = solution.system
    vw = s.volume_weight
    fw = s.face_weight

    field = s.drive_q + solution.grad_chi  # (ne, 8, 3, 3), column j is F_j
    test = s.drive_q + np.conj(solution.grad_chi)
    flux = s.eps_q @ field
    vol_avg = vw * np.einsum("eqik,eqkj->ij", s.jac_q, flux)
    vol_energy = vw * np.einsum("eqki,eqkj->ij", test, flux)

    trace = s.surf_drive_q + solution.surf_grad_chi
    trace_test = s.surf_drive_q + np.conj(solution.surf_grad_chi)
    surf_avg = fw * np.einsum("fqik,fqkj->ij", s.surf_current_q, trace)
    surf_energy = fw * np.einsum("fqki,fqkl,fqlj->ij", trace_test, s.surf_coef_q, trace)

    factor = 1j / s.omega
    return vol_avg + factor * surf_avg, vol_energy + factor * surf_energy


def _package(solution: CellSolution, formula: str) -> EffectiveTensor:
    avg, energy = _both_formulas(solution)
    chosen = avg if formula == "average" else energy
    return EffectiveTensor(
        eps_eff=chosen,
        eps_average=avg,
        eps_energy=energy,
        coercivity_margin=coercivity_margin(chosen),
        formula_gap=float(np.max(np.abs(avg - energy))),
        formula=formula,
    )


def effective_tensor(
    solution: CellSolution, materials: Optional[MaterialModel] = None, geometry: Optional[CellGeometry] = None
) -> EffectiveTensor:
    """Effective tensor from the flux average of ``eps (I + grad chi)`` and the sheet current.

    ``materials`` and ``geometry`` are optional and only checked against the
    data the solution was assembled from.

    Raises:
        ValueError: if the solution, geometry or frequency do not match.
    """
    _check_consistent(solution, materials, geometry)
    return _package(solution, "average")


def effective_tensor_energy(
    solution: CellSolution, materials: Optional[MaterialModel] = None, geometry: Optional[CellGeometry] = None
) -> EffectiveTensor:
    """Effective tensor from the energy pairing of ``e_j + grad chi_j`` with ``e_i + grad conj(chi_i)``."""
    _check_consistent(solution, materials, geometry)
    return _package(solution, "energy")


def compute_effective(
    materials: MaterialModel,
    geometry: CellGeometry,
    *,
    x_macro=(0.0, 0.0, 0.0),
    tol: float = 1e-10,
    method: str = "auto",
    max_iter: int = 2000,
    eta: float = 0.0,
) -> tuple[EffectiveTensor, CellSolution]:
    """Assembles, solves and evaluates the effective tensor at one macroscopic point."""
    system = assemble_cell_system(build_mesh(geometry), materials, x_macro, eta=eta)
    solution = solve_correctors(system, tol, method=method, max_iter=max_iter)
    return effective_tensor(solution), solution


def coercivity_margin(eps_eff, samples: int = 256, *, seed: int = 0) -> float:
    """Lower bound of ``Im(xi^H eps xi) / |xi|^2`` over complex directions ``xi``.

    The exact value is the smallest eigenvalue of ``(eps - eps^H) / 2i``;
    random unit vectors are also evaluated and the smaller of the two
    minima is returned, which guards against a wrong eigen-solve.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    eps = np.asarray(eps_eff, dtype=complex)
    herm = imag_hermitian_part(eps)
    exact = float(np.linalg.eigvalsh(herm)[0])
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((samples, 3)) + 1j * rng.standard_normal((samples, 3))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    sampled = float(np.min(np.einsum("si,ij,sj->s", np.conj(xi), eps, xi).imag))
    return min(exact, sampled)


# ---------------------------------------------------------------------------
# Closed-form special cases


def _midpoints(m: int) -> np.ndarray:
    return (np.arange(m) + 0.5) / m


_BOX_OFFSET = 0.1234567


def _box_flux_defect(coef, dims: Sequence[int], fixed: dict, boxes: int, order: int) -> float:
    """Largest net flux of the columns of ``coef`` out of a grid of boxes.

    ``coef(y)`` returns (..., 3, 3) tensors.  The boxes tile the unit cell in
    the zero-based coordinates ``dims``; the other coordinates are held at
    ``fixed``.  Faces sit at ``(k + offset) / boxes`` so that jumps on simple
    rational planes fall strictly inside a box.  The result is relative to
    ``max|coef|`` times the face measure.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    h = 1.0 / boxes
    starts = (np.arange(boxes) + _BOX_OFFSET) * h
    line = (starts[:, None] + 0.5 * h * (nodes + 1.0)).ravel()  # composite points along one axis
    line_w = np.tile(0.5 * h * weights, boxes)
    m = len(dims)
    total = np.zeros((boxes,) * m + (3,), dtype=complex)
    scale = np.finfo(float).tiny
    for a, k in enumerate(dims):
        others = [d for d in dims if d != k]
        shape = (boxes,) + (line.size,) * len(others)
        pts = np.zeros(shape + (3,))
        for c, value in fixed.items():
            pts[..., c] = value
        w = np.ones(shape[1:])
        for i, o in enumerate(others):
            view = [1] * len(shape)
            view[i + 1] = line.size
            pts[..., o] = line.reshape(view)
            wview = [1] * len(others)
            wview[i] = line.size
            w = w * line_w.reshape(wview)
        pts[..., k] = starts.reshape((boxes,) + (1,) * len(others))
        f_lo = coef(pts)[..., k, :]
        pts[..., k] += h
        f_hi = coef(pts)[..., k, :]
        scale = max(scale, float(np.max(np.abs(f_lo))))
        flux = (f_hi - f_lo) * w[None, ..., None]
        # sum the quadrature points of each face
        flux = flux.reshape((boxes,) + sum(((boxes, order),) * len(others), ()) + (3,))
        flux = flux.sum(axis=tuple(2 + 2 * i for i in range(len(others))))
        total += np.moveaxis(flux, 0, a)
    face = h ** (m - 1)
    return float(np.max(np.abs(total)) / (scale * face))


def divergence_defect(
    materials: MaterialModel, *, x_macro=(0.0, 0.0, 0.0), boxes: int = 8, order: int = 3
) -> float:
    """Largest net flux of an ``eps`` column through the faces of a box, relative to ``max|eps|`` times the face area.

    The flux form sees jumps as well as smooth variation, and it vanishes
    exactly when every ``eps_kj`` is independent of ``y_k``, which is the
    usual way the columns are divergence free.
    """
    x = np.asarray(x_macro, dtype=float)
    return _box_flux_defect(lambda y: materials.eps(x, y), [0, 1, 2], {}, boxes, order)


def sheet_divergence_defect(
    materials: MaterialModel, geometry: CellGeometry, *, x_macro=(0.0, 0.0, 0.0), boxes: int = 8, order: int = 3
) -> float:
    """Same as :func:`divergence_defect` for the in-plane divergence of ``sigma P_T`` on the sheet."""
    axis = geometry.normal_axis
    normal = np.eye(3)[axis - 1]
    x = np.asarray(x_macro, dtype=float)
    t = [a for a in range(3) if a != axis - 1]
    return _box_flux_defect(
        lambda y: materials.sigma_t(x, y, normal), t, {axis - 1: geometry.sheet.offset}, boxes, order
    )


def analytic_simple(
    materials: MaterialModel,
    geometry: CellGeometry,
    *,
    x_macro=(0.0, 0.0, 0.0),
    quadrature: int = 64,
    div_tol: float = 1e-12,
) -> np.ndarray:
    """Effective tensor when the correctors vanish: ``<eps> + (i/w) <sigma P_T>_S``.

    The averages use the midpoint rule with ``quadrature`` points per axis,
    which is exact for piecewise constants whose jumps lie on the rule's
    cell boundaries and spectrally accurate for smooth periodic data.

    Raises:
        ValueError: if the sheet is not flat, or the columns of ``eps`` (or of
            ``sigma P_T`` along the sheet) have a net flux through small boxes
            above ``div_tol`` (see :func:`divergence_defect`).
    """
    if not isinstance(geometry.sheet, FlatSheet):
        raise ValueError("analytic_simple needs a flat sheet")
    defect = divergence_defect(materials, x_macro=x_macro)
    if defect > div_tol:
        raise ValueError(f"eps columns are not divergence free (defect {defect:.3e} > {div_tol:.1e})")
    sheet_defect = sheet_divergence_defect(materials, geometry, x_macro=x_macro)
    if sheet_defect > div_tol:
        raise ValueError(f"sigma P_T columns are not divergence free along the sheet (defect {sheet_defect:.3e})")

    mid = _midpoints(quadrature)
    y = np.stack(np.meshgrid(mid, mid, mid, indexing="ij"), axis=-1).reshape(-1, 3)
    x = np.broadcast_to(np.asarray(x_macro, dtype=float), y.shape)
    eps_avg = materials.eps(x, y).mean(axis=0)

    axis = geometry.normal_axis
    t = [a for a in range(3) if a != axis - 1]
    uv = np.stack(np.meshgrid(mid, mid, indexing="ij"), axis=-1).reshape(-1, 2)
    ys = np.zeros((uv.shape[0], 3))
    ys[:, t] = uv
    ys[:, axis - 1] = geometry.sheet.offset
    xs = np.broadcast_to(np.asarray(x_macro, dtype=float), ys.shape)
    sig_avg = materials.sigma_t(xs, ys, np.eye(3)[axis - 1]).mean(axis=0)
    return eps_avg + (1j / float(materials.omega)) * sig_avg


class ENZSpacing(NamedTuple):
    d0: float
    residue: float
    plasmonic_length: complex


def check_enz_regime(sigma_sheet: complex, *, ratio: float = 0.1) -> None:
    """Requires ``Im sigma > 0`` and ``|Re sigma| <= ratio * Im sigma``."""
    sigma_sheet = complex(sigma_sheet)
    if not sigma_sheet.imag > 0:
        raise ENZRegimeError(f"Im sigma must be positive for an epsilon-near-zero design, got {sigma_sheet}")
    if abs(sigma_sheet.real) > ratio * sigma_sheet.imag:
        raise ENZRegimeError(
            f"|Re sigma| = {abs(sigma_sheet.real):.3g} exceeds {ratio:g} * Im sigma = {ratio * sigma_sheet.imag:.3g}"
        )


def enz_spacing(sigma_sheet: complex, omega: float, eps_host: complex, f_mean: float = 1.0) -> ENZSpacing:
    """Sheet spacing at which the tangential effective permittivity vanishes.

    ``d0 = Re(-i sigma / (w eps_host)) / f_mean`` where ``sigma`` is the
    physical sheet conductivity and ``f_mean`` the cell average of the
    in-plane permittivity profile.  ``residue`` is the magnitude of the
    imaginary part that was discarded; it is small when ``Re sigma`` is.

    Raises:
        ValueError: if ``f_mean <= 0`` or ``omega <= 0``.
        ENZRegimeError: if the conductivity is outside the plasmonic regime.
    """
    if not f_mean > 0:
        raise ValueError(f"f_mean must be positive, got {f_mean}")
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    check_enz_regime(sigma_sheet)
    length = -1j * complex(sigma_sheet) / (omega * complex(eps_host))
    d0 = length / f_mean
    return ENZSpacing(d0=float(d0.real), residue=float(abs(d0.imag)), plasmonic_length=length)


def _gauss_panels(breaks: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    pts = 0.5 * (b - a) * nodes + 0.5 * (a + b)
    wts = 0.5 * (b - a) * weights
    return pts.ravel(), wts.ravel()


def layered_closed_form(
    eps_profile: Union[complex, Callable[[np.ndarray], np.ndarray]],
    sigma_const: complex,
    omega: float,
    *,
    normal_axis: int = 3,
    breakpoints: Sequence[float] = (),
    panels: int = 64,
    order: int = 16,
) -> np.ndarray:
    """Exact effective tensor of a laminate with one flat sheet per period.

    ``eps_profile(t)`` is the scalar permittivity as a function of the normal
    coordinate ``t`` in [0, 1).  In-plane entries are ``<eps> + i sigma / w``,
    the normal entry is the harmonic mean ``1 / <1/eps>``.  The averages use
    composite Gauss-Legendre quadrature; discontinuities of the profile must
    be listed in ``breakpoints`` for full accuracy.

    Raises:
        ValueError: if the profile vanishes at a quadrature point.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    breaks = np.union1d(np.linspace(0.0, 1.0, panels + 1), np.asarray(breakpoints, dtype=float))
    breaks = breaks[(breaks >= 0.0) & (breaks <= 1.0)]
    t, w = _gauss_panels(breaks, order)
    if callable(eps_profile):
        values = np.asarray(eps_profile(t), dtype=complex) * np.ones_like(t)
    else:
        values = np.full(t.shape, complex(eps_profile))
    if np.any(values == 0) or not np.all(np.isfinite(values)):
        raise ValueError("permittivity profile vanishes or is not finite")
    mean = complex(np.sum(w * values))
    harmonic = 1.0 / complex(np.sum(w / values))
    proj = tangential_projection(normal_axis)
    return (mean + 1j * complex(sigma_const) / omega) * proj + harmonic * (np.eye(3) - proj)
