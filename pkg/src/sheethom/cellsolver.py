"""Finite element solver for the periodic cell problem with a conducting sheet.

For each macroscopic direction ``e_j`` the corrector ``chi_j`` is the
zero-mean periodic function with

    b(chi_j, v) = iw * int_Y eps e_j . grad v  -  int_S sigma (e_j)_T . grad_T v

for all periodic ``v``, where

    b(u, v) = int_Y (-iw eps) grad u . grad v  +  int_S sigma grad_T u . grad_T v

(test functions are conjugated; the basis is real so conjugation only acts on
coefficient vectors).  The cell Y = [0, 1)^3 is split into N^3 trilinear
hexahedra and the sheet lies on a grid plane.  A graph-shaped sheet
``y3 = h(y')`` is first mapped to the plane ``z3 = 0`` by the volume
preserving change of variables ``y = g(z) = (z', z3 + h(z'))``.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (
    DEFAULT_FLOOR,
    CellGeometry,
    FlatSheet,
    GraphSheet,
    InadmissibleMaterialError,
    MaterialModel,
    hermitian_part,
    imag_hermitian_part,
    tangent_axes,
)

logger = logging.getLogger(__name__)

_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
# Local corner offsets: local index a = ox + 2*oy + 4*oz.
_CORNERS = np.array([[a & 1, (a >> 1) & 1, (a >> 2) & 1] for a in range(8)])
_FACE_CORNERS = np.array([[b & 1, (b >> 1) & 1] for b in range(4)])

DIRECT_SOLVE_MAX_N = 8


class SolverError(RuntimeError):
    """Raised when a linear solve does not reach the requested tolerance."""


def _shape_1d(t, o):
    return t if o else 1.0 - t


def _dshape_1d(o):
    return 1.0 if o else -1.0


def _volume_reference():
    """Values (8 qp, 8 basis) and local gradients (8 qp, 3, 8 basis)."""
    qp = np.array([[_GAUSS[q & 1], _GAUSS[(q >> 1) & 1], _GAUSS[(q >> 2) & 1]] for q in range(8)])
    values = np.ones((8, 8))
    grads = np.ones((8, 3, 8))
    for q in range(8):
        for a in range(8):
            o = _CORNERS[a]
            for d in range(3):
                values[q, a] *= _shape_1d(qp[q, d], o[d])
                for c in range(3):
                    grads[q, c, a] *= _dshape_1d(o[d]) if c == d else _shape_1d(qp[q, d], o[d])
    return qp, values, grads


def _face_reference():
    qp = np.array([[_GAUSS[q & 1], _GAUSS[(q >> 1) & 1]] for q in range(4)])
    values = np.ones((4, 4))
    grads = np.ones((4, 2, 4))
    for q in range(4):
        for b in range(4):
            o = _FACE_CORNERS[b]
            for d in range(2):
                values[q, b] *= _shape_1d(qp[q, d], o[d])
                for c in range(2):
                    grads[q, c, b] *= _dshape_1d(o[d]) if c == d else _shape_1d(qp[q, d], o[d])
    return qp, values, grads


_VOL_QP, _VOL_N, _VOL_DN = _volume_reference()
_FACE_QP, _FACE_N, _FACE_DN = _face_reference()


@dataclasses.dataclass(frozen=True)
class PeriodicMesh:
    """Structured periodic hexahedral mesh of the unit cell.

    Node ``(i, j, k)`` has index ``i*N*N + j*N + k`` and sits at ``(i, j, k)/N``.
    For a graph sheet all coordinates are the flattened ``z`` coordinates.
    """

    resolution: int
    nodes: np.ndarray  # (N^3, 3)
    elements: np.ndarray  # (N^3, 8) node indices
    element_qp: np.ndarray  # (N^3, 8, 3) Gauss points
    sheet_axis: int  # 1-based normal axis of the sheet plane
    sheet_plane: int  # grid index of the plane
    sheet_faces: np.ndarray  # (N^2, 4) node indices
    face_qp: np.ndarray  # (N^2, 4, 3) Gauss points on the plane
    face_weights: np.ndarray  # (N^2, 4) area factor sqrt(1 + |grad h|^2)
    geometry: CellGeometry

    @property
    def spacing(self) -> float:
        return 1.0 / self.resolution

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def reshape_nodal(self, values: np.ndarray) -> np.ndarray:
        n = self.resolution
        return values.reshape((n, n, n) + values.shape[1:])


def build_mesh(geometry: CellGeometry) -> PeriodicMesh:
    """Builds the periodic mesh and the sheet faces for a cell geometry."""
    n = geometry.resolution
    h = 1.0 / n
    ijk = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"), axis=-1).reshape(-1, 3)
    nodes = ijk * h

    corner = (ijk[:, None, :] + _CORNERS[None, :, :]) % n
    elements = np.ravel_multi_index((corner[..., 0], corner[..., 1], corner[..., 2]), (n, n, n))
    element_qp = (ijk[:, None, :] + _VOL_QP[None, :, :]) * h

    axis = geometry.normal_axis
    plane = geometry.plane_index
    t1, t2 = tangent_axes(axis)
    uv = np.stack(np.meshgrid(np.arange(n), np.arange(n), indexing="ij"), axis=-1).reshape(-1, 2)
    face_ijk = np.zeros((uv.shape[0], 4, 3), dtype=int)
    face_ijk[..., axis - 1] = plane
    face_ijk[..., t1] = (uv[:, None, 0] + _FACE_CORNERS[None, :, 0]) % n
    face_ijk[..., t2] = (uv[:, None, 1] + _FACE_CORNERS[None, :, 1]) % n
    sheet_faces = np.ravel_multi_index((face_ijk[..., 0], face_ijk[..., 1], face_ijk[..., 2]), (n, n, n))

    face_qp = np.zeros((uv.shape[0], 4, 3))
    face_qp[..., axis - 1] = plane * h
    face_qp[..., t1] = (uv[:, None, 0] + _FACE_QP[None, :, 0]) * h
    face_qp[..., t2] = (uv[:, None, 1] + _FACE_QP[None, :, 1]) * h

    if isinstance(geometry.sheet, GraphSheet):
        grad = geometry.sheet.gradient(face_qp[..., 0], face_qp[..., 1])
        face_weights = np.sqrt(1.0 + np.sum(grad**2, axis=-1))
    else:
        face_weights = np.ones(face_qp.shape[:2])

    return PeriodicMesh(
        resolution=n,
        nodes=nodes,
        elements=elements,
        element_qp=element_qp,
        sheet_axis=axis,
        sheet_plane=plane,
        sheet_faces=sheet_faces,
        face_qp=face_qp,
        face_weights=face_weights,
        geometry=geometry,
    )


# ---------------------------------------------------------------------------
# Graph-sheet change of variables


def graph_jacobian(grad_h: np.ndarray) -> np.ndarray:
    """Jacobian of ``g(z) = (z', z3 + h(z'))``: identity plus ``e3 grad h^T``."""
    jac = np.broadcast_to(np.eye(3), grad_h.shape[:-1] + (3, 3)).copy()
    jac[..., 2, 0] = grad_h[..., 0]
    jac[..., 2, 1] = grad_h[..., 1]
    return jac


def graph_tangent_matrix(grad_h: np.ndarray) -> np.ndarray:
    """Matrix mapping tangential traces on the graph to tangential traces on the plane."""
    m = np.broadcast_to(np.eye(3), grad_h.shape[:-1] + (3, 3)).copy()
    m[..., 0, 2] = grad_h[..., 0]
    m[..., 1, 2] = grad_h[..., 1]
    m[..., 2, 0] = -grad_h[..., 0]
    m[..., 2, 1] = -grad_h[..., 1]
    return m


def graph_normal(grad_h: np.ndarray) -> np.ndarray:
    n = np.concatenate([-grad_h, np.ones(grad_h.shape[:-1] + (1,))], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def graph_map(sheet: GraphSheet, z: np.ndarray) -> np.ndarray:
    y = np.array(z, dtype=float)
    y[..., 2] = z[..., 2] + sheet.height(z[..., 0], z[..., 1])
    return y


def _pulled_surface(materials: MaterialModel, sheet: GraphSheet, x: np.ndarray, z: np.ndarray):
    """Tangential conductivity on the graph and the plane-trace map ``M``."""
    grad = sheet.gradient(z[..., 0], z[..., 1])
    if not np.all(np.isfinite(grad)):
        raise ValueError("height function is not differentiable at the sheet quadrature points")
    y = graph_map(sheet, z)
    sig_t = materials.sigma_t(x, y, graph_normal(grad))
    m_inv = np.linalg.inv(graph_tangent_matrix(grad))
    return grad, sig_t, m_inv


def pullback_coefficients(
    materials: MaterialModel, geometry: CellGeometry, *, include_area: bool = True
) -> MaterialModel:
    """Maps a graph-sheet problem to an equivalent problem with a flat sheet at ``z3 = 0``.

    The volume coefficient becomes ``J^-1 eps(g(z)) J^-T`` (``det J = 1``) and
    the conductivity becomes ``w M^-T (P sigma P) M^-1`` with the area factor
    ``w = sqrt(1 + |grad h|^2)``.  Pass ``include_area=False`` to leave ``w``
    to the mesh face weights.

    Note that the macroscopic drive also changes: the linear function ``y_j``
    pulls back to ``g_j(z)``, whose gradient is ``J^T e_j``.
    """
    sheet = geometry.sheet
    if not isinstance(sheet, GraphSheet):
        raise ValueError("pullback_coefficients needs a GraphSheet geometry")
    def eps_pulled(x, z):
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        grad = sheet.gradient(z[..., 0], z[..., 1])
        if not np.all(np.isfinite(grad)):
            raise ValueError("height function is not differentiable at the sampled points")
        jinv = np.linalg.inv(graph_jacobian(grad))
        eps = materials.eps(x, graph_map(sheet, z))
        return jinv @ eps @ np.swapaxes(jinv, -1, -2)

    def sigma_pulled(x, z):
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        grad, sig_t, m_inv = _pulled_surface(materials, sheet, x, z)
        out = np.swapaxes(m_inv, -1, -2) @ sig_t @ m_inv
        if include_area:
            out = out * np.sqrt(1.0 + np.sum(grad**2, axis=-1))[..., None, None]
        return out

    return materials.replace(epsilon=eps_pulled, sigma=sigma_pulled)


# ---------------------------------------------------------------------------
# Assembly


@dataclasses.dataclass
class CellSystem:
    """Assembled Galerkin system together with the quadrature data it came from."""

    mesh: PeriodicMesh
    omega: float
    A: sp.csr_matrix
    A_vol: sp.csr_matrix
    A_surf: sp.csr_matrix
    rhs: np.ndarray  # (n_nodes, 3)
    rhs_scale: np.ndarray  # (3,) norm of the rhs assembled from absolute contributions
    gauge: np.ndarray  # (n_nodes,) weights of the mean functional
    h_norm_matrix: sp.csr_matrix  # Gram matrix of the H seminorm
    eps_q: np.ndarray  # (ne, 8, 3, 3) volume coefficient (pulled back)
    drive_q: np.ndarray  # (ne, 8, 3, 3) columns J^T e_j
    jac_q: np.ndarray  # (ne, 8, 3, 3) J, maps pulled-back fluxes back to y
    surf_coef_q: np.ndarray  # (nf, 4, 3, 3) pulled-back conductivity incl. area factor
    surf_current_q: np.ndarray  # (nf, 4, 3, 3) map plane trace -> sheet current in y
    surf_drive_q: np.ndarray  # (nf, 4, 3, 3) columns P_T J^T e_j
    coercivity_floor: float
    eta: float = 0.0

    @property
    def n(self) -> int:
        return self.rhs.shape[0]

    @property
    def volume_weight(self) -> float:
        return self.mesh.spacing**3 / 8.0

    @property
    def face_weight(self) -> float:
        return self.mesh.spacing**2 / 4.0

    def h_norm(self, u: np.ndarray) -> np.ndarray:
        """H norm ``sqrt(int |grad u|^2 + int_S |grad_T u|^2)``, column-wise."""
        u = np.asarray(u)
        return np.sqrt(np.maximum(np.real(np.sum(np.conj(u) * (self.h_norm_matrix @ u), axis=0)), 0.0))


def _element_matrices(grads, coef, weight):
    # grads (nq, dim, nb) in physical units, coef (ne, nq, dim, dim)
    return weight * np.einsum("qia,eqij,qjb->eab", grads, coef, grads, optimize=True)


def _scatter(idx, values, n):
    flat = idx.ravel()
    vals = values.ravel()
    return np.bincount(flat, weights=vals.real, minlength=n) + 1j * np.bincount(flat, weights=vals.imag, minlength=n)


def _sparse(rows_idx, local, n):
    nb = rows_idx.shape[1]
    rows = np.repeat(rows_idx, nb, axis=1).ravel()
    cols = np.tile(rows_idx, (1, nb)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    return mat.tocsr()


def assemble_cell_system(
    mesh: PeriodicMesh,
    materials: MaterialModel,
    x_macro=(0.0, 0.0, 0.0),
    *,
    eta: float = 0.0,
    floor: float = DEFAULT_FLOOR,
) -> CellSystem:
    """Assembles the sesquilinear form, the three right-hand sides and the gauge.

    Args:
        mesh: Periodic mesh from :func:`build_mesh`.
        materials: Coefficients; ``x_macro`` is frozen as a parameter.
        x_macro: Macroscopic point at which the cell problem is posed.
        eta: Optional positive shift ``eta * int grad u . grad v`` added to
            the form to boost coercivity.  It perturbs the corrector by
            O(eta) and is off by default.
        floor: Minimum accepted ``Im eps`` at the quadrature points.

    Raises:
        InadmissibleMaterialError: if ``Im eps`` drops below ``floor`` or the
            real part of the conductivity is negative somewhere.
    """
    if mesh.sheet_faces.shape[0] == 0:
        raise ValueError("mesh has no sheet faces")
    geometry = mesh.geometry
    n = mesh.n_nodes
    hs = mesh.spacing
    omega = float(materials.omega)
    x = np.asarray(x_macro, dtype=float).reshape(3)

    grads = _VOL_DN / hs
    face_grads = _FACE_DN / hs
    ne = mesh.n_elements
    nf = mesh.sheet_faces.shape[0]
    axis = mesh.sheet_axis
    t1, t2 = tangent_axes(axis)
    normal = np.eye(3)[axis - 1]

    if isinstance(geometry.sheet, GraphSheet):
        sheet = geometry.sheet
        zq = mesh.element_qp
        grad_h = sheet.gradient(zq[..., 0], zq[..., 1])
        if not np.all(np.isfinite(grad_h)):
            raise ValueError("height function is not differentiable at the quadrature points")
        jac = graph_jacobian(grad_h)
        jinv = np.linalg.inv(jac)
        eps_y = materials.eps(x, graph_map(sheet, zq))
        eps_q = jinv @ eps_y @ np.swapaxes(jinv, -1, -2)
        drive_q = np.swapaxes(jac, -1, -2)

        fq = mesh.face_qp
        grad_f, sig_t, m_inv = _pulled_surface(materials, sheet, x, fq)
        w = mesh.face_weights[..., None, None]
        surf_coef_q = w * (np.swapaxes(m_inv, -1, -2) @ sig_t @ m_inv)
        surf_current_q = w * (sig_t @ m_inv)
        proj = np.diag([1.0, 1.0, 0.0])
        surf_drive_q = proj @ np.swapaxes(graph_jacobian(grad_f), -1, -2)
    else:
        eps_q = materials.eps(x, mesh.element_qp)
        jac = np.broadcast_to(np.eye(3), (ne, 8, 3, 3))
        drive_q = jac
        sig_t = materials.sigma_t(x, mesh.face_qp, normal)
        surf_coef_q = sig_t * mesh.face_weights[..., None, None]
        surf_current_q = surf_coef_q
        proj = np.diag(np.where(np.arange(3) == axis - 1, 0.0, 1.0))
        surf_drive_q = np.broadcast_to(proj, (nf, 4, 3, 3))

    im_eps = np.linalg.eigvalsh(imag_hermitian_part(eps_q))
    sig_tt = surf_coef_q[..., [t1, t2], :][..., :, [t1, t2]]
    re_sig = np.linalg.eigvalsh(hermitian_part(sig_tt))
    min_im, min_re = float(im_eps.min()), float(re_sig.min())
    if not (np.all(np.isfinite(eps_q)) and np.all(np.isfinite(surf_coef_q))):
        raise InadmissibleMaterialError("coefficients are not finite at the quadrature points")
    if min_im < floor:
        raise InadmissibleMaterialError(f"min Im eps = {min_im:.3e} is below the floor {floor:.1e}")
    scale = max(float(np.max(np.abs(sig_tt))), 1.0)
    if min_re < -1e-12 * scale:
        raise InadmissibleMaterialError(f"min Re sigma = {min_re:.3e} is negative")

    vw = hs**3 / 8.0
    fw = hs**2 / 4.0

    k_vol = _element_matrices(grads, -1j * omega * eps_q, vw)
    a_vol = _sparse(mesh.elements, k_vol, n)

    # In-plane gradients of the face basis, embedded in 3D vectors.
    fg3 = np.zeros((4, 3, 4))
    fg3[:, t1, :] = face_grads[:, 0, :]
    fg3[:, t2, :] = face_grads[:, 1, :]
    k_surf = _element_matrices(fg3, surf_coef_q, fw)
    a_surf = _sparse(mesh.sheet_faces, k_surf, n)

    lap_vol = _sparse(mesh.elements, _element_matrices(grads, np.broadcast_to(np.eye(3), (1, 8, 3, 3)), vw)
                      .repeat(ne, axis=0), n)
    lap_surf = _sparse(
        mesh.sheet_faces, _element_matrices(fg3, np.broadcast_to(np.eye(3), (1, 4, 3, 3)), fw).repeat(nf, axis=0), n
    )
    h_gram = (lap_vol + lap_surf).tocsr()

    a = (a_vol + a_surf).tocsr()
    if eta > 0:
        a = (a + eta * lap_vol).tocsr()

    # rhs_j[a] = sum_q w [ iw (eps D_j) . grad phi_a - (sigma D_j,T) . grad_T phi_a ]
    vol_flux = np.einsum("eqkl,eqlj->eqkj", eps_q, drive_q)
    r_vol = 1j * omega * vw * np.einsum("qka,eqkj->eaj", grads, vol_flux)
    surf_flux = np.einsum("fqkl,fqlj->fqkj", surf_coef_q, surf_drive_q)
    r_surf = -fw * np.einsum("qka,fqkj->faj", fg3, surf_flux)
    rhs = np.stack(
        [_scatter(mesh.elements, r_vol[..., j], n) + _scatter(mesh.sheet_faces, r_surf[..., j], n) for j in range(3)],
        axis=1,
    )
    # Magnitude of the rhs before cancellation; the residual scale of near-zero columns.
    rhs_scale = np.array(
        [
            np.linalg.norm(_scatter(mesh.elements, np.abs(r_vol[..., j]), n))
            + np.linalg.norm(_scatter(mesh.sheet_faces, np.abs(r_surf[..., j]), n))
            for j in range(3)
        ]
    )
    # Constants span the left null space; remove the roundoff component along them.
    rhs -= rhs.mean(axis=0)

    return CellSystem(
        mesh=mesh,
        omega=omega,
        A=a,
        A_vol=a_vol,
        A_surf=a_surf,
        rhs=rhs,
        rhs_scale=rhs_scale,
        gauge=np.full(n, 1.0 / n),
        h_norm_matrix=h_gram,
        eps_q=eps_q,
        drive_q=np.asarray(drive_q),
        jac_q=np.asarray(jac),
        surf_coef_q=surf_coef_q,
        surf_current_q=surf_current_q,
        surf_drive_q=np.asarray(surf_drive_q),
        coercivity_floor=min(omega * min_im, min_re),
        eta=eta,
    )


# ---------------------------------------------------------------------------
# Solve


@dataclasses.dataclass
class CellSolution:
    """Correctors ``chi_j`` (nodal, shape (n, 3)) and their quadrature gradients."""

    system: CellSystem
    chi: np.ndarray
    grad_chi: np.ndarray  # (ne, 8, 3, 3): [element, qp, component, j]
    surf_grad_chi: np.ndarray  # (nf, 4, 3, 3): in-plane gradient on the sheet
    solver_residuals: np.ndarray
    mean_values: np.ndarray

    @classmethod
    def from_nodal(cls, system: CellSystem, chi: np.ndarray) -> "CellSolution":
        chi = np.asarray(chi, dtype=complex)
        if chi.shape != (system.n, 3):
            raise ValueError(f"corrector array has shape {chi.shape}, expected {(system.n, 3)}")
        grad, sgrad = corrector_gradients(system.mesh, chi)
        return cls(
            system=system,
            chi=chi,
            grad_chi=grad,
            surf_grad_chi=sgrad,
            solver_residuals=relative_residuals(system, chi),
            mean_values=system.gauge @ chi,
        )

    @classmethod
    def zero(cls, system: CellSystem) -> "CellSolution":
        return cls.from_nodal(system, np.zeros((system.n, 3), dtype=complex))

    @property
    def h_norms(self) -> np.ndarray:
        return self.system.h_norm(self.chi)


def corrector_gradients(mesh: PeriodicMesh, chi: np.ndarray):
    hs = mesh.spacing
    local = chi[mesh.elements]  # (ne, 8, 3)
    grad = np.einsum("qka,eaj->eqkj", _VOL_DN / hs, local)
    t1, t2 = tangent_axes(mesh.sheet_axis)
    flocal = chi[mesh.sheet_faces]  # (nf, 4, 3)
    fg = np.einsum("qca,faj->fqcj", _FACE_DN / hs, flocal)
    sgrad = np.zeros(fg.shape[:2] + (3, 3), dtype=complex)
    sgrad[:, :, t1, :] = fg[:, :, 0, :]
    sgrad[:, :, t2, :] = fg[:, :, 1, :]
    return grad, sgrad


def relative_residuals(system: CellSystem, chi: np.ndarray) -> np.ndarray:
    """Normwise backward errors ``||A chi - r|| / (||A|| ||chi|| + ||r||)`` per column.

    ``||r||`` is taken before cancellation between element contributions, so
    columns whose rhs vanishes analytically are judged against their natural
    size rather than their roundoff.
    """
    res = np.linalg.norm(system.A @ chi - system.rhs, axis=0)
    a_norm = spla.norm(system.A, np.inf)
    scale = a_norm * np.linalg.norm(chi, axis=0) + np.maximum(np.linalg.norm(system.rhs, axis=0), system.rhs_scale)
    return np.divide(res, scale, out=np.zeros_like(res), where=scale > 0)


def _pinned(system: CellSystem):
    # Constants span both null spaces, so fixing node 0 and dropping its
    # equation is exact for a compatible rhs.
    return system.A[1:, 1:].tocsc()


def solve_correctors(
    system: CellSystem,
    tol: float = 1e-10,
    *,
    method: str = "auto",
    max_iter: int = 2000,
    refine: int = 2,
) -> CellSolution:
    """Solves for the three correctors with the zero-mean gauge.

    The direct path pins one node, factorizes the reduced matrix and shifts
    the result to zero mean.  ``method`` is ``"direct"`` (sparse LU),
    ``"iterative"`` (GMRES on the rank-one regularized operator,
    preconditioned by :class:`LayeredPreconditioner`) or ``"auto"``, which picks the direct solver for
    ``N <= DIRECT_SOLVE_MAX_N``.

    Raises:
        SolverError: if a relative residual stays above ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = system.n
    if method == "auto":
        method = "direct" if system.mesh.resolution <= DIRECT_SOLVE_MAX_N else "iterative"

    if method == "direct":
        k = _pinned(system)
        lu = spla.splu(k, permc_spec="MMD_AT_PLUS_A")
        rhs = system.rhs[1:]
        sol = lu.solve(rhs)
        for _ in range(refine):
            sol = sol + lu.solve(rhs - k @ sol)
        chi = np.vstack([np.zeros((1, 3), dtype=complex), sol])
    elif method == "iterative":
        chi = _solve_iterative(system, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")

    chi = chi - system.gauge @ chi  # exact zero mean up to rounding
    solution = CellSolution.from_nodal(system, chi)
    worst = float(np.max(solution.solver_residuals))
    logger.debug("cell solve (%s): residuals %s", method, solution.solver_residuals)
    if not worst <= tol:
        raise SolverError(f"cell solve did not converge: relative residual {worst:.3e} > tol {tol:.1e}")
    return solution


def _normal_matrices(coef: np.ndarray, h: float):
    """Periodic 1D stiffness and mass along the normal with coefficients at the two Gauss points per layer."""
    n = coef.shape[0]
    phi = np.stack([1.0 - _GAUSS, _GAUSS], axis=1)  # (gauss, local node)
    stiff = np.zeros((n, n), dtype=complex)
    mass = np.zeros((n, n), dtype=complex)
    k_loc = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    for layer in range(n):
        nodes = [layer, (layer + 1) % n]
        m_loc = 0.5 * h * np.einsum("g,ga,gb->ab", coef[layer], phi, phi)
        stiff[np.ix_(nodes, nodes)] += np.mean(coef[layer]) * k_loc
        mass[np.ix_(nodes, nodes)] += m_loc
    return stiff, mass


class LayeredPreconditioner:
    """Inverse of the cell operator with coefficients averaged over each layer parallel to the sheet.

    The averaged operator is diagonalized by a discrete Fourier transform in
    the two tangential directions, leaving one dense ``N x N`` system along
    the normal per Fourier mode.  It inverts ``A + tau * 1 1^T / n`` exactly
    when the coefficients depend on the normal coordinate only; otherwise it
    serves as a preconditioner.  Off-diagonal coefficient entries are dropped.
    """

    def __init__(self, system: CellSystem, tau: float):
        mesh = system.mesh
        n = mesh.resolution
        h = mesh.spacing
        s = mesh.sheet_axis - 1
        t1, t2 = tangent_axes(mesh.sheet_axis)
        self._perm = (t1, t2, s)
        self._n = n

        coef = -1j * system.omega * system.eps_q
        if system.eta > 0:
            coef = coef + system.eta * np.eye(3)
        diag = np.diagonal(coef, axis1=-2, axis2=-1)  # (ne, 8, 3)
        upper = (_VOL_QP[:, s] > 0.5).astype(int)  # normal Gauss index of each qp
        grid = diag.reshape(n, n, n, 8, 3).transpose(*self._perm, 3, 4)
        layer = np.stack([grid[:, :, :, upper == g, :].mean(axis=(0, 1, 3)) for g in (0, 1)], axis=1)  # (n, 2, 3)

        theta = 2.0 * np.pi * np.arange(n) / n
        k_t = (2.0 / h) * (1.0 - np.cos(theta))
        m_t = (h / 3.0) * (2.0 + np.cos(theta))

        k_s, _ = _normal_matrices(layer[:, :, s], h)
        _, m_1 = _normal_matrices(layer[:, :, t1], h)
        _, m_2 = _normal_matrices(layer[:, :, t2], h)
        ops = (
            np.einsum("p,q,ij->pqij", k_t, m_t, m_1)
            + np.einsum("p,q,ij->pqij", m_t, k_t, m_2)
            + np.einsum("p,q,ij->pqij", m_t, m_t, k_s)
        )
        sig = np.diagonal(system.surf_coef_q, axis1=-2, axis2=-1).mean(axis=(0, 1))
        plane = mesh.sheet_plane
        ops[:, :, plane, plane] += sig[t1] * np.outer(k_t, m_t) + sig[t2] * np.outer(m_t, k_t)
        ops[0, 0] += tau / n
        self._inv = np.linalg.inv(ops)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        n = self._n
        field = np.asarray(v, dtype=complex).reshape(n, n, n).transpose(self._perm)
        coeffs = np.fft.fft2(field, axes=(0, 1))
        coeffs = np.einsum("pqij,pqj->pqi", self._inv, coeffs)
        out = np.fft.ifft2(coeffs, axes=(0, 1))
        return out.transpose(np.argsort(self._perm)).reshape(-1)


def _solve_iterative(system: CellSystem, tol: float, max_iter: int) -> np.ndarray:
    a = system.A
    n = system.n
    tau = float(np.mean(np.abs(a.diagonal())))
    ones = np.ones(n)

    op = spla.LinearOperator((n, n), matvec=lambda v: a @ v + tau * ones * (ones @ v) / n, dtype=complex)
    precond = spla.LinearOperator((n, n), matvec=LayeredPreconditioner(system, tau), dtype=complex)
    chi = np.zeros((n, 3), dtype=complex)
    for j in range(3):
        b = system.rhs[:, j]
        # Columns that vanish analytically stop at their roundoff level.
        atol = 0.01 * tol * system.rhs_scale[j]
        if np.linalg.norm(b) <= atol:
            continue
        x, info = spla.gmres(op, b, rtol=0.01 * tol, atol=atol, restart=100, maxiter=max_iter, M=precond)
        if info != 0:
            rel = np.linalg.norm(a @ x - b) / np.linalg.norm(b)
            raise SolverError(f"GMRES did not converge for j={j + 1} (info={info}, residual {rel:.3e})")
        chi[:, j] = x
    return chi


def corrector_residual(
    solution: CellSolution,
    system: Optional[CellSystem] = None,
    trials: int = 16,
    *,
    seed: int = 0,
) -> float:
    """Weak-form residual of the correctors against periodic test functions.

    Returns the maximum over ``j`` and over the test vectors of
    ``|b(chi_j, v) - r_j(v)| / (||v||_H * scale_j)`` with
    ``scale_j = max(w max|eps|, max|sigma|) * max(1, ||chi_j||_H)``.  The test
    vectors are ``trials`` random zero-mean vectors plus, per column, an
    approximate H-Riesz representer of the residual (a few CG steps on the
    Gram matrix).  Random vectors alone see only about ``1/sqrt(n)`` of the
    dual norm; every test vector still gives a lower bound of it.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    system = solution.system if system is None else system
    rng = np.random.default_rng(seed)
    resid = system.A @ solution.chi - system.rhs  # (n, 3); b(chi, v) - r(v) = v^H resid
    coef = max(system.omega * float(np.max(np.abs(system.eps_q))), float(np.max(np.abs(system.surf_coef_q))))
    scale = coef * np.maximum(1.0, system.h_norm(solution.chi))

    def ratio(v):
        v = v - v.mean()
        vn = float(system.h_norm(v[:, None])[0])
        return np.abs(np.conj(v) @ resid) / (vn * scale) if vn > 0 else np.zeros(3)

    worst = 0.0
    for _ in range(trials):
        worst = max(worst, float(np.max(ratio(rng.standard_normal(system.n) + 1j * rng.standard_normal(system.n)))))
    gram = system.h_norm_matrix
    for j in range(3):
        r = resid[:, j] - resid[:, j].mean()
        if not np.any(r):
            continue
        v, _ = spla.cg(gram, r, maxiter=50, atol=0.0, rtol=1e-6)
        worst = max(worst, float(ratio(v)[j]))
    return worst


def coercivity_witness(system: CellSystem, samples: int = 100, *, seed: int = 0) -> float:
    """Smallest ratio ``Re(u^H A u) / ||u||_H^2`` over random zero-mean vectors."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(samples):
        u = rng.standard_normal(system.n) + 1j * rng.standard_normal(system.n)
        u -= u.mean()
        num = float(np.real(np.conj(u) @ (system.A @ u)))
        den = float(system.h_norm(u[:, None])[0] ** 2)
        worst = min(worst, num / den)
    return worst


# ---------------------------------------------------------------------------
# Triplet dump


def dump_system(system: CellSystem, path, *, binary: bool = False) -> None:
    """Writes ``A`` as (row, col, re, im) triplets and the rhs beside it.

    Text output is comma separated with a header row and 17 significant
    digits; binary output is a ``.npz`` archive with the same columns.
    """
    path = Path(path)
    coo = system.A.tocoo()
    if binary:
        np.savez(
            path.with_suffix(".npz"),
            row=coo.row,
            col=coo.col,
            re=coo.data.real,
            im=coo.data.imag,
            rhs_re=system.rhs.real,
            rhs_im=system.rhs.imag,
            shape=np.array(coo.shape),
        )
        return
    with open(path, "w") as fh:
        fh.write(f"# shape={coo.shape[0]}x{coo.shape[1]} nnz={coo.nnz}\n")
        fh.write("row,col,re,im\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r},{c},{v.real:.17g},{v.imag:.17g}\n")
    rhs_path = path.with_name(path.stem + "_rhs" + path.suffix)
    with open(rhs_path, "w") as fh:
        fh.write("row,j,re,im\n")
        for j in range(3):
            for r, v in enumerate(system.rhs[:, j]):
                fh.write(f"{r},{j + 1},{v.real:.17g},{v.imag:.17g}\n")


def load_system_triplets(path) -> tuple[sp.csr_matrix, np.ndarray]:
    """Reads a dump written by :func:`dump_system` back into ``(A, rhs)``."""
    path = Path(path)
    if path.suffix == ".npz":
        data = np.load(path)
        shape = tuple(data["shape"])
        a = sp.coo_matrix((data["re"] + 1j * data["im"], (data["row"], data["col"])), shape=shape).tocsr()
        return a, data["rhs_re"] + 1j * data["rhs_im"]
    with open(path) as fh:
        first = fh.readline()
    n = int(first.split("shape=")[1].split("x")[0])
    tri = np.loadtxt(path, delimiter=",", comments="#", skiprows=2, ndmin=2)
    a = sp.coo_matrix((tri[:, 2] + 1j * tri[:, 3], (tri[:, 0].astype(int), tri[:, 1].astype(int))), shape=(n, n))
    rhs_tab = np.loadtxt(path.with_name(path.stem + "_rhs" + path.suffix), delimiter=",", skiprows=1, ndmin=2)
    rhs = np.zeros((n, 3), dtype=complex)
    rhs[rhs_tab[:, 0].astype(int), rhs_tab[:, 1].astype(int) - 1] = rhs_tab[:, 2] + 1j * rhs_tab[:, 3]
    return a.tocsr(), rhs
