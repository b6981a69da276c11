"""Normal-incidence transfer-matrix solver for a stack of conducting sheets.

Fields depend on ``z = x3`` only.  With ``E = E_p e_p`` (``p`` = 1 or 2 is the
polarization) and ``h = (e3 x H)_p`` the Maxwell system reduces to

    dE/dz = -i w mu h,        dh/dz = -i w eps E + J,

so a sheet at ``z_k`` with conductance ``s`` keeps ``E`` continuous and makes
``h`` jump by ``s E``.  A homogeneous layer of thickness ``l`` propagates the
state ``(E, h)`` with

    [[cos kl, -i eta sin kl], [-i sin(kl) / eta, cos kl]],   k = w sqrt(mu eps), eta = sqrt(mu / eps),

and the sheet jump is ``[[1, 0], [s, 1]]``; both have unit determinant.  The
domain ``(-L, L)`` is closed by the exterior medium ``eps_ext`` on both
sides, which is the first-order absorbing impedance condition with
``lambda = sqrt(eps_ext / mu)``; an incident wave of amplitude ``a`` enters
from the left.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np

from .core import MaterialModel
from .effective import check_enz_regime, enz_spacing

DEFAULT_SUBLAYERS = 16


@dataclasses.dataclass(frozen=True)
class CurrentSheet:
    """Impressed surface current ``amplitude * delta(z - position)`` along the polarization."""

    position: float
    amplitude: complex


@dataclasses.dataclass(frozen=True)
class StackProblem:
    """Piecewise-constant layers on ``(-L, L)`` with conducting sheets on layer boundaries.

    Attributes:
        half_length: ``L``.
        spacing: Sheet period ``d``; ``None`` for a stack without periodic structure.
        omega, mu: Frequency and permeability.
        bounds: Layer boundaries, increasing, from ``-L`` to ``L``.
        eps: Permittivity of each layer.
        sheet_index: Indices into ``bounds`` where sheets sit.
        sheet_sigma: Physical conductance ``d * sigma`` of each sheet.
        incidence: Amplitude of the incident wave at ``z = -L``.
        eps_ext: Exterior permittivity fixing the impedance closure.
        source: Optional impressed current sheet.
        period_eps: Permittivity of the sub-layers of one period (for Bloch analysis).
    """

    half_length: float
    spacing: Optional[float]
    omega: float
    mu: float
    bounds: np.ndarray
    eps: np.ndarray
    sheet_index: np.ndarray
    sheet_sigma: np.ndarray
    incidence: complex = 1.0
    eps_ext: float = 1.0
    source: Optional[CurrentSheet] = None
    source_index: Optional[int] = None
    polarization: int = 1
    period_eps: Optional[np.ndarray] = None

    @property
    def sheet_positions(self) -> np.ndarray:
        return self.bounds[self.sheet_index]

    @property
    def n_sheets(self) -> int:
        return int(self.sheet_index.size)

    @property
    def lambda_imp(self) -> float:
        return math.sqrt(self.eps_ext / self.mu)


def sheet_indices(d: float, L: float) -> np.ndarray:
    """Integers ``k`` with ``k d`` in the open interval ``(-L, L - d)``."""
    k_lo = math.floor(-L / d) - 1
    k_hi = math.ceil((L - d) / d) + 1
    ks = np.arange(k_lo, k_hi + 1)
    return ks[(ks * d > -L) & (ks * d < L - d)]


def _split_at(bounds: np.ndarray, eps: np.ndarray, z: float) -> tuple[np.ndarray, np.ndarray, int]:
    hit = np.flatnonzero(np.isclose(bounds, z, rtol=0.0, atol=1e-14 * max(1.0, abs(z))))
    if hit.size:
        return bounds, eps, int(hit[0])
    i = int(np.searchsorted(bounds, z))
    return np.insert(bounds, i, z), np.insert(eps, i - 1, eps[i - 1]), i


def _tangential_entry(values: np.ndarray, polarization: int) -> np.ndarray:
    p = polarization - 1
    others = [a for a in range(3) if a != p]
    coupling = np.abs(values[..., p, others]) + np.abs(values[..., others, p])
    if np.any(coupling > 1e-14 * np.maximum(np.abs(values[..., p, p])[..., None], 1.0)):
        raise ValueError("permittivity couples the polarization to other components; the 1D model needs it decoupled")
    return values[..., p, p]


def build_stack(
    materials: MaterialModel,
    d: float,
    L: float,
    *,
    sublayers: int = DEFAULT_SUBLAYERS,
    incidence: complex = 1.0,
    eps_ext: float = 1.0,
    polarization: int = 1,
    source: Optional[CurrentSheet] = None,
) -> StackProblem:
    """Samples ``eps(z, z/d)`` and ``d sigma(kd, 0)`` into a layered stack.

    Every period ``[kd, (k+1)d)`` is split into ``sublayers`` equal layers
    whose permittivity is taken at their midpoint; the tiling is clipped to
    ``(-L, L)``.  Sheets sit at ``z = kd`` for ``kd`` in ``(-L, L - d)``.

    Raises:
        ValueError: if ``d`` is not in ``(0, L)``, or the source lies outside.
    """
    if not (0 < d < L):
        raise ValueError(f"need 0 < d < L, got d={d}, L={L}")
    if sublayers < 1:
        raise ValueError("sublayers must be >= 1")
    if polarization not in (1, 2):
        raise ValueError("polarization must be 1 or 2")
    if not eps_ext > 0:
        raise ValueError("eps_ext must be positive")
    delta = d / sublayers
    j_lo = math.floor(-L / delta) - 1
    j_hi = math.ceil(L / delta) + 1
    js = np.arange(j_lo, j_hi + 1)
    inner = js * delta
    keep = (inner > -L) & (inner < L)
    bounds = np.concatenate([[-L], inner[keep], [L]])
    mids = 0.5 * (bounds[:-1] + bounds[1:])
    sample_z = (np.floor(mids / delta) + 0.5) * delta

    def sample(zs: np.ndarray) -> np.ndarray:
        x = np.zeros(zs.shape + (3,))
        x[:, 2] = zs
        y = np.zeros_like(x)
        y[:, 2] = zs / d
        return _tangential_entry(materials.eps(x, y), polarization)

    eps = sample(sample_z)
    period_eps = sample((np.arange(sublayers) + 0.5) * delta)

    ks = sheet_indices(d, L)
    sheet_j = ks * sublayers
    sheet_index = np.searchsorted(js[keep], sheet_j) + 1
    if not np.array_equal(js[keep][sheet_index - 1], sheet_j):
        raise RuntimeError("sheet positions do not fall on layer boundaries")
    xk = np.zeros((ks.size, 3))
    xk[:, 2] = ks * d
    normal = np.array([0.0, 0.0, 1.0])
    sig = materials.sigma_t(xk, np.zeros_like(xk), normal)[:, polarization - 1, polarization - 1]
    sheet_sigma = d * sig

    source_index = None
    if source is not None:
        if not (-L < source.position < L):
            raise ValueError("current sheet must lie strictly inside (-L, L)")
        before = bounds.size
        bounds, eps, source_index = _split_at(bounds, eps, source.position)
        if bounds.size != before:
            sheet_index = np.where(sheet_index >= source_index, sheet_index + 1, sheet_index)

    return StackProblem(
        half_length=float(L),
        spacing=float(d),
        omega=float(materials.omega),
        mu=float(materials.mu),
        bounds=bounds,
        eps=np.asarray(eps, dtype=complex),
        sheet_index=np.asarray(sheet_index, dtype=int),
        sheet_sigma=np.asarray(sheet_sigma, dtype=complex),
        incidence=complex(incidence),
        eps_ext=float(eps_ext),
        source=source,
        source_index=source_index,
        polarization=polarization,
        period_eps=np.asarray(period_eps, dtype=complex),
    )


def uniform_stack(
    eps: complex,
    L: float,
    omega: float,
    *,
    mu: float = 1.0,
    incidence: complex = 1.0,
    eps_ext: float = 1.0,
    source: Optional[CurrentSheet] = None,
    sheets: Sequence[tuple[float, complex]] = (),
) -> StackProblem:
    """A single host layer on ``(-L, L)`` with optional sheets ``(position, conductance)``."""
    bounds = np.array([-L, L], dtype=float)
    eps_arr = np.array([eps], dtype=complex)
    positions = []
    for z, _ in sheets:
        bounds, eps_arr, i = _split_at(bounds, eps_arr, z)
        positions.append(z)
    source_index = None
    if source is not None:
        bounds, eps_arr, source_index = _split_at(bounds, eps_arr, source.position)
    index = np.array([int(np.flatnonzero(np.isclose(bounds, z, rtol=0.0, atol=1e-14))[0]) for z in positions], dtype=int)
    return StackProblem(
        half_length=float(L),
        spacing=None,
        omega=float(omega),
        mu=float(mu),
        bounds=bounds,
        eps=eps_arr,
        sheet_index=index,
        sheet_sigma=np.array([s for _, s in sheets], dtype=complex),
        incidence=complex(incidence),
        eps_ext=float(eps_ext),
        source=source,
        source_index=source_index,
    )


# ---------------------------------------------------------------------------
# Elementary matrices


def wavenumber(omega: float, mu: float, eps) -> np.ndarray:
    """``w sqrt(mu eps)`` on the branch with ``Im k >= 0``.

    For real positive ``eps`` both roots have ``Im k = 0``; the one with
    ``Re k > 0`` is taken, which is the limit of vanishing loss.
    """
    k = omega * np.sqrt(mu * np.asarray(eps, dtype=complex))
    return np.where(k.imag < 0, -k, k)


def impedance(mu: float, eps) -> np.ndarray:
    """``sqrt(mu / eps)`` consistent with :func:`wavenumber`: ``eta = w mu / k``."""
    return np.sqrt(mu / np.asarray(eps, dtype=complex))


def layer_matrix(k, eta, length) -> np.ndarray:
    k, eta, length = np.broadcast_arrays(np.asarray(k, complex), np.asarray(eta, complex), np.asarray(length, float))
    c = np.cos(k * length)
    s = np.sin(k * length)
    out = np.empty(k.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -1j * eta * s
    out[..., 1, 0] = -1j * s / eta
    out[..., 1, 1] = c
    return out


def jump_matrix(conductance) -> np.ndarray:
    s = np.asarray(conductance, dtype=complex)
    out = np.zeros(s.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 1, 0] = s
    return out


def _layer_data(stack: StackProblem):
    k = wavenumber(stack.omega, stack.mu, stack.eps)
    eta = stack.omega * stack.mu / k
    lengths = np.diff(stack.bounds)
    return k, eta, lengths, layer_matrix(k, eta, lengths)


# ---------------------------------------------------------------------------
# Solve


@dataclasses.dataclass
class FieldSolution:
    """Solved stack: boundary states, coefficients and field sampling.

    ``left_states[i]`` and ``right_states[i]`` are ``(E, h)`` just below and
    just above ``bounds[i]``; ``H`` denotes ``H_y = -h`` for polarization 1
    (``H_x = h`` for polarization 2).
    """

    stack: StackProblem
    t: complex
    r: complex
    left_states: np.ndarray
    right_states: np.ndarray
    layer_matrices: np.ndarray
    jump_matrices: np.ndarray
    k: np.ndarray
    eta: np.ndarray
    z: np.ndarray
    E: np.ndarray
    H: np.ndarray

    @property
    def sheet_E(self) -> np.ndarray:
        return self.right_states[self.stack.sheet_index, 0]

    @property
    def sheet_h_jump(self) -> np.ndarray:
        idx = self.stack.sheet_index
        return self.right_states[idx, 1] - self.left_states[idx, 1]

    def _segments(self, z: np.ndarray) -> np.ndarray:
        b = self.stack.bounds
        return np.clip(np.searchsorted(b, z, side="right") - 1, 0, b.size - 2)

    def evaluate(self, z) -> tuple[np.ndarray, np.ndarray]:
        """``(E, h)`` at points ``z`` (right limits at layer boundaries)."""
        z = np.asarray(z, dtype=float)
        seg = self._segments(z)
        s = z - self.stack.bounds[seg]
        mats = layer_matrix(self.k[seg], self.eta[seg], s)
        state = np.einsum("...ij,...j->...i", mats, self.right_states[seg])
        return state[..., 0], state[..., 1]

    def _amplitudes(self, seg):
        e0 = self.right_states[seg, 0]
        h0 = self.right_states[seg, 1]
        eta = self.eta[seg]
        return 0.5 * (e0 - eta * h0), 0.5 * (e0 + eta * h0), eta

    def antiderivative(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Exact ``int_{-L}^{z} E`` and ``int_{-L}^{z} h``."""
        z = np.asarray(z, dtype=float)
        b = self.stack.bounds
        nseg = b.size - 1
        seg_all = np.arange(nseg)
        fe, fh = _segment_integrals(self, seg_all, np.diff(b))
        cum_e = np.concatenate([[0.0], np.cumsum(fe)])
        cum_h = np.concatenate([[0.0], np.cumsum(fh)])
        seg = self._segments(z)
        pe, ph = _segment_integrals(self, seg, z - b[seg])
        return cum_e[seg] + pe, cum_h[seg] + ph

    def moving_average(self, z, window: float) -> tuple[np.ndarray, np.ndarray]:
        """Averages of ``E`` and ``H`` over ``[z - window/2, z + window/2]``."""
        z = np.asarray(z, dtype=float)
        e_hi, h_hi = self.antiderivative(z + 0.5 * window)
        e_lo, h_lo = self.antiderivative(z - 0.5 * window)
        return (e_hi - e_lo) / window, self._h_to_H(h_hi - h_lo) / window

    def _h_to_H(self, h):
        return -h if self.stack.polarization == 1 else h


def _phi(x: np.ndarray) -> np.ndarray:
    """``(exp(x) - 1) / x`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-300
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0, np.expm1(safe) / safe)


def _segment_integrals(sol: FieldSolution, seg, length):
    a, b, eta = sol._amplitudes(seg)
    k = sol.k[seg]
    ia = length * _phi(1j * k * length)
    ib = length * _phi(-1j * k * length)
    return a * ia + b * ib, -(a * ia - b * ib) / eta


def _abs2_integral(p, q, k, length) -> np.ndarray:
    """``int_0^l |p e^{ikz} + q e^{-ikz}|^2 dz`` in closed form."""
    kappa = k.imag
    beta = k.real
    t1 = np.abs(p) ** 2 * length * _phi(-2 * kappa * length).real
    t2 = np.abs(q) ** 2 * length * _phi(2 * kappa * length).real
    t3 = 2.0 * np.real(p * np.conj(q) * length * _phi(2j * beta * length))
    return t1 + t2 + t3


def transfer_matrix_solve(stack: StackProblem, *, samples: int = 2001) -> FieldSolution:
    """Solves the stack and samples ``E`` and ``H`` on a uniform grid of ``samples`` points."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if np.any(stack.eps == 0) or not np.all(np.isfinite(stack.eps)):
        raise ValueError("layer permittivities must be finite and nonzero")
    k, eta, lengths, mats = _layer_data(stack)
    nb = stack.bounds.size
    jumps = np.broadcast_to(np.eye(2, dtype=complex), (nb, 2, 2)).copy()
    jumps[stack.sheet_index] = jump_matrix(stack.sheet_sigma)
    src = np.zeros((nb, 2), dtype=complex)
    if stack.source is not None:
        src[stack.source_index, 1] = stack.source.amplitude

    # Cascade of the homogeneous part and of the source contribution.
    total = np.eye(2, dtype=complex)
    forced = np.zeros(2, dtype=complex)
    for i in range(nb - 1):
        total = mats[i] @ (jumps[i] @ total)
        forced = mats[i] @ (jumps[i] @ forced + src[i])
    total = jumps[-1] @ total
    forced = jumps[-1] @ forced + src[-1]

    lam = stack.lambda_imp
    u_in = np.array([1.0, -lam], dtype=complex)
    u_out = np.array([1.0, lam], dtype=complex)
    w_out = np.array([1.0, -lam], dtype=complex)
    system = np.column_stack([total @ u_out, -w_out])
    rhs = -stack.incidence * (total @ u_in) - forced
    r, t = np.linalg.solve(system, rhs)

    left = np.zeros((nb, 2), dtype=complex)
    right = np.zeros((nb, 2), dtype=complex)
    state = stack.incidence * u_in + r * u_out
    for i in range(nb):
        left[i] = state
        state = jumps[i] @ state + src[i]
        right[i] = state
        if i < nb - 1:
            state = mats[i] @ state

    sol = FieldSolution(
        stack=stack,
        t=complex(t),
        r=complex(r),
        left_states=left,
        right_states=right,
        layer_matrices=mats,
        jump_matrices=jumps[stack.sheet_index],
        k=k,
        eta=eta,
        z=np.linspace(-stack.half_length, stack.half_length, samples),
        E=np.empty(0),
        H=np.empty(0),
    )
    e, h = sol.evaluate(sol.z)
    sol.E, sol.H = e, sol._h_to_H(h)
    return sol


# ---------------------------------------------------------------------------
# Energy bookkeeping


@dataclasses.dataclass(frozen=True)
class EnergyBudget:
    """Time-averaged powers per unit area; ``residual`` is the relative imbalance."""

    flux_in: float
    flux_out: float
    volume_loss: float
    sheet_loss: float
    source_work: float
    residual: float


def energy_budget(solution: FieldSolution) -> EnergyBudget:
    """Poynting balance ``S(-L) - S(L) + P_src = P_vol + P_sheets``.

    ``S = -Re(E conj(h)) / 2``, the bulk loss is ``w Im(eps) int |E|^2 / 2``
    per layer (closed form), the sheet loss ``Re(s) |E|^2 / 2`` and the
    impressed current delivers ``-Re(E conj(j)) / 2``.
    """
    stack = solution.stack
    flux_in = float(-0.5 * np.real(solution.left_states[0, 0] * np.conj(solution.left_states[0, 1])))
    flux_out = float(-0.5 * np.real(solution.right_states[-1, 0] * np.conj(solution.right_states[-1, 1])))
    a, b, _ = solution._amplitudes(np.arange(stack.bounds.size - 1))
    e2 = _abs2_integral(a, b, solution.k, np.diff(stack.bounds))
    volume = float(0.5 * stack.omega * np.sum(stack.eps.imag * e2))
    sheets = float(0.5 * np.sum(stack.sheet_sigma.real * np.abs(solution.sheet_E) ** 2))
    work = 0.0
    if stack.source is not None:
        e_src = solution.right_states[stack.source_index, 0]
        work = float(-0.5 * np.real(e_src * np.conj(stack.source.amplitude)))
    imbalance = flux_in - flux_out + work - volume - sheets
    scale = abs(flux_in) + abs(flux_out) + abs(work) + abs(volume) + abs(sheets)
    residual = abs(imbalance) / scale if scale > 0 else 0.0
    return EnergyBudget(flux_in, flux_out, volume, sheets, work, residual)


def energy_balance_residual(solution: FieldSolution, stack: Optional[StackProblem] = None) -> float:
    """Relative residual of the discrete energy identity (0 for a zero field)."""
    if stack is not None and stack is not solution.stack:
        raise ValueError("solution was computed for a different stack")
    return energy_budget(solution).residual


def estimate_monitor(solution: FieldSolution) -> float:
    """Left side of the uniform a-priori bound for the solved field.

    ``(1/w) ||curl E||^2 + w ||E||^2 + d sum_k |E(kd)|^2 + |E(-L)|^2 + |E(L)|^2``
    per unit transverse area, with ``curl E = i w mu H``.
    """
    stack = solution.stack
    lengths = np.diff(stack.bounds)
    a, b, eta = solution._amplitudes(np.arange(lengths.size))
    e2 = float(np.sum(_abs2_integral(a, b, solution.k, lengths)))
    h2 = float(np.sum(_abs2_integral(-a / eta, b / eta, solution.k, lengths)))
    curl2 = (stack.omega * stack.mu) ** 2 * h2
    d = stack.spacing if stack.spacing is not None else 0.0
    sheet2 = d * float(np.sum(np.abs(solution.sheet_E) ** 2))
    boundary2 = float(abs(solution.left_states[0, 0]) ** 2 + abs(solution.right_states[-1, 0]) ** 2)
    return curl2 / stack.omega + stack.omega * e2 + sheet2 + boundary2


# ---------------------------------------------------------------------------
# Homogenized reference and phase delay


def tangential_entry(eps_eff, polarization: int = 1) -> complex:
    eps = np.asarray(eps_eff, dtype=complex)
    if eps.shape == ():
        return complex(eps)
    return complex(eps[polarization - 1, polarization - 1])


def homogenized_solution(
    eps_eff,
    L: float,
    omega: float,
    *,
    mu: float = 1.0,
    incidence: complex = 1.0,
    eps_ext: float = 1.0,
    polarization: int = 1,
    source: Optional[CurrentSheet] = None,
    samples: int = 2001,
) -> FieldSolution:
    """One uniform layer on ``(-L, L)`` with the in-plane effective permittivity.

    Raises:
        ValueError: if the in-plane entry has ``Im eps <= 0``.
    """
    eps_t = tangential_entry(eps_eff, polarization)
    if not eps_t.imag > 0:
        raise ValueError(f"effective permittivity entry {eps_t} is not coercive (Im <= 0)")
    stack = uniform_stack(eps_t, L, omega, mu=mu, incidence=incidence, eps_ext=eps_ext, source=source)
    stack = dataclasses.replace(stack, polarization=polarization)
    return transfer_matrix_solve(stack, samples=samples)


def period_matrix(stack: StackProblem) -> np.ndarray:
    """Transfer matrix of one period: the sheet jump followed by the sub-layers of ``[0, d)``."""
    if stack.spacing is None or stack.period_eps is None:
        raise ValueError("stack has no periodic structure")
    n = stack.period_eps.size
    k = wavenumber(stack.omega, stack.mu, stack.period_eps)
    eta = stack.omega * stack.mu / k
    mats = layer_matrix(k, eta, stack.spacing / n)
    sigma = stack.sheet_sigma[0] if stack.n_sheets else 0.0
    total = jump_matrix(sigma)
    for m in mats:
        total = m @ total
    return total


def bloch_wavenumber(stack: StackProblem) -> complex:
    """Complex Bloch wavenumber ``K`` with ``cos(K d) = tr(T_period) / 2``."""
    half_trace = 0.5 * np.trace(period_matrix(stack))
    return complex(np.arccos(complex(half_trace)) / stack.spacing)


def phase_delay(stack: StackProblem) -> float:
    """Bloch phase accumulated across the slab, ``|K| * 2L``."""
    return abs(bloch_wavenumber(stack)) * 2.0 * stack.half_length


def homogenized_phase_delay(eps_tangential: complex, L: float, omega: float, mu: float = 1.0) -> float:
    """Plane-wave phase ``|k| * 2L`` of the homogenized slab."""
    return float(abs(wavenumber(omega, mu, eps_tangential)) * 2.0 * L)


# ---------------------------------------------------------------------------
# Sweeps


@dataclasses.dataclass(frozen=True)
class ConvergenceRow:
    d: float
    n_sheets: int
    error_E: float
    error_H: float
    error: float
    monitor: float
    energy_residual: float


def _relative_l2(a: np.ndarray, b: np.ndarray) -> float:
    den = float(np.linalg.norm(b))
    num = float(np.linalg.norm(a - b))
    return num / den if den > 0 else num


def convergence_study(
    materials: MaterialModel,
    L: float,
    d_sequence: Sequence[float],
    averaging_window: Optional[float] = None,
    *,
    eps_eff=None,
    sublayers: int = DEFAULT_SUBLAYERS,
    incidence: complex = 1.0,
    eps_ext: float = 1.0,
    polarization: int = 1,
    source: Optional[CurrentSheet] = None,
    points: int = 401,
    workers: Optional[int] = None,
) -> list[ConvergenceRow]:
    """Compares window-averaged fine-scale fields with the homogenized solution.

    Both solutions are averaged over the same moving window of width
    ``averaging_window`` (default ``L/4``) at ``points`` centres in
    ``[-L + W/2, L - W/2]`` and compared in the relative discrete L2 norm.
    ``eps_eff`` defaults to a cell solve at resolution 16 with the sheet
    normal to ``z``.

    Raises:
        ValueError: if ``d_sequence`` is not strictly decreasing or a ``d``
            exceeds the window, or the window exceeds ``L/4``.
    """
    ds = [float(d) for d in d_sequence]
    if not ds:
        raise ValueError("d_sequence is empty")
    if any(b >= a for a, b in zip(ds, ds[1:])):
        raise ValueError("d_sequence must be strictly decreasing")
    window = L / 4 if averaging_window is None else float(averaging_window)
    if window > L / 4 * (1 + 1e-12):
        raise ValueError(f"averaging window {window} exceeds L/4 = {L / 4}")
    if ds[0] > window:
        raise ValueError(f"averaging window {window} is smaller than d = {ds[0]}")
    if eps_eff is None:
        from .core import CellGeometry, FlatSheet
        from .effective import compute_effective

        eps_eff = compute_effective(materials, CellGeometry(16, FlatSheet(3, 0.0)))[0].eps_eff

    centres = np.linspace(-L + 0.5 * window, L - 0.5 * window, points)
    hom = homogenized_solution(
        eps_eff, L, materials.omega, mu=materials.mu, incidence=incidence, eps_ext=eps_ext,
        polarization=polarization, source=source, samples=2,
    )
    hom_e, hom_h = hom.moving_average(centres, window)

    def run(d: float) -> ConvergenceRow:
        stack = build_stack(
            materials, d, L, sublayers=sublayers, incidence=incidence, eps_ext=eps_ext,
            polarization=polarization, source=source,
        )
        fine = transfer_matrix_solve(stack, samples=2)
        fe, fh = fine.moving_average(centres, window)
        err_e = _relative_l2(fe, hom_e)
        err_h = _relative_l2(fh, hom_h)
        err = _relative_l2(np.concatenate([fe, fh]), np.concatenate([hom_e, hom_h]))
        return ConvergenceRow(d, stack.n_sheets, err_e, err_h, err, estimate_monitor(fine), energy_balance_residual(fine))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, ds))


@dataclasses.dataclass(frozen=True)
class ENZRow:
    d: float
    phase_delay: float
    eps_tangential: complex
    arg_t: float
    abs_t: float


def enz_sweep(
    sigma_sheet: complex,
    omega: float,
    eps_host: complex,
    *,
    f_profile: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    factors: Sequence[float] = (0.5, 0.75, 1.0, 1.25, 1.5, 2.0),
    L: float = 1.0,
    mu: float = 1.0,
    eps_ext: float = 1.0,
    sublayers: int = DEFAULT_SUBLAYERS,
    workers: Optional[int] = None,
) -> tuple[float, list[ENZRow]]:
    """Sweeps the spacing around ``d0`` with the physical sheet conductivity held fixed.

    The host permittivity is ``eps_host * f(y)`` in the cell coordinate
    ``y = z / d``.  Each row reports the Bloch phase delay across the slab,
    the in-plane effective permittivity ``eps_host <f> + i sigma / (w d)``
    and the slab transmission coefficient.

    Returns:
        ``(d0, rows)`` with ``d0`` from :func:`enz_spacing`.

    Raises:
        ENZRegimeError: if the conductivity is outside the plasmonic regime.
    """
    check_enz_regime(sigma_sheet)
    profile = f_profile if f_profile is not None else (lambda t: np.ones_like(t))
    nodes, weights = np.polynomial.legendre.leggauss(64)
    f_mean = float(np.real(np.sum(0.5 * weights * profile(0.5 * (nodes + 1.0)))))
    d0 = enz_spacing(sigma_sheet, omega, eps_host, f_mean).d0

    def run(factor: float) -> ENZRow:
        d = factor * d0
        materials = MaterialModel(
            epsilon=lambda x, y: complex(eps_host) * profile(np.mod(y[..., 2], 1.0)),
            sigma=complex(sigma_sheet) / d,
            omega=omega,
            mu=mu,
        )
        stack = build_stack(materials, d, L, sublayers=sublayers, eps_ext=eps_ext)
        sol = transfer_matrix_solve(stack, samples=2)
        eps_t = complex(eps_host) * f_mean + 1j * complex(sigma_sheet) / (omega * d)
        return ENZRow(d, phase_delay(stack), eps_t, float(abs(np.angle(sol.t))), float(abs(sol.t)))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(run, factors))
    return d0, rows
