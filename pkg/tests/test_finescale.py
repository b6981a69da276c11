import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import SIGMA, two_phase_eps
from sheethom.core import MaterialModel
from sheethom.effective import enz_spacing
from sheethom.finescale import (
    CurrentSheet,
    StackProblem,
    build_stack,
    convergence_study,
    energy_balance_residual,
    energy_budget,
    enz_sweep,
    homogenized_phase_delay,
    homogenized_solution,
    jump_matrix,
    layer_matrix,
    phase_delay,
    sheet_indices,
    transfer_matrix_solve,
    uniform_stack,
    wavenumber,
)

LAYERED = MaterialModel(two_phase_eps, SIGMA, 1.0)


class TestStack:
    def test_quarter_spacing_sheet_set(self):
        # kd in (-1, 0.75) for d = 0.25: k = -3..2
        np.testing.assert_array_equal(sheet_indices(0.25, 1.0), np.arange(-3, 3))
        assert build_stack(LAYERED, 0.25, 1.0).n_sheets == 6

    def test_half_spacing(self):
        assert build_stack(LAYERED, 0.5, 1.0).n_sheets == 2

    def test_sheets_strictly_inside(self):
        for d in (0.3, 1 / 7, 0.125):
            z = build_stack(LAYERED, d, 1.0).sheet_positions
            assert np.all(z > -1.0) and np.all(z < 1.0 - d)

    def test_constant_eps_gives_identical_sublayers(self):
        stack = build_stack(MaterialModel(2 + 0.1j, SIGMA, 1.0), 0.125, 1.0)
        assert np.all(stack.eps == 2 + 0.1j)

    def test_sheet_conductance_scales_with_d(self):
        a = build_stack(LAYERED, 0.25, 1.0).sheet_sigma
        b = build_stack(LAYERED, 0.125, 1.0).sheet_sigma
        assert a[0] == pytest.approx(2 * b[0], abs=1e-16)

    def test_sublayers_resolve_two_phase_profile(self):
        stack = build_stack(LAYERED, 0.25, 1.0, sublayers=4)
        np.testing.assert_array_equal(stack.period_eps, [2 + 0.1j, 2 + 0.1j, 4 + 0.1j, 4 + 0.1j])

    def test_rejects_coupled_polarization(self):
        eps = np.array([[2, 0.1, 0], [0.1, 2, 0], [0, 0, 2]]) + 0.1j * np.eye(3)
        with pytest.raises(ValueError):
            build_stack(MaterialModel(eps, 0.0, 1.0), 0.25, 1.0)

    @pytest.mark.parametrize("d", [0.0, 1.0, 1.5])
    def test_rejects_bad_spacing(self, d):
        with pytest.raises(ValueError):
            build_stack(LAYERED, d, 1.0)


class TestTransfer:
    def test_free_propagation(self):
        omega, L = 1.3, 1.0
        sol = transfer_matrix_solve(uniform_stack(1.0, L, omega))
        assert sol.t == pytest.approx(np.exp(2j * L * omega), abs=1e-14)
        assert abs(sol.r) <= 1e-15
        assert abs(sol.t) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("sigma", [0.3 + 0.2j, 0.05 + 1.0j, 1.0])
    def test_single_sheet_in_matched_host(self, sigma):
        eps, L, omega = 2.0, 0.7, 1.1
        sol = transfer_matrix_solve(uniform_stack(eps, L, omega, eps_ext=eps, sheets=[(0.1, sigma)]))
        eta = np.sqrt(1.0 / eps)
        k = omega * np.sqrt(eps)
        assert sol.t == pytest.approx(np.exp(2j * k * L) / (1 + sigma * eta / 2), rel=1e-13)

    def test_jump_conditions(self):
        stack = build_stack(LAYERED, 1 / 16, 1.0)
        sol = transfer_matrix_solve(stack)
        idx = stack.sheet_index
        e_jump = sol.right_states[idx, 0] - sol.left_states[idx, 0]
        assert np.abs(e_jump).max() <= 1e-12 * np.abs(sol.sheet_E).max()
        rel = np.abs(sol.sheet_h_jump - stack.sheet_sigma * sol.sheet_E) / np.abs(sol.sheet_h_jump)
        assert rel.max() <= 1e-12

    def test_unit_determinants(self):
        sol = transfer_matrix_solve(build_stack(LAYERED, 1 / 16, 1.0))
        assert np.abs(np.linalg.det(sol.layer_matrices) - 1).max() <= 1e-12
        assert np.abs(np.linalg.det(sol.jump_matrices) - 1).max() <= 1e-12

    def test_elementary_matrices(self):
        np.testing.assert_allclose(layer_matrix(2.0, 0.5, 0.0), np.eye(2), atol=0)
        np.testing.assert_allclose(jump_matrix(0.3j) @ jump_matrix(-0.3j), np.eye(2), atol=0)

    def test_source_jump(self):
        stack = uniform_stack(2 + 0.1j, 1.0, 1.0, source=CurrentSheet(0.3, 0.7 - 0.2j))
        sol = transfer_matrix_solve(stack)
        i = stack.source_index
        assert sol.right_states[i, 1] - sol.left_states[i, 1] == pytest.approx(0.7 - 0.2j, abs=1e-15)

    def test_sampled_fields_solve_the_ode(self):
        stack = uniform_stack(2 + 0.3j, 1.0, 1.5, incidence=0.8 - 0.1j)
        sol = transfer_matrix_solve(stack, samples=4001)
        dz = sol.z[1] - sol.z[0]
        de = np.gradient(sol.E, dz)[2:-2]
        h = -sol.H  # polarization 1 stores H = -h
        np.testing.assert_allclose(de, (-1j * 1.5 * h)[2:-2], atol=1e-5)

    def test_rejects_zero_permittivity(self):
        with pytest.raises(ValueError):
            transfer_matrix_solve(uniform_stack(0.0, 1.0, 1.0))

    def test_polarizations_agree_for_isotropic_host(self):
        a = transfer_matrix_solve(build_stack(LAYERED, 0.125, 1.0, polarization=1))
        b = transfer_matrix_solve(build_stack(LAYERED, 0.125, 1.0, polarization=2))
        assert a.t == pytest.approx(b.t, abs=1e-14)
        np.testing.assert_allclose(a.H, -b.H, atol=1e-14)

    def test_moving_average_matches_quadrature(self):
        sol = transfer_matrix_solve(build_stack(LAYERED, 0.125, 1.0, sublayers=4))
        centres = np.array([-0.6, -0.1, 0.35])
        window = 0.25
        e_avg, _ = sol.moving_average(centres, window)
        for c, value in zip(centres, e_avg):
            breaks = sol.stack.bounds[(sol.stack.bounds > c - window / 2) & (sol.stack.bounds < c + window / 2)]
            ref = integrate.quad(lambda z: sol.evaluate(z)[0], c - window / 2, c + window / 2,
                                 points=breaks, complex_func=True, limit=200, epsabs=1e-13)[0] / window
            assert value == pytest.approx(ref, abs=1e-11)


class TestEnergy:
    def test_small_loss(self):
        stack = build_stack(MaterialModel(lambda x, y: 2 + 1e-3j + 0 * y[..., 0], SIGMA, 1.0), 0.125, 1.0)
        assert energy_balance_residual(transfer_matrix_solve(stack)) <= 1e-10

    def test_zero_field(self):
        stack = uniform_stack(2 + 0.1j, 1.0, 1.0, incidence=0.0)
        sol = transfer_matrix_solve(stack)
        assert energy_balance_residual(sol, stack) == 0.0

    def test_source_work_is_accounted(self):
        stack = build_stack(LAYERED, 1 / 16, 1.0, incidence=0.0, source=CurrentSheet(0.3, 0.7 - 0.2j))
        budget = energy_budget(transfer_matrix_solve(stack))
        assert budget.source_work > 0
        assert budget.residual <= 1e-12

    def test_lossless_stack_conserves_flux(self):
        sol = transfer_matrix_solve(uniform_stack(2.0, 1.0, 1.0, eps_ext=1.0, sheets=[(0.0, 0.3j)]))
        assert abs(sol.r) ** 2 + abs(sol.t) ** 2 == pytest.approx(1.0, abs=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_random_twenty_layer_stacks(self, seed):
        rng = np.random.default_rng(seed)
        L = rng.uniform(0.2, 3.0)
        bounds = np.sort(np.concatenate([[-L, L], rng.uniform(-L, L, 19)]))
        eps = rng.uniform(-3, 6, 20) + 1j * rng.uniform(1e-3, 2, 20)
        inner = np.arange(1, 20)
        sheet_index = np.sort(rng.choice(inner, size=rng.integers(0, 8), replace=False))
        sheet_sigma = rng.uniform(0, 1, sheet_index.size) + 1j * rng.uniform(-1, 1, sheet_index.size)
        stack = StackProblem(
            half_length=L, spacing=None, omega=rng.uniform(0.2, 3.0), mu=rng.uniform(0.5, 2.0),
            bounds=bounds, eps=eps, sheet_index=sheet_index, sheet_sigma=sheet_sigma,
            incidence=complex(rng.normal(), rng.normal()), eps_ext=rng.uniform(0.5, 4.0),
        )
        assert energy_balance_residual(transfer_matrix_solve(stack, samples=2)) <= 1e-9


class TestHomogenized:
    def test_weak_loss_propagation(self):
        sol = homogenized_solution((1 + 1e-3j) * np.eye(3), 1.0, 1.0)
        k = wavenumber(1.0, 1.0, 1 + 1e-3j)
        assert abs(sol.r) <= 1e-3
        assert 0.99 < abs(sol.t) < 1.0
        assert sol.t == pytest.approx(np.exp(2j * k), abs=1e-6)

    def test_enz_entry_gives_small_phase(self):
        # slab thickness 2L = 1
        eps_t = 1e-3j
        assert homogenized_phase_delay(eps_t, 0.5, 1.0) <= 0.05

    def test_rejects_noncoercive_entry(self):
        with pytest.raises(ValueError):
            homogenized_solution(2.0, 1.0, 1.0)


class TestConvergence:
    def test_homogeneous_host_is_exact(self):
        m = MaterialModel(2 + 0.1j, 0.0, 1.0)
        rows = convergence_study(m, 1.0, [1 / 8, 1 / 16, 1 / 32], eps_eff=(2 + 0.1j) * np.eye(3))
        assert max(r.error for r in rows) <= 1e-10

    def test_monitor_stays_bounded(self):
        rows = convergence_study(LAYERED, 1.0, [1 / 8, 1 / 16, 1 / 32, 1 / 64])
        assert all(r.monitor <= 2 * rows[0].monitor for r in rows)
        assert all(r.energy_residual <= 1e-9 for r in rows)

    def test_window_checks(self):
        with pytest.raises(ValueError):
            convergence_study(LAYERED, 1.0, [1 / 8, 1 / 16], averaging_window=0.5)
        with pytest.raises(ValueError):
            convergence_study(LAYERED, 1.0, [1 / 16, 1 / 8])


class TestENZSweep:
    def test_phase_delay_smallest_at_d0(self):
        d0, rows = enz_sweep(0.3j, 1.0, 2.0, factors=(0.5, 1.0, 2.0))
        assert d0 == pytest.approx(0.15, abs=1e-15)
        assert rows[1].phase_delay < rows[0].phase_delay
        assert rows[1].phase_delay < rows[2].phase_delay
        assert abs(rows[1].eps_tangential) <= 1e-14

    def test_bloch_phase_tends_to_homogenized(self):
        # far from d0 the Bloch phase of fine periods matches the effective medium
        d0 = enz_spacing(0.3j, 1.0, 2.0).d0
        m = MaterialModel(2.0 + 0j, 0.3j / (2 * d0), 1.0)
        stack = build_stack(m, 2 * d0, 1.0)
        eps_t = 2.0 + 1j * 0.3j / (2 * d0)
        assert phase_delay(stack) == pytest.approx(homogenized_phase_delay(eps_t, 1.0, 1.0), rel=0.05)

    def test_profile_mean_enters_d0(self):
        d0, _ = enz_sweep(0.3j, 1.0, 2.0, f_profile=lambda t: 2 * np.ones_like(t), factors=(1.0,))
        assert d0 == pytest.approx(0.075, abs=1e-15)
