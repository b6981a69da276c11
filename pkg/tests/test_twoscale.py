import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_phase_eps
from sheethom.cellsolver import assemble_cell_system, build_mesh, solve_correctors
from sheethom.core import CellGeometry, MaterialModel
from sheethom.twoscale import (
    CURL_TOL,
    PeriodicField,
    UnderResolvedError,
    cell_average,
    curl_defect,
    fourier_potential,
    spectral_gradient,
    two_scale_pairing,
)

TAU = 2 * np.pi


def sin_cos_gradient(y):
    a, b = TAU * y[..., 0], TAU * y[..., 1]
    return np.stack([TAU * np.cos(a) * np.cos(b), -TAU * np.sin(a) * np.sin(b), 0 * a], axis=-1)


def random_potential(rng, size, dim, modes=3):
    """Real zero-mean trigonometric polynomial sampled on the grid, and its exact gradient."""
    y = PeriodicField.points(size, dim)
    phi = np.zeros(y.shape[:-1])
    grad = np.zeros(y.shape)
    for _ in range(modes):
        k = rng.integers(-size // 2 + 1, size // 2, dim)
        if not np.any(k):
            continue
        amp, phase = rng.normal(), rng.uniform(0, TAU)
        arg = TAU * (y @ k) + phase
        phi += amp * np.cos(arg)
        grad += (-amp * TAU * np.sin(arg))[..., None] * k
    return phi, grad


class TestPotential:
    def test_zero_field(self):
        phi = fourier_potential(PeriodicField(np.zeros((8, 8, 8, 3))))
        assert np.all(phi.values == 0)

    def test_known_potential(self):
        f = PeriodicField.sample(sin_cos_gradient, 32)
        phi = fourier_potential(f)
        err = np.linalg.norm(spectral_gradient(phi).values - f.values) / np.linalg.norm(f.values)
        assert err <= 1e-12
        exact = PeriodicField.sample(lambda y: np.sin(TAU * y[..., 0]) * np.cos(TAU * y[..., 1]), 32).values
        assert np.abs(phi.values - exact).max() <= 1e-13
        assert abs(phi.mean) <= 1e-15

    def test_rejects_constant(self):
        with pytest.raises(ValueError, match="mean"):
            fourier_potential(PeriodicField(np.broadcast_to([1.0, 0.0, 0.0], (8, 8, 8, 3))))

    def test_rejects_rotational_field(self):
        f = PeriodicField.sample(lambda y: np.stack([np.sin(TAU * y[..., 1]), 0 * y[..., 0], 0 * y[..., 0]], -1), 16)
        with pytest.raises(ValueError, match="curl"):
            fourier_potential(f)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.sampled_from([8, 16]))
    def test_round_trip(self, seed, dim, size):
        rng = np.random.default_rng(seed)
        phi, _ = random_potential(rng, size, dim)
        if not np.any(phi):
            return
        field = PeriodicField(phi, dim)
        back = fourier_potential(spectral_gradient(field))
        assert np.linalg.norm(back.values - phi) <= 1e-12 * np.linalg.norm(phi)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_gradient_of_samples(self, seed):
        rng = np.random.default_rng(seed)
        _, grad = random_potential(rng, 16, 3, modes=4)
        if not np.any(grad):
            return
        f = PeriodicField(grad)
        recon = spectral_gradient(fourier_potential(f)).values
        assert np.linalg.norm(recon - grad) <= 1e-12 * np.linalg.norm(grad)

    def test_small_curl_bounds_reconstruction(self):
        grad = PeriodicField.sample(sin_cos_gradient, 16).values
        swirl = PeriodicField.sample(lambda y: np.stack([np.sin(TAU * y[..., 2]), 0 * y[..., 0], 0 * y[..., 0]], -1), 16)
        f = PeriodicField(grad + 3e-9 * swirl.values)
        defect = curl_defect(f)
        assert 0 < defect <= CURL_TOL
        err = np.linalg.norm(spectral_gradient(fourier_potential(f)).values - f.values) / np.linalg.norm(f.values)
        assert err <= 10 * defect

    def test_scalar_input_rejected(self):
        with pytest.raises(ValueError):
            fourier_potential(PeriodicField(np.zeros((8, 8, 8))))

    def test_bad_shapes(self):
        with pytest.raises(ValueError):
            PeriodicField(np.zeros((8, 4, 8, 3)))
        with pytest.raises(ValueError):
            PeriodicField(np.zeros((8, 8, 8, 2)))


class TestCellAverage:
    def test_constant(self):
        c = np.array([1 + 2j, -0.5, 3j])
        field = PeriodicField(np.broadcast_to(c, (8, 8, 8, 3)))
        np.testing.assert_allclose(cell_average(field), c, atol=1e-15)

    @pytest.mark.parametrize("size", [4, 8, 16, 32, 64])
    def test_cosine_vanishes(self, size):
        field = PeriodicField.sample(lambda y: np.cos(TAU * y[..., 0]), size)
        assert abs(cell_average(field)) <= 1e-15

    def test_point_list(self):
        np.testing.assert_allclose(cell_average(np.array([[1.0, 2.0], [3.0, 4.0]])), [2.0, 3.0])
        with pytest.raises(ValueError):
            cell_average(np.zeros((0, 3)))

    def test_corrector_has_zero_average(self):
        system = assemble_cell_system(build_mesh(CellGeometry(8)), MaterialModel(two_phase_eps, 0.3j + 0.01, 1.0))
        chi = solve_correctors(system).chi
        field = PeriodicField(system.mesh.reshape_nodal(chi))
        assert np.abs(cell_average(field)).max() <= 1e-12


class TestPairing:
    def test_no_oscillation(self):
        U = lambda x, y: np.stack([1 + x[..., 0] ** 2, np.sin(x[..., 0]), 0 * x[..., 0]], -1)
        res = two_scale_pairing(U, 0.05, U, [200])
        assert abs(res.finite - res.limit) <= 1e-12 * abs(res.limit)

    def test_cosine_squared(self):
        e1 = np.array([1.0, 0.0, 0.0])
        U = lambda x, y: ((1 + x[..., 0] + x[..., 2]) * np.cos(TAU * y[..., 2]))[..., None] * e1
        res = two_scale_pairing(U, 1e-2, U, [4, 4, 1000], cell_points=16, oscillating=[2])
        expected = 0.5 * 25 / 6  # (1/2) int (1 + x1 + x3)^2 over the unit cube
        assert res.limit == pytest.approx(expected, rel=1e-6)
        assert abs(res.finite - expected) <= 1e-2 * expected

    def test_constant_test_function_sees_cell_average(self):
        U = lambda x, y: np.stack(
            [np.cos(TAU * y[..., 0]) + x[..., 0], np.sin(TAU * y[..., 0]) ** 2, 0 * x[..., 0]], -1
        )
        Psi = lambda x, y: np.stack([1 + 0 * x[..., 0], x[..., 0], 0 * x[..., 0]], -1)
        res = two_scale_pairing(U, 0.02, Psi, [800])
        xs = (np.arange(400) + 0.5) / 400
        grid = PeriodicField.points(64, 1)
        averaged = np.array([cell_average(U(np.full(grid.shape, x), grid)) for x in xs])
        composed = np.mean(np.sum(averaged * Psi(xs[:, None], xs[:, None]), axis=-1))
        assert res.limit == pytest.approx(composed, abs=1e-5)
        assert res.finite == pytest.approx(res.limit, abs=1e-3)

    def test_gap_shrinks_with_d(self):
        U = lambda x, y: ((1 + x[..., 0]) * np.cos(TAU * y[..., 0]))[..., None]
        gaps = []
        for d in (0.1, 0.05, 0.025, 0.0125):
            res = two_scale_pairing(U, d, U, [1000])
            gaps.append(abs(res.finite - res.limit))
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_under_resolved(self):
        U = lambda x, y: np.cos(TAU * y[..., :1])
        with pytest.raises(UnderResolvedError):
            two_scale_pairing(U, 1e-2, U, [500])

    def test_refinement_gap_is_checked(self):
        # 8 points per period pass the density guard, but order-1 panels are too crude
        U = lambda x, y: np.cos(TAU * y[..., :1]) * np.exp(3 * x[..., :1])
        with pytest.raises(UnderResolvedError, match="refining"):
            two_scale_pairing(U, 1 / 16, U, [128], order=1, tol=1e-6)
