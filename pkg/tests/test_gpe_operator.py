"""Energy, Hamiltonian application, bilinear form, and the inner solve."""

import numpy as np
import pytest

from gpearcg import (
    CoercivityError,
    GpeParams,
    HamiltonianContext,
    InverseSolveError,
    State,
    apply_hamiltonian,
    bilinear_a,
    energy,
    energy_terms,
    inner_l2,
    random_state,
    rayleigh_quotient,
    retract,
    solve_inverse,
    to_spectral,
)
from gpearcg.field import project_tangent


def gaussian_state(grid, center=(0.0, 0.0)):
    x1 = grid.xs[:, None] - center[0]
    x2 = grid.xs[None, :] - center[1]
    u = np.exp(-(x1**2 + x2**2) / 2.0).astype(complex)
    return State.normalized(grid, to_spectral(u, grid))


def quadrature_oracle_harmonic_energy(m=2048, half=10.0):
    """Riemann-sum energy of the normalized Gaussian in the v=(1,1) trap.

    Uses the analytic gradient of exp(-r^2/2), so it shares nothing with the
    spectral evaluation it checks.
    """
    h = 2 * half / m
    x = -half + h * (np.arange(m) + 0.5)
    x1 = x[:, None]
    x2 = x[None, :]
    r2 = x1**2 + x2**2
    psi = np.exp(-r2 / 2.0)
    norm_sq = np.sum(psi**2) * h * h
    grad_sq = (x1**2 + x2**2) * psi**2
    kinetic = 0.5 * np.sum(grad_sq) * h * h / norm_sq
    potential = 0.5 * np.sum(r2 * psi**2) * h * h / norm_sq
    return kinetic + potential


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            GpeParams(v1=0.0)
        with pytest.raises(ValueError):
            GpeParams(v2=-1.0)
        with pytest.raises(ValueError):
            GpeParams(kappa=-5.0)
        with pytest.raises(ValueError):
            GpeParams(omega=-0.1)

    def test_coercivity_guard(self):
        GpeParams(omega=1.6, v1=1.0, v2=1.0)  # inside the admissible cone
        GpeParams(omega=1.9, v1=1.0, v2=1.0)
        with pytest.raises(CoercivityError):
            GpeParams(omega=2.0, v1=1.0, v2=1.0)
        with pytest.raises(CoercivityError):
            GpeParams(omega=1.5, v1=0.5, v2=2.0)


class TestEnergy:
    def test_gaussian_matches_quadrature_oracle(self, grid64, params_harmonic):
        phi = gaussian_state(grid64)
        oracle = quadrature_oracle_harmonic_energy()
        assert energy(phi, params_harmonic) == pytest.approx(oracle, abs=1e-9)
        assert energy(phi, params_harmonic) == pytest.approx(1.0, abs=1e-6)

    def test_rotation_term_vanishes_at_zero_omega(self, grid64, params_harmonic):
        terms = energy_terms(random_state(grid64, 0), params_harmonic)
        assert terms["rotation"] == 0.0

    def test_quadratic_form_identity_at_kappa_omega_zero(self, grid64, params_harmonic):
        for seed in range(3):
            phi = random_state(grid64, seed)
            ctx = HamiltonianContext.from_state(params_harmonic, phi)
            e = energy(phi, params_harmonic)
            quad = 0.5 * bilinear_a(ctx, phi, phi)
            assert e == pytest.approx(quad, rel=1e-12)

    def test_grid_mismatch(self, grid32, params_harmonic):
        with pytest.raises(Exception):
            energy(random_state(grid32, 0), params_harmonic)


class TestApplyHamiltonian:
    def test_fourier_mode_zero_density(self, grid64):
        p = GpeParams(a=20.0, n=64, v1=1.0, v2=1.0)
        ctx = HamiltonianContext.with_zero_density(p, grid64)
        coeffs = np.zeros(grid64.shape, dtype=complex)
        coeffs[2, 5] = 1.0
        mode = State(grid=grid64, coeffs=coeffs)
        out = apply_hamiltonian(ctx, mode)
        k_sq = grid64.ks[2] ** 2 + grid64.ks[5] ** 2
        # in real space the output is (|k|^2 + V(x)) times the mode
        from gpearcg.field import real_from_coeffs

        u_mode = real_from_coeffs(coeffs, grid64)
        u_out = real_from_coeffs(out, grid64)
        expected = (k_sq + ctx.pot) * u_mode
        assert np.allclose(u_out, expected, atol=1e-10)

    def test_hermitian(self, grid64, params_rotating):
        phi = random_state(grid64, 77)
        ctx = HamiltonianContext.from_state(params_rotating, phi)
        rng = np.random.default_rng(8)
        for _ in range(5):
            v = State(grid=grid64, coeffs=rng.standard_normal(grid64.shape)
                      + 1j * rng.standard_normal(grid64.shape))
            w = State(grid=grid64, coeffs=rng.standard_normal(grid64.shape)
                      + 1j * rng.standard_normal(grid64.shape))
            lhs = inner_l2(w.coeffs, apply_hamiltonian(ctx, v))
            rhs = inner_l2(apply_hamiltonian(ctx, w), v.coeffs)
            assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    def test_angular_momentum_annihilates_radial_gaussian(self, grid64):
        p = GpeParams(a=20.0, n=64, omega=1.0)
        ctx0 = HamiltonianContext.with_zero_density(
            GpeParams(a=20.0, n=64), grid64
        )
        ctx1 = HamiltonianContext.with_zero_density(p, grid64)
        phi = gaussian_state(grid64)
        # isolate omega * Lz as the difference of the two operators
        lz_part = apply_hamiltonian(ctx1, phi) - apply_hamiltonian(ctx0, phi)
        assert np.linalg.norm(lz_part) < 1e-8

    def test_angular_momentum_of_displaced_gaussian(self, grid64):
        b1, b2 = 1.5, -0.7
        p0 = GpeParams(a=20.0, n=64)
        p1 = GpeParams(a=20.0, n=64, omega=1.0)
        ctx0 = HamiltonianContext.with_zero_density(p0, grid64)
        ctx1 = HamiltonianContext.with_zero_density(p1, grid64)
        phi = gaussian_state(grid64, center=(b1, b2))
        lz = apply_hamiltonian(ctx1, phi) - apply_hamiltonian(ctx0, phi)
        from gpearcg.field import real_from_coeffs

        u_phi = real_from_coeffs(phi.coeffs, grid64)
        x1 = grid64.xs[:, None]
        x2 = grid64.xs[None, :]
        analytic = -1j * (x1 * b2 - x2 * b1) * u_phi
        u_lz = real_from_coeffs(lz, grid64)
        assert np.max(np.abs(u_lz - analytic)) < 1e-8

    def test_density_must_be_nonnegative(self, grid64, params_harmonic):
        with pytest.raises(ValueError):
            HamiltonianContext(params_harmonic, grid64, -np.ones(grid64.shape))


class TestBilinearForm:
    def test_positive_definite_under_guard(self, grid64, params_rotating):
        phi = random_state(grid64, 3)
        ctx = HamiltonianContext.from_state(params_rotating, phi)
        rng = np.random.default_rng(12)
        for _ in range(5):
            v = State(grid=grid64, coeffs=rng.standard_normal(grid64.shape)
                      + 1j * rng.standard_normal(grid64.shape))
            assert bilinear_a(ctx, v, v) > 0

    def test_symmetry(self, grid64, params_rotating):
        phi = random_state(grid64, 4)
        ctx = HamiltonianContext.from_state(params_rotating, phi)
        v = random_state(grid64, 5)
        w = random_state(grid64, 6)
        assert bilinear_a(ctx, v, w) == pytest.approx(bilinear_a(ctx, w, v), abs=1e-10)

    def test_directional_derivative_matches_finite_differences(self, grid64):
        p = GpeParams(a=20.0, n=64, v1=1.2, v2=1.0, omega=0.6, kappa=80.0)
        rng = np.random.default_rng(21)
        phi = random_state(grid64, 31)
        ctx = HamiltonianContext.from_state(p, phi)
        v = project_tangent(phi, rng.standard_normal(grid64.shape)
                            + 1j * rng.standard_normal(grid64.shape))
        de = bilinear_a(ctx, phi, v)
        best = np.inf
        for t in (1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 1e-6):
            fp = energy(retract(phi, t * v.coeffs), p)
            fm = energy(retract(phi, -t * v.coeffs), p)
            best = min(best, abs((fp - fm) / (2 * t) - de) / abs(de))
        assert best < 1e-6

    def test_eigen_identity_for_any_state(self, grid64, params_rotating):
        for seed in range(3):
            phi = random_state(grid64, seed)
            ctx = HamiltonianContext.from_state(params_rotating, phi)
            lam = rayleigh_quotient(ctx, phi)
            terms = energy_terms(phi, params_rotating)
            rhs = 2.0 * terms["total"] + 0.5 * params_rotating.kappa * terms["quartic"]
            assert lam == pytest.approx(rhs, rel=1e-10)


class TestSolveInverse:
    def test_recovers_known_solution(self, grid64, params_rotating):
        phi = random_state(grid64, 50)
        ctx = HamiltonianContext.from_state(params_rotating, phi)
        x0 = random_state(grid64, 51).coeffs
        b = ctx.apply(x0)
        x = solve_inverse(ctx, b, 1e-10)
        res = np.linalg.norm(ctx.apply(x) - b) / np.linalg.norm(b)
        assert res <= 1e-10

    def test_matches_dense_solve_on_small_grid(self, grid16):
        p = GpeParams(a=20.0, n=16)
        ctx = HamiltonianContext.with_zero_density(p, grid16)
        n_tot = grid16.n**2
        dense = np.zeros((n_tot, n_tot), dtype=complex)
        for j in range(n_tot):
            e = np.zeros(n_tot, dtype=complex)
            e[j] = 1.0
            dense[:, j] = ctx.apply(e.reshape(grid16.shape)).ravel()
        assert np.max(np.abs(dense - dense.conj().T)) < 1e-12
        rng = np.random.default_rng(0)
        b = rng.standard_normal(n_tot) + 1j * rng.standard_normal(n_tot)
        x_direct = np.linalg.solve(dense, b)
        x_cg = solve_inverse(ctx, b.reshape(grid16.shape), 1e-12)
        err = np.linalg.norm(x_cg.ravel() - x_direct) / np.linalg.norm(x_direct)
        assert err < 1e-8

    def test_residual_contract_restated(self, grid64, params_harmonic):
        phi = random_state(grid64, 52)
        ctx = HamiltonianContext.from_state(params_harmonic, phi)
        x = solve_inverse(ctx, phi.coeffs, 1e-10)
        res = np.linalg.norm(ctx.apply(x) - phi.coeffs) / np.linalg.norm(phi.coeffs)
        assert res <= 1e-10

    def test_iteration_cap_error_carries_residual(self, grid64, params_rotating):
        phi = random_state(grid64, 53)
        ctx = HamiltonianContext.from_state(params_rotating, phi)
        with pytest.raises(InverseSolveError) as exc:
            solve_inverse(ctx, phi.coeffs, 1e-12, max_iters=3)
        assert exc.value.residual > 0

    def test_indefinite_operator_detected(self, grid64, params_harmonic):
        phi = random_state(grid64, 54)
        ctx = HamiltonianContext.from_state(params_harmonic, phi)
        ctx._w = ctx._w - 500.0  # sink the potential: -Lap + (V - 500)
        with pytest.raises(CoercivityError):
            solve_inverse(ctx, phi.coeffs, 1e-10)

    def test_bad_rtol_rejected(self, grid64, params_harmonic):
        phi = random_state(grid64, 55)
        ctx = HamiltonianContext.from_state(params_harmonic, phi)
        with pytest.raises(ValueError):
            solve_inverse(ctx, phi.coeffs, 0.0)
        with pytest.raises(ValueError):
            solve_inverse(ctx, phi.coeffs, 1.5)
