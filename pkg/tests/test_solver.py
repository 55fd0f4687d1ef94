"""Outer CG loop: convergence, trace contracts, line search, callbacks."""

import numpy as np
import pytest

from gpearcg import (
    CallbackAction,
    EarcgConfig,
    NonDescentError,
    State,
    TangentField,
    earcg_solve,
    ea_gradient,
    energy,
    line_search,
    metric_context,
    random_state,
    retract,
)


class TestHarmonicCase:
    def test_ground_state_energy_and_multiplier(self, harmonic_run):
        phi, trace = harmonic_run
        assert trace.termination == "converged"
        assert trace.final_energy == pytest.approx(1.0, abs=1e-3)
        assert trace.final_lambda == pytest.approx(2.0, abs=1e-3)

    def test_eigen_residual_at_convergence(self, harmonic_run):
        _, trace = harmonic_run
        assert trace.final_residual <= 10.0 * 1e-8

    def test_converged_start_returns_immediately(self, harmonic_run, params_harmonic):
        phi, _ = harmonic_run
        _, trace = earcg_solve(phi, params_harmonic, EarcgConfig(tol=1e-6))
        assert trace.iterations == 0
        assert len(trace.rows) == 1
        assert trace.termination == "converged"

    def test_late_iterations_accept_seed_step(self, harmonic_run):
        _, trace = harmonic_run
        rows = [r for r in trace.rows if r.tau is not None]
        late = rows[len(rows) // 2:]
        frac = sum(1 for r in late if r.backtracks <= 1) / len(late)
        assert frac >= 0.9


class TestRotatingCase:
    def test_converges_in_expected_iteration_range(self, rotating_run):
        _, trace, _ = rotating_run
        assert trace.termination == "converged"
        assert 30 <= trace.iterations <= 5000

    def test_all_iterates_unit_norm(self, rotating_run):
        _, _, norms = rotating_run
        assert max(abs(nv - 1.0) for nv in norms) < 1e-12

    def test_nonmonotone_window_bound(self, rotating_run):
        _, trace, _ = rotating_run
        rows = trace.rows
        slack = max(1e-12, 512 * np.finfo(float).eps * (1 + abs(trace.final_energy)))
        for i in range(1, len(rows)):
            ref = max(r.energy for r in rows[max(0, i - 5):i])
            assert rows[i].energy <= ref + slack

    def test_beta_bounds(self, rotating_run):
        _, trace, _ = rotating_run
        for r in trace.rows:
            assert r.beta >= 0.0
            if r.beta_fr is not None:
                assert r.beta <= r.beta_fr + 1e-15

    def test_trace_monotone_iterations_and_finite_norms(self, rotating_run):
        _, trace, _ = rotating_run
        ks = [r.k for r in trace.rows]
        assert ks == sorted(set(ks))
        assert all(np.isfinite(r.grad_norm) for r in trace.rows)

    def test_lambda_identity_at_convergence(self, rotating_run, params_rotating):
        phi, trace, _ = rotating_run
        from gpearcg import energy_terms

        terms = energy_terms(phi, params_rotating)
        rhs = 2.0 * terms["total"] + 0.5 * params_rotating.kappa * terms["quartic"]
        assert trace.final_lambda == pytest.approx(rhs, rel=1e-10)

    def test_max_iters_termination_is_not_an_error(self, grid64, params_rotating):
        phi0 = random_state(grid64, 5)
        _, trace = earcg_solve(phi0, params_rotating, EarcgConfig(tol=1e-8, max_iters=5))
        assert trace.termination == "max_iters"
        assert trace.iterations == 5


class TestValidation:
    def test_rejects_unnormalized_start(self, grid64, params_harmonic):
        phi = random_state(grid64, 1)
        bad = State(grid=grid64, coeffs=2.0 * phi.coeffs)
        with pytest.raises(ValueError):
            earcg_solve(bad, params_harmonic, EarcgConfig(tol=1e-6))

    def test_rejects_grid_params_mismatch(self, grid32, params_harmonic):
        with pytest.raises(ValueError):
            earcg_solve(random_state(grid32, 1), params_harmonic, EarcgConfig(tol=1e-6))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EarcgConfig(tol=0.0)
        with pytest.raises(ValueError):
            EarcgConfig(tol=1e-8, max_iters=0)


class TestLineSearch:
    def test_decrease_along_negative_gradient(self, grid64, params_harmonic):
        phi = random_state(grid64, 21)
        mc = metric_context(phi, params_harmonic, rtol=1e-10)
        g = ea_gradient(mc)
        eta = TangentField(grid=grid64, coeffs=-g.coeffs, base=phi)
        tau = line_search(mc, eta, 1.0)
        assert tau > 0
        e0 = energy(phi, params_harmonic)
        assert energy(retract(phi, tau * eta.coeffs), params_harmonic) < e0

    def test_huge_initial_step_backtracks_to_armijo_point(self, grid64, params_harmonic):
        phi = random_state(grid64, 22)
        mc = metric_context(phi, params_harmonic, rtol=1e-10)
        g = ea_gradient(mc)
        eta = TangentField(grid=grid64, coeffs=-g.coeffs, base=phi)
        tau = line_search(mc, eta, 1e6)
        e0 = energy(phi, params_harmonic)
        assert energy(retract(phi, tau * eta.coeffs), params_harmonic) < e0

    def test_non_descent_signalled(self, grid64, params_harmonic):
        phi = random_state(grid64, 23)
        mc = metric_context(phi, params_harmonic, rtol=1e-10)
        g = ea_gradient(mc)  # +gradient is an ascent direction
        with pytest.raises(NonDescentError):
            line_search(mc, g, 1.0)

    def test_bad_tau_init(self, grid64, params_harmonic):
        phi = random_state(grid64, 24)
        mc = metric_context(phi, params_harmonic, rtol=1e-10)
        g = ea_gradient(mc)
        with pytest.raises(ValueError):
            line_search(mc, g, 0.0)


class TestCallback:
    def test_observes_every_iteration(self, grid64, params_harmonic):
        seen = []

        def watch(info):
            seen.append((info.k, info.grad_norm, info.energy))
            return None

        phi0 = random_state(grid64, 31)
        _, trace = earcg_solve(
            phi0, params_harmonic, EarcgConfig(tol=1e-6, callback=watch)
        )
        # callback fires on every non-terminal iterate
        assert len(seen) == len(trace.rows) - 1
        assert [k for k, _, _ in seen] == [r.k for r in trace.rows[:-1]]

    def test_substitution_resets_and_continues(self, grid64, params_harmonic):
        did = {"done": False}

        def swap(info):
            if not did["done"] and info.k == 3:
                did["done"] = True
                return CallbackAction(replace=random_state(grid64, 999), tag="nn_applied")
            return None

        phi0 = random_state(grid64, 32)
        _, trace = earcg_solve(
            phi0, params_harmonic, EarcgConfig(tol=1e-6, callback=swap)
        )
        assert trace.termination == "converged"
        tagged = [r for r in trace.rows if r.event == "nn_applied"]
        assert len(tagged) == 1 and tagged[0].k == 3
        # the iterate after the swap restarts with steepest descent
        after = next(r for r in trace.rows if r.k == 4)
        assert after.beta == 0.0

    def test_substitution_requires_unit_norm(self, grid64, params_harmonic):
        def swap(info):
            if info.k == 1:
                bad = State(grid=grid64, coeffs=2.0 * random_state(grid64, 7).coeffs)
                return CallbackAction(replace=bad, tag="nn_applied")
            return None

        with pytest.raises(ValueError):
            earcg_solve(random_state(grid64, 33), params_harmonic,
                        EarcgConfig(tol=1e-6, callback=swap))

    def test_warning_collected(self, grid64, params_harmonic):
        def warn_once(info):
            if info.k == 0:
                return CallbackAction(warning="synthetic warning")
            return None

        _, trace = earcg_solve(random_state(grid64, 34), params_harmonic,
                               EarcgConfig(tol=1e-6, callback=warn_once))
        assert trace.warnings == ["synthetic warning"]
