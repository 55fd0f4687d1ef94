"""Shared fixtures; the expensive solves are session-scoped and reused."""

import numpy as np
import pytest

from gpearcg import (
    EarcgConfig,
    GpeParams,
    earcg_solve,
    make_grid,
    random_state,
)


@pytest.fixture(scope="session")
def grid64():
    return make_grid(20.0, 64)


@pytest.fixture(scope="session")
def grid32():
    return make_grid(20.0, 32)


@pytest.fixture(scope="session")
def grid16():
    return make_grid(20.0, 16)


@pytest.fixture(scope="session")
def params_harmonic():
    return GpeParams(a=20.0, n=64, v1=1.0, v2=1.0, omega=0.0, kappa=0.0)


@pytest.fixture(scope="session")
def params_rotating():
    return GpeParams(a=20.0, n=64, v1=1.0, v2=1.0, omega=0.8, kappa=200.0)


@pytest.fixture(scope="session")
def harmonic_run(grid64, params_harmonic):
    """Converged harmonic solve at tol 1e-8 (analytic ground energy 1)."""
    phi0 = random_state(grid64, 42)
    return earcg_solve(phi0, params_harmonic, EarcgConfig(tol=1e-8))


@pytest.fixture(scope="session")
def rotating_run(grid64, params_rotating):
    """Full vortex-lattice solve at tol 1e-6 with per-iterate norm capture."""
    norms = []

    def watch(info):
        norms.append(float(np.linalg.norm(info.state.coeffs)))
        return None

    phi0 = random_state(grid64, 3)
    final, trace = earcg_solve(
        phi0, params_rotating, EarcgConfig(tol=1e-6, callback=watch)
    )
    return final, trace, norms


@pytest.fixture(scope="session")
def rotating_run_tight(grid64, params_rotating):
    """Rotating solve at tol 1e-8, the paired-run reference case."""
    phi0 = random_state(grid64, 3)
    return earcg_solve(phi0, params_rotating, EarcgConfig(tol=1e-8))
