"""Gross-Pitaevskii energy, Hamiltonian application, and the inner linear solve.

The Hamiltonian attached to a state with density rho is

    A = -Laplacian + V + omega * Lz + kappa * rho,
    V(x) = v1*x1^2 + v2*x2^2,
    Lz v = -i * (x1 * d2 v - x2 * d1 v).

Derivatives are spectral multipliers; coordinate factors, the trap, and the
interaction act pointwise in real space.  All pieces are Hermitian with
respect to the real L2 inner product, so the whole operator is.  Coercivity
holds for omega^2 < 4*min(v1, v2) (rotation below twice the weaker trap
frequency); parameter construction enforces that bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from .field import (
    Grid,
    GridMismatchError,
    State,
    make_grid,
    real_from_coeffs,
    _coeffs_of,
)

__all__ = [
    "GpeParams",
    "HamiltonianContext",
    "CoercivityError",
    "InverseSolveError",
    "energy",
    "energy_terms",
    "energy_terms_raw",
    "apply_hamiltonian",
    "bilinear_a",
    "solve_inverse",
    "rayleigh_quotient",
]


class CoercivityError(ValueError):
    """Parameters or probe vectors violate positivity of the bilinear form."""


class InverseSolveError(RuntimeError):
    """Inner conjugate-gradient solve failed; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class GpeParams:
    """Physical parameters plus discretization size.

    v1, v2 > 0 are the trap amplitudes, omega >= 0 the rotation speed,
    kappa >= 0 the repulsive interaction strength, a the box width and n
    the grid size per axis.
    """

    a: float = 20.0
    n: int = 64
    v1: float = 1.0
    v2: float = 1.0
    omega: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.v1 <= 0 or self.v2 <= 0:
            raise ValueError(f"trap amplitudes must be positive, got ({self.v1}, {self.v2})")
        if self.kappa < 0:
            raise ValueError(f"interaction strength must be >= 0, got {self.kappa}")
        if self.omega < 0:
            raise ValueError(f"rotation speed must be >= 0, got {self.omega}")
        if self.omega**2 >= 4.0 * min(self.v1, self.v2):
            raise CoercivityError(
                f"rotation too fast for the trap: omega^2 = {self.omega**2:.4g} "
                f">= 4*min(v1, v2) = {4.0 * min(self.v1, self.v2):.4g}; "
                "the operator would lose positivity"
            )

    def make_grid(self, *, allow_small: bool = False) -> Grid:
        return make_grid(self.a, self.n, allow_small=allow_small)


class HamiltonianContext:
    """Frozen application context for A = -Lap + V + omega*Lz + kappa*rho.

    Holds the density of the state defining the operator together with the
    precomputed real-space potential and spectral multipliers.  Immutable
    after construction; `apply` is reentrant.
    """

    def __init__(self, params: GpeParams, grid: Grid, density: np.ndarray):
        density = np.asarray(density, dtype=np.float64)
        if density.shape != grid.shape:
            raise GridMismatchError(
                f"density shape {density.shape} does not match grid {grid}"
            )
        if np.any(density < -1e-13):
            raise ValueError("density must be pointwise nonnegative")
        self.params = params
        self.grid = grid
        self.density = density
        x1 = grid.xs[:, None]
        x2 = grid.xs[None, :]
        self.pot = params.v1 * x1**2 + params.v2 * x2**2
        # trap + interaction, the full pointwise real-space multiplier
        self._w = self.pot + params.kappa * density
        kx = grid.ks[:, None]
        ky = grid.ks[None, :]
        self.k2 = kx**2 + ky**2
        self._ikx = 1j * kx
        self._iky = 1j * ky
        self._x1 = x1
        self._x2 = x2

    @classmethod
    def from_state(cls, params: GpeParams, phi: State) -> "HamiltonianContext":
        u = real_from_coeffs(phi.coeffs, phi.grid)
        density = (u.real**2 + u.imag**2)
        return cls(params, phi.grid, density)

    @classmethod
    def with_zero_density(cls, params: GpeParams, grid: Grid) -> "HamiltonianContext":
        return cls(params, grid, np.zeros(grid.shape))

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """Apply the Hamiltonian to spectral coefficients."""
        u = _fft.ifft2(coeffs, norm="ortho")
        w = self._w * u
        if self.params.omega != 0.0:
            d1 = _fft.ifft2(self._ikx * coeffs, norm="ortho")
            d2 = _fft.ifft2(self._iky * coeffs, norm="ortho")
            w += self.params.omega * (-1j) * (self._x1 * d2 - self._x2 * d1)
        return self.k2 * coeffs + _fft.fft2(w, norm="ortho")


def energy_terms_raw(coeffs: np.ndarray, u: np.ndarray, params: GpeParams, grid: Grid) -> dict:
    """Energy assembly given both representations of the same field.

    ``u`` must be the real-space samples of ``coeffs``; the solver hot loop
    has both at hand and calls this directly to avoid a redundant transform.
    """
    kx = grid.ks[:, None]
    ky = grid.ks[None, :]
    k2 = kx**2 + ky**2
    abs2 = coeffs.real**2 + coeffs.imag**2
    kinetic = 0.5 * float(np.sum(k2 * abs2))
    x1 = grid.xs[:, None]
    x2 = grid.xs[None, :]
    pot = params.v1 * x1**2 + params.v2 * x2**2
    dens = u.real**2 + u.imag**2
    cell = grid.cell_area
    potential = 0.5 * cell * float(np.sum(pot * dens))
    rotation = 0.0
    if params.omega != 0.0:
        d1 = _fft.ifft2(1j * kx * coeffs, norm="ortho") / grid.spacing
        d2 = _fft.ifft2(1j * ky * coeffs, norm="ortho") / grid.spacing
        lz = -1j * (x1 * d2 - x2 * d1)
        rotation = 0.5 * params.omega * cell * float(np.sum((np.conj(u) * lz).real))
    quartic = cell * float(np.sum(dens**2))
    interaction = 0.25 * params.kappa * quartic
    total = kinetic + potential + rotation + interaction
    return {
        "kinetic": kinetic,
        "potential": potential,
        "rotation": rotation,
        "interaction": interaction,
        "quartic": quartic,
        "total": total,
    }


def energy_terms(phi: State, params: GpeParams) -> dict:
    """Energy contributions and the quartic integral of a state.

    Returns kinetic, potential, rotation and interaction terms, the total,
    and quartic = integral of |phi|^4 (used by the eigenvalue identity
    lambda = 2 E + kappa/2 * quartic).
    """
    grid = phi.grid
    if (grid.a, grid.n) != (params.a, params.n):
        raise GridMismatchError(f"state grid {grid} does not match params {params}")
    u = real_from_coeffs(phi.coeffs, grid)
    return energy_terms_raw(phi.coeffs, u, params, grid)


def energy(phi: State, params: GpeParams) -> float:
    """Gross-Pitaevskii energy of a state.

    E = int 1/2 |grad phi|^2 + 1/2 V |phi|^2
        + 1/2 omega Re(conj(phi) Lz phi) + 1/4 kappa |phi|^4 dx
    """
    return energy_terms(phi, params)["total"]


def apply_hamiltonian(ctx: HamiltonianContext, v) -> np.ndarray:
    """Apply the context Hamiltonian to a field; returns raw coefficients.

    The output is generally neither normalized nor tangent to anything, so
    it is returned as a plain coefficient array.
    """
    coeffs = _coeffs_of(v)
    if coeffs.shape != ctx.grid.shape:
        raise GridMismatchError(
            f"field shape {coeffs.shape} does not match grid {ctx.grid}"
        )
    return ctx.apply(coeffs)


def bilinear_a(ctx: HamiltonianContext, v, w) -> float:
    """Symmetric bilinear form a(v, w) = Re <v, A w>."""
    return float(np.vdot(_coeffs_of(v), apply_hamiltonian(ctx, w)).real)


def rayleigh_quotient(ctx: HamiltonianContext, phi: State) -> float:
    """<phi, A phi> for a unit-norm state (the Lagrange multiplier at phi)."""
    return bilinear_a(ctx, phi, phi)


def solve_inverse(
    ctx: HamiltonianContext,
    b,
    rtol: float,
    *,
    x0: np.ndarray | None = None,
    max_iters: int | None = None,
) -> np.ndarray:
    """Solve A x = b with preconditioned conjugate gradients.

    The preconditioner is the kinetic multiplier (|k|^2 / 2 + 1)^-1, applied
    spectrally.  Terminates when ||A x - b|| <= rtol * ||b||.

    Raises
    ------
    InverseSolveError
        Iteration cap (default 10*n) exceeded; carries the last residual.
    CoercivityError
        Negative curvature detected, i.e. the operator is not positive.
    """
    if not (0.0 < rtol < 1.0):
        raise ValueError(f"rtol must lie in (0, 1), got {rtol}")
    b = _coeffs_of(b)
    if b.shape != ctx.grid.shape:
        raise GridMismatchError(f"rhs shape {b.shape} does not match grid {ctx.grid}")
    if max_iters is None:
        max_iters = 10 * ctx.grid.n

    minv = 1.0 / (0.5 * ctx.k2 + 1.0)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros_like(b)
    target = rtol * norm_b

    if x0 is not None and x0.shape == b.shape:
        x = x0.astype(np.complex128, copy=True)
        r = b - ctx.apply(x)
    else:
        x = np.zeros_like(b)
        r = b.copy()
    if np.linalg.norm(r) <= target:
        return x

    z = minv * r
    p = z.copy()
    rz = np.vdot(r, z).real
    res = np.linalg.norm(r)
    for _ in range(max_iters):
        ap = ctx.apply(p)
        pap = np.vdot(p, ap).real
        if pap <= 0.0:
            raise CoercivityError(
                f"operator not coercive: curvature {pap:.3e} along a CG direction"
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        res = np.linalg.norm(r)
        if res <= target:
            return x
        z = minv * r
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise InverseSolveError(
        f"inner solve did not reach rtol={rtol:.2e} within {max_iters} iterations "
        f"(relative residual {res / norm_b:.3e})",
        residual=float(res / norm_b),
    )
