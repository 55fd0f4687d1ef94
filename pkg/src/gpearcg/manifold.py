"""Riemannian geometry of the L2 unit sphere under the energy-adaptive metric.

The metric at phi is the bilinear form of the Hamiltonian at phi, so the
Riemannian gradient of the energy takes the closed form

    g = phi - y / d,   y = A^-1 phi,   d = <y, phi>,

which is tangent by construction.  The retraction is renormalization and the
transport is its derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import State, TangentField
from .gpe import (
    CoercivityError,
    GpeParams,
    HamiltonianContext,
    bilinear_a,
    solve_inverse,
)

__all__ = [
    "MetricContext",
    "DegenerateDirectionError",
    "metric_context",
    "ea_gradient",
    "retract",
    "transport",
    "energy_norm",
]

# retraction/transport give up below this displacement norm
_DEGENERATE_NORM = 1e-14


class DegenerateDirectionError(ValueError):
    """phi + v is too close to zero for normalization to be meaningful."""


@dataclass(frozen=True, eq=False)
class MetricContext:
    """State phi with its Hamiltonian and the cached inverse y = A^-1 phi.

    The inverse solve is the dominant cost of an outer iteration and is
    needed twice (gradient and multiplier estimate), hence the cache.
    d = <y, phi> is positive whenever the operator is coercive.
    """

    state: State
    ham: HamiltonianContext
    y: np.ndarray
    d: float


def metric_context(
    phi: State,
    params: GpeParams,
    *,
    rtol: float = 1e-10,
    warm_start: np.ndarray | None = None,
) -> MetricContext:
    """Build the metric context at ``phi``, solving A y = phi to ``rtol``."""
    ham = HamiltonianContext.from_state(params, phi)
    y = solve_inverse(ham, phi.coeffs, rtol, x0=warm_start)
    d = float(np.vdot(y, phi.coeffs).real)
    if d <= 0.0:
        raise CoercivityError(f"<A^-1 phi, phi> = {d:.3e} <= 0; operator not coercive")
    return MetricContext(state=phi, ham=ham, y=y, d=d)


def ea_gradient(mc: MetricContext) -> TangentField:
    """Energy-adaptive Riemannian gradient g = phi - y/d at mc.state."""
    g = mc.state.coeffs - mc.y / mc.d
    return TangentField(grid=mc.state.grid, coeffs=g, base=mc.state)


def retract_raw(phi_coeffs: np.ndarray, v_coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """(phi + v) / ||phi + v|| on raw arrays; returns (result, u, ||u||)."""
    u = phi_coeffs + v_coeffs
    norm_u = float(np.linalg.norm(u))
    if norm_u < _DEGENERATE_NORM:
        raise DegenerateDirectionError(
            f"||phi + v|| = {norm_u:.3e} is numerically zero"
        )
    return u / norm_u, u, norm_u


def retract(phi: State, v: TangentField | np.ndarray) -> State:
    """Normalization retraction: (phi + v) / ||phi + v||."""
    v_coeffs = v.coeffs if isinstance(v, TangentField) else np.asarray(v)
    out, _, _ = retract_raw(phi.coeffs, v_coeffs)
    return State(grid=phi.grid, coeffs=out)


def transport_raw(
    u: np.ndarray, norm_u: float, w: np.ndarray, new_base: np.ndarray
) -> np.ndarray:
    """Differentiated-retraction transport of w along u = phi + v.

    T(w) = w/||u|| - u * Re<u, w> / ||u||^3, re-projected onto the tangent
    space at new_base = u/||u|| to suppress floating-point drift over long
    runs.
    """
    t = w / norm_u - u * (np.vdot(u, w).real / norm_u**3)
    t -= new_base * np.vdot(new_base, t).real
    return t


def transport(phi: State, v: TangentField, w: TangentField) -> TangentField:
    """Transport ``w`` from the tangent space at phi to the one at retract(phi, v)."""
    new_coeffs, u, norm_u = retract_raw(phi.coeffs, v.coeffs)
    new_base = State(grid=phi.grid, coeffs=new_coeffs)
    t = transport_raw(u, norm_u, w.coeffs, new_coeffs)
    return TangentField(grid=phi.grid, coeffs=t, base=new_base)


def energy_norm(mc: MetricContext, v: TangentField | np.ndarray) -> float:
    """Norm sqrt(a(v, v)) induced by the energy-adaptive metric."""
    q = bilinear_a(mc.ham, v, v)
    if q < 0.0:
        raise CoercivityError(f"a(v, v) = {q:.3e} < 0; operator not coercive")
    return float(np.sqrt(q))
