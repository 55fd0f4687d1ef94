"""Energy-adaptive Riemannian conjugate gradient for the rotating GPE.

Outer loop: at each iterate the Hamiltonian is rebuilt from the current
density, the inverse solve gives the energy-adaptive gradient, the step size
comes from a nonmonotone Armijo backtracking search seeded with the previous
step, and the search direction mixes the transported previous direction with
the new gradient through the capped hybrid parameter

    beta = max(0, min(FR, PR)),
    FR = a+(g+, g+) / a(g, g),
    PR = a+(g+, g+ - T g) / a(g, g).

Directions that fail the descent test are reset to steepest descent.  An
optional per-iteration callback observes the iterate and may replace it
(used by the learned mid-run correction and by dataset capture).

Numerical note: directional derivatives are evaluated through the gradient
pairing DE(phi)[w] = a(g, w), never as a(phi, w) directly -- the latter
cancels two multiplier-sized terms and drowns in rounding noise once the
gradient norm approaches sqrt(eps).
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .field import State, TangentField, real_from_coeffs
from .gpe import GpeParams, HamiltonianContext, energy_terms_raw, solve_inverse
from .manifold import retract_raw, transport_raw

__all__ = [
    "EarcgConfig",
    "IterationInfo",
    "CallbackAction",
    "TraceRow",
    "RunTrace",
    "NonDescentError",
    "LineSearchStagnation",
    "SolverStagnation",
    "earcg_solve",
    "line_search",
]


class NonDescentError(ValueError):
    """The supplied direction has nonnegative directional derivative."""


class LineSearchStagnation(RuntimeError):
    """Backtracking exhausted its budget without an acceptable step."""

    def __init__(self, message: str, tau: float, f_trial: float, f_ref: float):
        super().__init__(message)
        self.tau = tau
        self.f_trial = f_trial
        self.f_ref = f_ref


class SolverStagnation(RuntimeError):
    """Line search failed along steepest descent at the inner-solve floor."""

    def __init__(self, message: str, trace: "RunTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class EarcgConfig:
    """Termination, line-search, and inner-solve settings.

    tol is the threshold on the gradient energy norm.  The step search is a
    nonmonotone Armijo backtracking with quadratic interpolation: trial
    reductions are clamped to [0.1, 0.5] of the previous trial, at most
    ``max_backtracks`` reductions, the reference value being the maximum
    energy over the last ``nonmonotone_window`` iterates.  When the seeded
    step is accepted outright, one doubling probe is tried so the step can
    recover after a conservative stretch.

    The inner solve tolerance tightens with the outer gradient norm:
    rtol_k = clamp(0.1 * ||g_(k-1)||_a / max(1, lambda_k), floor=1e-12,
    cap=1e-2).  The 1/lambda factor keeps the absolute gradient error
    (which scales like lambda * rtol) at a fixed fraction of the gradient
    norm; without it, runs with large multipliers stall just above tol.
    If the line search still stagnates along steepest descent, the inverse
    is re-solved 100x tighter down to the floor before giving up.
    """

    tol: float = 1e-8
    max_iters: int = 30000
    c1: float = 1e-4
    nonmonotone_window: int = 5
    max_backtracks: int = 25
    interp_clip: tuple[float, float] = (0.1, 0.5)
    try_grow: bool = True
    grow_factor: float = 2.0
    inner_rtol_cap: float = 1e-2
    inner_rtol_factor: float = 0.1
    inner_rtol_floor: float = 1e-12
    callback: Optional[Callable[["IterationInfo"], Optional["CallbackAction"]]] = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True, eq=False)
class IterationInfo:
    """Snapshot handed to the callback once per iteration.

    Arrays are shared with the solver; treat them as read-only.
    """

    k: int
    state: State
    grad: TangentField
    grad_norm: float
    tau_prev: float
    energy: float


@dataclass
class CallbackAction:
    """Callback response: optionally replace the iterate and tag the row.

    ``replace`` must be a unit-norm state on the same grid; the solver then
    resets its CG memory (direction, step seed, nonmonotone window).
    """

    replace: Optional[State] = None
    tag: Optional[str] = None
    warning: Optional[str] = None


@dataclass
class TraceRow:
    k: int
    energy: float
    grad_norm: float
    tau: Optional[float]
    beta: float
    beta_fr: Optional[float]
    backtracks: int
    restart: bool
    time: float
    event: str = "plain"


@dataclass
class RunTrace:
    """Per-iteration records plus the outcome of one solve."""

    rows: list[TraceRow]
    final_state: State
    final_lambda: float
    final_energy: float
    final_grad_norm: float
    final_residual: float
    termination: str
    wall_time: float
    warnings: list[str] = dc_field(default_factory=list)
    accel_events: list = dc_field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.rows[-1].k if self.rows else 0


def _armijo_ok(f_trial: float, f_ref: float, c1: float, tau: float, slope: float) -> bool:
    return f_trial <= f_ref + c1 * tau * slope


def _backtrack_search(eval_at, tau_init, f0, slope, f_ref, cfg):
    """Step search on a 1-d energy profile.

    ``eval_at(tau)`` returns (payload, f).  Returns (tau, payload, f,
    n_backtracks); raises LineSearchStagnation when the budget runs out.
    """
    lo, hi = cfg.interp_clip
    tau = float(tau_init)
    payload, f_trial = eval_at(tau)
    if _armijo_ok(f_trial, f_ref, cfg.c1, tau, slope):
        if cfg.try_grow:
            tau_big = cfg.grow_factor * tau
            payload_big, f_big = eval_at(tau_big)
            if f_big < f_trial and _armijo_ok(f_big, f_ref, cfg.c1, tau_big, slope):
                return tau_big, payload_big, f_big, 0
        return tau, payload, f_trial, 0
    for i in range(1, cfg.max_backtracks + 1):
        # minimizer of the quadratic through (0, f0) with given slope and (tau, f_trial)
        denom = 2.0 * (f_trial - f0 - slope * tau)
        if denom > 0:
            tau_new = -slope * tau * tau / denom
        else:
            tau_new = hi * tau
        tau = float(np.clip(tau_new, lo * tau, hi * tau))
        payload, f_trial = eval_at(tau)
        if _armijo_ok(f_trial, f_ref, cfg.c1, tau, slope):
            return tau, payload, f_trial, i
    raise LineSearchStagnation(
        f"no Armijo step within {cfg.max_backtracks} backtracks "
        f"(last tau={tau:.3e}, f={f_trial:.12g}, f_ref={f_ref:.12g})",
        tau=tau,
        f_trial=f_trial,
        f_ref=f_ref,
    )


def line_search(mc, eta: TangentField, tau_init: float, *, f_ref: float | None = None,
                cfg: EarcgConfig | None = None) -> float:
    """Step size along ``eta`` from ``mc.state`` satisfying nonmonotone Armijo.

    f(tau) = energy(retract(phi, tau * eta)) must fall below
    f_ref + c1 * tau * DE(phi)[eta].  With no history, f_ref defaults to the
    current energy (monotone Armijo).

    Raises NonDescentError when the directional derivative is nonnegative,
    and LineSearchStagnation when the backtracking budget is exhausted.
    """
    if tau_init <= 0:
        raise ValueError(f"tau_init must be positive, got {tau_init}")
    cfg = cfg or EarcgConfig()
    params = mc.ham.params
    grid = mc.state.grid
    phi = mc.state.coeffs
    # slope through the gradient pairing, see module docstring
    g = phi - mc.y / mc.d
    slope = float(np.vdot(mc.ham.apply(g), eta.coeffs).real)
    if slope >= 0:
        raise NonDescentError(f"DE(phi)[eta] = {slope:.3e} >= 0")

    def eval_at(tau):
        trial, _, _ = retract_raw(phi, tau * eta.coeffs)
        u = real_from_coeffs(trial, grid)
        return None, energy_terms_raw(trial, u, params, grid)["total"]

    u_phi = real_from_coeffs(phi, grid)
    f0 = energy_terms_raw(phi, u_phi, params, grid)["total"]
    ref = f0 if f_ref is None else max(f_ref, f0)
    tau, _, _, _ = _backtrack_search(eval_at, tau_init, f0, slope, ref, cfg)
    return tau


def _gradient_at(ham, phi, rtol, warm):
    """Energy-adaptive gradient pieces at phi for the given inner tolerance."""
    y = solve_inverse(ham, phi, rtol, x0=warm)
    d = float(np.vdot(y, phi).real)
    g = phi - y / d
    ag = ham.apply(g)
    gnorm_sq = float(np.vdot(g, ag).real)
    gnorm = float(np.sqrt(max(gnorm_sq, 0.0)))
    return y, g, ag, gnorm_sq, gnorm


def _certified_gradient(ham, phi, rtol, warm, cfg, lam):
    """Gradient with the inner tolerance matched to its own measured norm.

    The anticipated tolerance may be too loose when the gradient drops a lot
    in one step (or at a cold start); in that case the solve is continued
    from its own result at the tolerance the measurement asks for, until
    tolerance and norm are self-consistent.  Warm starts make the total cost
    about that of a single solve at the final tolerance.
    """
    while True:
        y, g, ag, gnorm_sq, gnorm = _gradient_at(ham, phi, rtol, warm)
        needed = max(
            cfg.inner_rtol_floor,
            min(cfg.inner_rtol_cap,
                cfg.inner_rtol_factor * gnorm / max(1.0, lam)),
        )
        if rtol <= needed * 1.01:
            return y, g, ag, gnorm_sq, gnorm, rtol
        rtol = needed
        warm = y


def earcg_solve(phi0: State, params: GpeParams, cfg: EarcgConfig) -> tuple[State, RunTrace]:
    """Run the energy-adaptive Riemannian CG from ``phi0`` down to cfg.tol.

    Returns the final state together with the full run trace.  Reaching
    max_iters is reported as termination reason "max_iters", not an error;
    inner-solve failures propagate.
    """
    grid = phi0.grid
    if (grid.a, grid.n) != (params.a, params.n):
        raise ValueError(f"state grid {grid} does not match params {params}")
    if abs(phi0.norm() - 1.0) > 1e-10:
        raise ValueError(f"initial state must be unit norm, got {phi0.norm():.12f}")

    t0 = time.perf_counter()
    rows: list[TraceRow] = []
    warnings: list[str] = []
    window: deque[float] = deque(maxlen=cfg.nonmonotone_window)

    phi = phi0.coeffs
    u = None  # real-space samples of phi, carried across iterations
    tau_prev = 1.0
    y_warm = None
    gnorm_prev = None
    pending = None  # (transported g, transported eta, previous a(g, g))

    k = 0
    termination = None
    while True:
        if u is None:
            u = real_from_coeffs(phi, grid)
        ham = HamiltonianContext(params, grid, u.real**2 + u.imag**2)
        terms = energy_terms_raw(phi, u, params, grid)
        e_here = terms["total"]
        lam = 2.0 * e_here + 0.5 * params.kappa * terms["quartic"]

        if gnorm_prev is None:
            rtol = cfg.inner_rtol_cap
        else:
            rtol = min(
                cfg.inner_rtol_cap,
                cfg.inner_rtol_factor * gnorm_prev / max(1.0, lam),
            )
        rtol = max(rtol, cfg.inner_rtol_floor)
        y, g, ag, gnorm_sq, gnorm, rtol = _certified_gradient(
            ham, phi, rtol, y_warm, cfg, lam
        )

        if pending is not None:
            t_grad, t_eta, gnorm_sq_prev = pending
            fr = gnorm_sq / gnorm_sq_prev
            pr = (gnorm_sq - float(np.vdot(ag, t_grad).real)) / gnorm_sq_prev
            beta = max(0.0, min(fr, pr))
            cross = beta * float(np.vdot(ag, t_eta).real)
            eta = -g + beta * t_eta
            slope = -gnorm_sq + cross
            noise_scale = gnorm_sq + abs(cross)
            is_steepest = False
            if slope >= -1e-12 * noise_scale:
                eta = -g
                slope = -gnorm_sq
                is_steepest = True
        else:
            fr = None
            beta = 0.0
            eta = -g
            slope = -gnorm_sq
            is_steepest = True

        row = TraceRow(
            k=k,
            energy=e_here,
            grad_norm=gnorm,
            tau=None,
            beta=beta,
            beta_fr=fr,
            backtracks=0,
            restart=(pending is not None and is_steepest),
            time=time.perf_counter() - t0,
        )
        rows.append(row)

        if gnorm < cfg.tol:
            termination = "converged"
            break
        if k >= cfg.max_iters:
            termination = "max_iters"
            break

        if cfg.callback is not None:
            state_here = State(grid=grid, coeffs=phi)
            info = IterationInfo(
                k=k,
                state=state_here,
                grad=TangentField(grid=grid, coeffs=g, base=state_here),
                grad_norm=gnorm,
                tau_prev=tau_prev,
                energy=e_here,
            )
            action = cfg.callback(info)
            if action is not None:
                if action.warning:
                    warnings.append(action.warning)
                if action.tag:
                    row.event = action.tag
                if action.replace is not None:
                    rep = action.replace
                    if rep.grid != grid:
                        raise ValueError("replacement state lives on a different grid")
                    if abs(rep.norm() - 1.0) > 1e-9:
                        raise ValueError(
                            f"replacement state must be unit norm, got {rep.norm():.12f}"
                        )
                    phi = rep.coeffs
                    u = None
                    pending = None
                    tau_prev = 1.0
                    y_warm = None
                    gnorm_prev = None
                    window.clear()
                    k += 1
                    continue

        window.append(e_here)
        f_ref = max(window)

        def make_eval(direction):
            def eval_at(tau):
                trial, u_dir, norm_u = retract_raw(phi, tau * direction)
                u_trial = real_from_coeffs(trial, grid)
                f = energy_terms_raw(trial, u_trial, params, grid)["total"]
                return (trial, u_trial, u_dir, norm_u), f
            return eval_at

        # line search with a retry ladder: CG direction -> steepest descent
        # -> steepest descent at tighter inner tolerances.  When the
        # predicted Armijo decrease is below the fp resolution of the
        # energy, comparisons of f cannot certify progress any more; the
        # step is then taken from the local quadratic model instead, whose
        # coefficients are O(||g||^2) inner products and stay accurate.
        noise_floor = 32.0 * np.finfo(float).eps * (1.0 + abs(f_ref))
        seed = tau_prev
        while True:
            if abs(slope) * seed < noise_floor:
                a_eta = ham.apply(eta)
                curv = float(np.vdot(eta, a_eta).real) - lam * float(
                    np.vdot(eta, eta).real
                )
                if curv > 0.0:
                    tau = min(-slope / curv, 1e3)
                else:
                    tau = max(seed, 1.0)
                payload, _ = make_eval(eta)(tau)
                nbt = 0
                break
            try:
                tau, payload, _, nbt = _backtrack_search(
                    make_eval(eta), seed, e_here, slope, f_ref, cfg
                )
                break
            except LineSearchStagnation as exc:
                if not is_steepest:
                    eta = -g
                    slope = -gnorm_sq
                    is_steepest = True
                    row.restart = True
                    seed = 1.0
                    continue
                if rtol > cfg.inner_rtol_floor * 1.001:
                    rtol = max(cfg.inner_rtol_floor, rtol * 1e-2)
                    y, g, ag, gnorm_sq, gnorm = _gradient_at(ham, phi, rtol, y)
                    row.grad_norm = gnorm
                    row.beta = 0.0
                    row.beta_fr = None
                    row.restart = True
                    eta = -g
                    slope = -gnorm_sq
                    seed = 1.0
                    if gnorm < cfg.tol:
                        tau = None
                        break
                    continue
                trace = _finalize(rows, grid, phi, ham, lam, e_here, gnorm,
                                  "stagnated", t0, warnings)
                raise SolverStagnation(str(exc), trace) from exc

        if tau is None:
            # gradient refinement revealed convergence
            termination = "converged"
            break

        row.tau = tau
        row.backtracks = nbt
        phi_next, u_next, u_dir, norm_u = payload

        t_grad = transport_raw(u_dir, norm_u, g, phi_next)
        t_eta = transport_raw(u_dir, norm_u, eta, phi_next)
        pending = (t_grad, t_eta, gnorm_sq)

        phi = phi_next
        u = u_next
        tau_prev = tau
        y_warm = y
        gnorm_prev = gnorm
        k += 1

    trace = _finalize(rows, grid, phi, ham, lam, e_here, gnorm, termination, t0, warnings)
    return trace.final_state, trace


def _finalize(rows, grid, phi, ham, lam, e_here, gnorm, termination, t0, warnings):
    final_state = State(grid=grid, coeffs=phi)
    residual = float(np.linalg.norm(ham.apply(phi) - lam * phi))
    return RunTrace(
        rows=rows,
        final_state=final_state,
        final_lambda=lam,
        final_energy=e_here,
        final_grad_norm=gnorm,
        final_residual=residual,
        termination=termination,
        wall_time=time.perf_counter() - t0,
        warnings=warnings,
    )
