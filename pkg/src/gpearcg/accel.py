"""Three-phase accelerated solve: plain CG, gated correction, plain CG.

Phase 1 runs the solver until the gradient energy norm enters the window
[eps1_min, eps1_max].  Phase 2 queries the network every n_e-th in-window
iteration and accepts its output when the normalization-error indicator

    e = |1 - ||candidate||_L2|

falls below e0 (the network has no normalization layer, so a near-unit norm
signals a trustworthy prediction).  If the window floor is reached with no
acceptance, one application is forced.  Exactly one replacement happens per
run; afterwards phase 3 runs the solver down to eps2.  Model failures and
degenerate outputs degrade the run to plain CG with a trace warning.

A random-application baseline (used by the bench harness) replaces the
iterate unconditionally the first time the gradient norm drops below a
sampled threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace
from typing import Callable, Optional

import numpy as np

from .field import State, l2_norm
from .gpe import GpeParams, energy
from .solver import CallbackAction, EarcgConfig, IterationInfo, RunTrace, earcg_solve
from .unet import UnetModel, postprocess, prepare_input

__all__ = [
    "AccelConfig",
    "AccelEvent",
    "norm_error_indicator",
    "should_invoke",
    "accelerated_solve",
    "random_apply_solve",
]


@dataclass(frozen=True)
class AccelConfig:
    """Window bounds, stride, and acceptance threshold of the strategy."""

    eps1_min: float = 1e-4
    eps1_max: float = 1e-1
    eps2: float = 1e-8
    n_e: int = 5
    e0: float = 5e-3

    def __post_init__(self):
        if not (0.0 < self.eps2 < self.eps1_min < self.eps1_max):
            raise ValueError(
                f"need 0 < eps2 < eps1_min < eps1_max, got "
                f"({self.eps2}, {self.eps1_min}, {self.eps1_max})"
            )
        if self.n_e < 1:
            raise ValueError(f"n_e must be >= 1, got {self.n_e}")
        if self.e0 <= 0:
            raise ValueError(f"e0 must be positive, got {self.e0}")


@dataclass
class AccelEvent:
    """One network invocation: what was asked, decided, and changed."""

    iteration: int
    grad_norm: float
    indicator: Optional[float]
    decision: str  # accepted | rejected | forced | random
    pre_energy: float
    post_energy: Optional[float] = None
    note: str = ""
    pre_state: Optional[State] = None
    post_state: Optional[State] = None
    # density errors vs the reference solution, filled post hoc by bench
    pre_density_err: Optional[float] = None
    post_density_err: Optional[float] = None


def norm_error_indicator(candidate) -> float:
    """|1 - ||candidate||_L2|, the acceptance gate for network outputs."""
    return abs(1.0 - l2_norm(candidate))


def should_invoke(k_in_phase2: int, gnorm: float, already_applied: bool,
                  cfg: AccelConfig) -> str:
    """Pure scheduling decision: "skip", "try", or "force".

    ``k_in_phase2`` counts in-window iterations from 0, so entering the
    window triggers an immediate first attempt and later attempts land at
    multiples of n_e relative to the phase-2 start.  The force branch fires
    whenever the gradient norm is already below the window floor and no
    application has happened yet.
    """
    if already_applied:
        return "skip"
    if gnorm < cfg.eps1_min:
        return "force"
    if cfg.eps1_min <= gnorm <= cfg.eps1_max and k_in_phase2 % cfg.n_e == 0:
        return "try"
    return "skip"


class _StrategyState:
    """Mutable bookkeeping shared by the strategy callback closures."""

    def __init__(self):
        self.applied = False
        self.disabled = False
        self.window_count = 0
        self.events: list[AccelEvent] = []


def _run_model(model, info: IterationInfo) -> State:
    x = prepare_input(info.state, info.grad)
    out = np.asarray(model(x))
    return postprocess(out, info.state.grid)


def _strategy_callback(params: GpeParams, cfg: AccelConfig, model,
                       st: _StrategyState) -> Callable[[IterationInfo], Optional[CallbackAction]]:
    def callback(info: IterationInfo) -> Optional[CallbackAction]:
        if st.applied or st.disabled:
            return None
        gn = info.grad_norm
        if gn > cfg.eps1_max:
            return None
        if gn >= cfg.eps1_min:
            k2 = st.window_count
            st.window_count += 1
        else:
            k2 = st.window_count
        decision = should_invoke(k2, gn, st.applied, cfg)
        if decision == "skip":
            return None

        try:
            candidate = _run_model(model, info)
        except Exception as exc:  # noqa: BLE001 - acceleration must never kill a solve
            st.disabled = True
            return CallbackAction(
                warning=f"model invocation failed at iteration {info.k}: {exc!r}; "
                        "continuing as a plain run"
            )
        ind = norm_error_indicator(candidate)

        if decision == "try":
            if ind < cfg.e0:
                new_state = State.normalized(info.state.grid, candidate.coeffs)
                st.applied = True
                st.events.append(AccelEvent(
                    iteration=info.k, grad_norm=gn, indicator=ind,
                    decision="accepted", pre_energy=info.energy,
                    post_energy=energy(new_state, params),
                    pre_state=info.state, post_state=new_state,
                ))
                return CallbackAction(replace=new_state, tag="nn_applied")
            st.events.append(AccelEvent(
                iteration=info.k, grad_norm=gn, indicator=ind,
                decision="rejected", pre_energy=info.energy,
                pre_state=info.state,
            ))
            return CallbackAction(tag="nn_rejected")

        # forced application at the window floor, indicator ignored
        st.applied = True
        if candidate.norm() < 1e-14:
            st.events.append(AccelEvent(
                iteration=info.k, grad_norm=gn, indicator=ind,
                decision="forced", pre_energy=info.energy,
                note="degenerate candidate; fell back to a plain run",
                pre_state=info.state,
            ))
            return CallbackAction(
                tag="nn_rejected",
                warning=f"forced application at iteration {info.k} produced a "
                        "degenerate candidate; continuing as a plain run",
            )
        new_state = State.normalized(info.state.grid, candidate.coeffs)
        st.events.append(AccelEvent(
            iteration=info.k, grad_norm=gn, indicator=ind,
            decision="forced", pre_energy=info.energy,
            post_energy=energy(new_state, params),
            pre_state=info.state, post_state=new_state,
        ))
        return CallbackAction(replace=new_state, tag="nn_forced")

    return callback


def _chain(primary, secondary):
    if secondary is None:
        return primary

    def chained(info):
        action = primary(info)
        if action is not None and action.replace is not None:
            return action
        extra = secondary(info)
        if extra is None:
            return action
        if action is None:
            return extra
        # merge: tag/warning from the strategy win, replacement from the user
        return CallbackAction(
            replace=extra.replace,
            tag=action.tag or extra.tag,
            warning=action.warning or extra.warning,
        )

    return chained


def _check_model_grid(model, params: GpeParams) -> None:
    if isinstance(model, UnetModel) and params.n % model.spec.pool_factor != 0:
        raise ValueError(
            f"grid size {params.n} is not divisible by the model's pooling "
            f"factor {model.spec.pool_factor}"
        )


def accelerated_solve(
    phi0: State,
    params: GpeParams,
    accel_cfg: AccelConfig,
    earcg_cfg: EarcgConfig,
    model,
) -> tuple[State, RunTrace]:
    """Solve to accel_cfg.eps2 with the gated one-shot correction strategy.

    ``model`` maps an (n, n, 4) float32 input tensor to an (n, n, 2) output
    tensor; any callable with that contract works (loaded networks, test
    doubles).  The returned trace carries the invocation events.
    """
    _check_model_grid(model, params)
    st = _StrategyState()
    cb = _chain(_strategy_callback(params, accel_cfg, model, st), earcg_cfg.callback)
    cfg = dc_replace(earcg_cfg, tol=accel_cfg.eps2, callback=cb)
    final, trace = earcg_solve(phi0, params, cfg)
    trace.accel_events = st.events
    return final, trace


def random_apply_solve(
    phi0: State,
    params: GpeParams,
    eps1: float,
    eps2: float,
    earcg_cfg: EarcgConfig,
    model,
) -> tuple[State, RunTrace]:
    """Baseline: one unconditional application when ||g||_a first drops below eps1."""
    if not (eps2 < eps1):
        raise ValueError(f"need eps2 < eps1, got ({eps2}, {eps1})")
    _check_model_grid(model, params)
    st = _StrategyState()

    def callback(info: IterationInfo) -> Optional[CallbackAction]:
        if st.applied or st.disabled or info.grad_norm > eps1:
            return None
        st.applied = True
        try:
            candidate = _run_model(model, info)
        except Exception as exc:  # noqa: BLE001
            st.disabled = True
            return CallbackAction(
                warning=f"model invocation failed at iteration {info.k}: {exc!r}; "
                        "continuing as a plain run"
            )
        ind = norm_error_indicator(candidate)
        if candidate.norm() < 1e-14:
            st.events.append(AccelEvent(
                iteration=info.k, grad_norm=info.grad_norm, indicator=ind,
                decision="random", pre_energy=info.energy,
                note="degenerate candidate; fell back to a plain run",
                pre_state=info.state,
            ))
            return CallbackAction(
                tag="nn_rejected",
                warning=f"random application at iteration {info.k} produced a "
                        "degenerate candidate; continuing as a plain run",
            )
        new_state = State.normalized(info.state.grid, candidate.coeffs)
        st.events.append(AccelEvent(
            iteration=info.k, grad_norm=info.grad_norm, indicator=ind,
            decision="random", pre_energy=info.energy,
            post_energy=energy(new_state, params),
            pre_state=info.state, post_state=new_state,
        ))
        return CallbackAction(replace=new_state, tag="nn_applied")

    cfg = dc_replace(earcg_cfg, tol=eps2, callback=_chain(callback, earcg_cfg.callback))
    final, trace = earcg_solve(phi0, params, cfg)
    trace.accel_events = st.events
    return final, trace
