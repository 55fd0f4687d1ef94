"""Paired-run benchmark harness: classical vs accelerated solves.

Each case fixes a parameter set and a seed; the classical run and every
accelerated mode start from the bit-identical random state, so iteration
and wall-time deltas are attributable to the acceleration alone.  Records
stream to JSON lines; the summary statistics are a pure function of the
records and can be recomputed exactly from the file.

Quality measures per case: iterations saved (absolute and percent), wall
time saved (percent), the relative density-error improvement of the network
step, and whether both runs reached the same minimum (|dE| < 1e-8).
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field as dc_field

import numpy as np

from .accel import AccelConfig, accelerated_solve, random_apply_solve
from .field import GridMismatchError, State, random_state, to_real
from .gpe import GpeParams
from .solver import EarcgConfig, RunTrace, SolverStagnation, earcg_solve

__all__ = [
    "BenchCase",
    "BenchRecord",
    "impr_rho",
    "density_l1_error",
    "bench",
    "summarize",
    "load_records",
    "write_summary_csv",
]

SAME_MINIMUM_TOL = 1e-8


def density_l1_error(phi: State, ref: State) -> float:
    """Discrete L1 distance between the densities of two states."""
    if phi.grid != ref.grid:
        raise GridMismatchError(f"grid mismatch: {phi.grid} vs {ref.grid}")
    rho = np.abs(to_real(phi)) ** 2
    rho_ref = np.abs(to_real(ref)) ** 2
    return float(phi.grid.cell_area * np.sum(np.abs(rho - rho_ref)))


def impr_rho(phi_in: State, phi_out: State, phi_ref: State):
    """Relative density-error improvement of out over in, vs the reference.

    (||rho_in - rho*|| - ||rho_out - rho*||) / ||rho_in - rho*|| in the
    discrete L1 norm; values in (0, 1] mean the output is closer.  Returns
    None when the input already matches the reference (undefined ratio).
    """
    err_in = density_l1_error(phi_in, phi_ref)
    err_out = density_l1_error(phi_out, phi_ref)
    if err_in == 0.0:
        return None
    return (err_in - err_out) / err_in


@dataclass(frozen=True)
class BenchCase:
    """One paired-run benchmark case."""

    case_id: str
    params: GpeParams
    seed: int
    accel: AccelConfig = dc_field(default_factory=AccelConfig)


@dataclass
class BenchRecord:
    case_id: str
    params: dict
    seed: int
    classical: dict
    strategy: dict | None = None
    random_apply: dict | None = None
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps({
            "case_id": self.case_id,
            "params": self.params,
            "seed": self.seed,
            "classical": self.classical,
            "strategy": self.strategy,
            "random_apply": self.random_apply,
            "error": self.error,
        })

    @classmethod
    def from_json(cls, line: str) -> "BenchRecord":
        doc = json.loads(line)
        return cls(
            case_id=doc["case_id"],
            params=doc["params"],
            seed=doc["seed"],
            classical=doc["classical"],
            strategy=doc.get("strategy"),
            random_apply=doc.get("random_apply"),
            error=doc.get("error"),
        )


def _run_summary(trace: RunTrace) -> dict:
    return {
        "iterations": trace.iterations,
        "wall_time": trace.wall_time,
        "energy": trace.final_energy,
        "lambda": trace.final_lambda,
        "termination": trace.termination,
        "warnings": list(trace.warnings),
    }


def _event_summary(trace: RunTrace, ref: State) -> dict | None:
    applied = [e for e in trace.accel_events if e.post_state is not None]
    if not applied:
        rejected = [e for e in trace.accel_events if e.decision == "rejected"]
        return {
            "applied": False,
            "rejections": len(rejected),
            "decision": trace.accel_events[-1].decision if trace.accel_events else None,
        }
    ev = applied[0]
    ev.pre_density_err = density_l1_error(ev.pre_state, ref)
    ev.post_density_err = density_l1_error(ev.post_state, ref)
    rho = impr_rho(ev.pre_state, ev.post_state, ref)
    return {
        "applied": True,
        "decision": ev.decision,
        "iteration": ev.iteration,
        "grad_norm": ev.grad_norm,
        "indicator": ev.indicator,
        "pre_energy": ev.pre_energy,
        "post_energy": ev.post_energy,
        "pre_density_err": ev.pre_density_err,
        "post_density_err": ev.post_density_err,
        "impr_rho": rho,
        "rejections": sum(1 for e in trace.accel_events if e.decision == "rejected"),
    }


def _accel_result(trace: RunTrace, classical: dict, ref: State) -> dict:
    iters = trace.iterations
    res = _run_summary(trace)
    res["event"] = _event_summary(trace, ref)
    res["iters_saved"] = classical["iterations"] - iters
    if classical["iterations"] > 0:
        res["iters_saved_pct"] = 100.0 * res["iters_saved"] / classical["iterations"]
    else:
        res["iters_saved_pct"] = 0.0
    if classical["wall_time"] > 0:
        res["time_saved_pct"] = (
            100.0 * (classical["wall_time"] - trace.wall_time) / classical["wall_time"]
        )
    else:
        res["time_saved_pct"] = 0.0
    res["impr_rho"] = res["event"].get("impr_rho") if res["event"] else None
    res["same_minimum"] = abs(res["energy"] - classical["energy"]) < SAME_MINIMUM_TOL
    return res


def run_case(case: BenchCase, model_provider, mode: str,
             earcg_cfg: EarcgConfig | None = None) -> BenchRecord:
    """Execute one case: classical run, then the requested accelerated mode(s)."""
    params = case.params
    grid = params.make_grid()
    phi0 = random_state(grid, case.seed)
    base_cfg = earcg_cfg if earcg_cfg is not None else EarcgConfig()

    record = BenchRecord(
        case_id=case.case_id,
        params={"a": params.a, "n": params.n, "v1": params.v1, "v2": params.v2,
                "omega": params.omega, "kappa": params.kappa},
        seed=case.seed,
        classical={},
    )
    try:
        from dataclasses import replace as dc_replace

        cls_cfg = dc_replace(base_cfg, tol=case.accel.eps2, callback=None)
        ref, cls_trace = earcg_solve(phi0, params, cls_cfg)
        record.classical = _run_summary(cls_trace)

        model = model_provider(case, ref)
        if mode in ("strategy", "both"):
            _, tr = accelerated_solve(phi0, params, case.accel, base_cfg, model)
            record.strategy = _accel_result(tr, record.classical, ref)
        if mode in ("random_apply", "both"):
            rng = np.random.default_rng(case.seed + 777)
            lo, hi = np.log(case.accel.eps1_min), np.log(case.accel.eps1_max)
            eps1 = float(np.exp(rng.uniform(lo, hi)))
            _, tr = random_apply_solve(
                phi0, params, eps1, case.accel.eps2, base_cfg, model
            )
            record.random_apply = _accel_result(tr, record.classical, ref)
            record.random_apply["eps1_sampled"] = eps1
    except (SolverStagnation, RuntimeError, ValueError) as exc:
        record.error = f"{type(exc).__name__}: {exc}"
    return record


def _pool_worker(args):
    case, model, mode, cfg = args
    return run_case(case, lambda c, ref: model, mode, cfg)


def bench(
    cases: list[BenchCase],
    model=None,
    *,
    model_provider=None,
    mode: str = "strategy",
    out_path=None,
    earcg_cfg: EarcgConfig | None = None,
    workers: int = 1,
) -> list[BenchRecord]:
    """Run all cases and stream records to ``out_path`` as JSON lines.

    Pass either a ready predictor (``model``) or a ``model_provider``
    callable (case, reference_state) -> predictor; the provider form lets
    tests build per-case oracles from the classical solution.  Modes:
    "strategy", "random_apply", or "both".

    With ``workers > 1`` cases run in a process pool (requires a picklable
    ``model``, not a provider); records are still written by this process
    only, ordered by case id.
    """
    if mode not in ("strategy", "random_apply", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    if (model is None) == (model_provider is None):
        raise ValueError("pass exactly one of model / model_provider")

    ordered = sorted(cases, key=lambda c: c.case_id)
    sink = open(out_path, "w") if out_path is not None else None
    records = []
    try:
        if workers > 1:
            if model is None:
                raise ValueError("workers > 1 requires a picklable model, not a provider")
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rec in pool.map(
                    _pool_worker,
                    [(case, model, mode, earcg_cfg) for case in ordered],
                ):
                    records.append(rec)
                    if sink is not None:
                        sink.write(rec.to_json() + "\n")
                        sink.flush()
        else:
            provider = (
                model_provider if model_provider is not None
                else (lambda case, ref: model)
            )
            for case in ordered:
                rec = run_case(case, provider, mode, earcg_cfg)
                records.append(rec)
                if sink is not None:
                    sink.write(rec.to_json() + "\n")
                    sink.flush()
    finally:
        if sink is not None:
            sink.close()
    return records


def load_records(path) -> list[BenchRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(BenchRecord.from_json(line))
    return records


def _mode_stats(records: list[BenchRecord], mode: str) -> dict | None:
    results = [getattr(r, mode) for r in records
               if r.error is None and getattr(r, mode) is not None]
    if not results:
        return None
    saved = [r["iters_saved"] for r in results]
    saved_pct = [r["iters_saved_pct"] for r in results]
    time_pct = [r["time_saved_pct"] for r in results]
    rhos = [r["impr_rho"] for r in results if r["impr_rho"] is not None]
    return {
        "cases": len(results),
        "iters_saved_mean": statistics.mean(saved),
        "iters_saved_median": statistics.median(saved),
        "iters_saved_pct_mean": statistics.mean(saved_pct),
        "iters_saved_pct_median": statistics.median(saved_pct),
        "time_saved_pct_mean": statistics.mean(time_pct),
        "time_saved_pct_median": statistics.median(time_pct),
        "impr_rho_mean": statistics.mean(rhos) if rhos else None,
        "impr_rho_median": statistics.median(rhos) if rhos else None,
        "improvement_rate": sum(1 for s in saved if s > 0) / len(saved),
        "same_minimum_rate": sum(1 for r in results if r["same_minimum"]) / len(results),
        "applications": sum(
            1 for r in results if r["event"] and r["event"].get("applied")
        ),
    }


def summarize(records: list[BenchRecord]) -> dict:
    """Aggregate statistics per mode; pure function of the records."""
    errors = [r.case_id for r in records if r.error is not None]
    return {
        "cases_total": len(records),
        "cases_failed": len(errors),
        "failed_ids": errors,
        "strategy": _mode_stats(records, "strategy"),
        "random_apply": _mode_stats(records, "random_apply"),
    }


def write_summary_csv(summary: dict, path) -> None:
    """Flat CSV: one row per mode, one column per statistic."""
    keys = [
        "cases", "iters_saved_mean", "iters_saved_median",
        "iters_saved_pct_mean", "iters_saved_pct_median",
        "time_saved_pct_mean", "time_saved_pct_median",
        "impr_rho_mean", "impr_rho_median",
        "improvement_rate", "same_minimum_rate", "applications",
    ]
    with open(path, "w") as fh:
        fh.write("mode," + ",".join(keys) + "\n")
        for mode in ("strategy", "random_apply"):
            stats = summary.get(mode)
            if stats is None:
                continue
            cells = [mode]
            for key in keys:
                val = stats.get(key)
                cells.append("" if val is None else f"{val:.6g}")
            fh.write(",".join(cells) + "\n")
