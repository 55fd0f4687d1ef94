"""Command-line surface: solve, gen-data, accel-solve, bench, plot.

Runs are configured through a JSON file merged over the built-in defaults:

    {"a": 20.0, "n": 64, "v1": 1.0, "v2": 1.0, "omega": 0.0, "kappa": 0.0,
     "tol": 1e-8,
     "accel": {"eps1_min": 1e-4, "eps1_max": 1e-1, "eps2": 1e-8,
               "n_e": 5, "e0": 5e-3}}

Traces serialize to JSON lines: one object per iteration plus a final
summary object, so downstream tooling can recompute any statistic.
"""

from __future__ import annotations

import argparse
import json
import sys

from .accel import AccelConfig
from .bench import (
    BenchCase,
    bench,
    load_records,
    summarize,
    write_summary_csv,
)
from .dataset import generate_batch, write_dataset
from .field import load_state, random_state, save_state
from .gpe import GpeParams
from .solver import EarcgConfig, RunTrace, earcg_solve
from .unet import UnetModel

DEFAULT_CONFIG = {
    "a": 20.0,
    "n": 64,
    "v1": 1.0,
    "v2": 1.0,
    "omega": 0.0,
    "kappa": 0.0,
    "tol": 1e-8,
    "accel": {
        "eps1_min": 1e-4,
        "eps1_max": 1e-1,
        "eps2": 1e-8,
        "n_e": 5,
        "e0": 5e-3,
    },
}


def load_config(path=None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        accel = user.pop("accel", {})
        cfg.update(user)
        cfg["accel"].update(accel)
    return cfg


def params_from_config(cfg: dict) -> GpeParams:
    return GpeParams(a=cfg["a"], n=int(cfg["n"]), v1=cfg["v1"], v2=cfg["v2"],
                     omega=cfg["omega"], kappa=cfg["kappa"])


def accel_from_config(cfg: dict) -> AccelConfig:
    acc = cfg["accel"]
    return AccelConfig(eps1_min=acc["eps1_min"], eps1_max=acc["eps1_max"],
                       eps2=acc["eps2"], n_e=int(acc["n_e"]), e0=acc["e0"])


def write_trace_jsonl(trace: RunTrace, path) -> None:
    """One JSON object per iteration row, then a final summary object."""
    with open(path, "w") as fh:
        for r in trace.rows:
            fh.write(json.dumps({
                "type": "iter", "k": r.k, "energy": r.energy,
                "grad_norm": r.grad_norm, "tau": r.tau, "beta": r.beta,
                "beta_fr": r.beta_fr, "backtracks": r.backtracks,
                "restart": r.restart, "time": r.time, "event": r.event,
            }) + "\n")
        fh.write(json.dumps({
            "type": "final",
            "termination": trace.termination,
            "iterations": trace.iterations,
            "energy": trace.final_energy,
            "lambda": trace.final_lambda,
            "grad_norm": trace.final_grad_norm,
            "residual": trace.final_residual,
            "wall_time": trace.wall_time,
            "warnings": trace.warnings,
            "events": [
                {
                    "iteration": e.iteration, "decision": e.decision,
                    "grad_norm": e.grad_norm, "indicator": e.indicator,
                    "pre_energy": e.pre_energy, "post_energy": e.post_energy,
                    "note": e.note,
                }
                for e in trace.accel_events
            ],
        }) + "\n")


def read_trace_jsonl(path) -> dict:
    """Load a trace file back into {"rows": [...], "final": {...}}."""
    rows, final = [], None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc.get("type") == "final":
                final = doc
            else:
                rows.append(doc)
    return {"rows": rows, "final": final}


def _finish_solve(args, params, final, trace) -> None:
    print(f"termination: {trace.termination} after {trace.iterations} iterations "
          f"({trace.wall_time:.2f} s)")
    print(f"energy = {trace.final_energy:.12g}")
    print(f"lambda = {trace.final_lambda:.12g}")
    print(f"gradient energy norm = {trace.final_grad_norm:.3e}")
    for w in trace.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for e in trace.accel_events:
        print(f"event: k={e.iteration} decision={e.decision} "
              f"indicator={e.indicator if e.indicator is None else f'{e.indicator:.4g}'}")
    if args.out_trace:
        write_trace_jsonl(trace, args.out_trace)
        print(f"trace -> {args.out_trace}")
    if args.out_state:
        save_state(final, args.out_state)
        print(f"state -> {args.out_state}")
    if args.plot:
        from .plotting import plot_density

        plot_density(final, args.plot)
        print(f"density plot -> {args.plot}")
    if args.plot_trace:
        from .plotting import plot_trace

        plot_trace(trace, args.plot_trace)
        print(f"trace plot -> {args.plot_trace}")


def _add_solve_flags(sub) -> None:
    sub.add_argument("--params-file", help="JSON config merged over defaults")
    sub.add_argument("--seed", type=int, default=0, help="random initial state seed")
    sub.add_argument("--tol", type=float, help="override termination tolerance")
    sub.add_argument("--max-iters", type=int, default=30000)
    sub.add_argument("--out-trace", help="write the run trace as JSON lines")
    sub.add_argument("--out-state", help="write the final state as .npz")
    sub.add_argument("--plot", help="write a density heatmap (.ppm or .png)")
    sub.add_argument("--plot-trace", help="write an energy/gradient figure (.png)")


def cmd_solve(args) -> int:
    cfg = load_config(args.params_file)
    params = params_from_config(cfg)
    tol = args.tol if args.tol is not None else cfg["tol"]
    phi0 = random_state(params.make_grid(), args.seed)
    final, trace = earcg_solve(
        phi0, params, EarcgConfig(tol=tol, max_iters=args.max_iters)
    )
    _finish_solve(args, params, final, trace)
    return 0


def cmd_accel_solve(args) -> int:
    cfg = load_config(args.params_file)
    params = params_from_config(cfg)
    accel = accel_from_config(cfg)
    if args.tol is not None:
        accel = AccelConfig(eps1_min=accel.eps1_min, eps1_max=accel.eps1_max,
                            eps2=args.tol, n_e=accel.n_e, e0=accel.e0)
    model = UnetModel.load(args.model, args.spec)
    phi0 = random_state(params.make_grid(), args.seed)
    from .accel import accelerated_solve

    final, trace = accelerated_solve(
        phi0, params, accel, EarcgConfig(tol=accel.eps2, max_iters=args.max_iters),
        model,
    )
    _finish_solve(args, params, final, trace)
    return 0


def cmd_gen_data(args) -> int:
    cfg = load_config(args.params_file)
    accel = cfg["accel"]
    window = (accel["eps1_min"], accel["eps1_max"])

    sampler = args.group
    if args.kappa_range or args.omega_range or args.v1_range:
        from .dataset import sample_params_custom

        kr = tuple(args.kappa_range) if args.kappa_range else (200.0, 1000.0)
        orr = tuple(args.omega_range) if args.omega_range else (0.8, 1.6)
        vr = tuple(args.v1_range) if args.v1_range else (1.0, 2.0)

        def sampler(rng):  # noqa: F811 - deliberate override
            return sample_params_custom(rng, kappa=kr, omega=orr, v1=vr,
                                        n=int(cfg["n"]), a=cfg["a"])

    def progress(i, total, info):
        reason = info["skip_reason"]
        status = "ok" if reason is None else f"skipped ({reason})"
        print(f"run {i}/{total}: {info['iterations']} iterations, {status}")

    samples, manifest = generate_batch(
        sampler, args.runs, args.seed, n=int(cfg["n"]), window=window,
        eps2=accel["eps2"], progress=progress,
    )
    if not samples:
        print("no samples generated; nothing written", file=sys.stderr)
        return 1
    write_dataset(samples, args.out)
    manifest_path = args.manifest or (str(args.out) + ".manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"{len(samples)} samples from {manifest['kept_runs']}/{args.runs} runs "
          f"-> {args.out}")
    print(f"manifest -> {manifest_path}")
    return 0


def cmd_bench(args) -> int:
    with open(args.cases) as fh:
        doc = json.load(fh)
    case_docs = doc["cases"] if isinstance(doc, dict) else doc
    cases = []
    for i, cd in enumerate(case_docs):
        cfg = json.loads(json.dumps(DEFAULT_CONFIG))
        cfg["accel"].update(cd.pop("accel", {}))
        cfg.update({k: v for k, v in cd.items() if k in cfg})
        cases.append(BenchCase(
            case_id=str(cd.get("id", f"case{i:04d}")),
            params=params_from_config(cfg),
            seed=int(cd.get("seed", i)),
            accel=accel_from_config(cfg),
        ))
    spec_path = args.spec if args.spec else str(args.model) + ".json"
    model = UnetModel.load(args.model, spec_path)
    records = bench(cases, model, mode=args.mode, out_path=args.out,
                    workers=args.workers)
    summary = summarize(records)
    print(json.dumps(summary, indent=2, default=str))
    if args.summary_csv:
        write_summary_csv(summary, args.summary_csv)
        print(f"summary -> {args.summary_csv}")
    if args.plot_summary:
        from .plotting import plot_bench_summary

        plot_bench_summary(records, args.plot_summary)
        print(f"summary figure -> {args.plot_summary}")
    return 0


def cmd_summarize(args) -> int:
    records = load_records(args.records)
    summary = summarize(records)
    print(json.dumps(summary, indent=2, default=str))
    if args.summary_csv:
        write_summary_csv(summary, args.summary_csv)
    return 0


def cmd_plot(args) -> int:
    state = load_state(args.state_file)
    from .plotting import plot_density

    plot_density(state, args.out)
    print(f"density plot -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gpearcg",
        description="Rotating Gross-Pitaevskii ground states via "
                    "energy-adaptive Riemannian CG",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="plain solve from a random start")
    _add_solve_flags(s)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("accel-solve", help="solve with the learned correction")
    s.add_argument("--model", required=True, help="GPUW weight archive")
    s.add_argument("--spec", required=True, help="JSON topology sidecar")
    _add_solve_flags(s)
    s.set_defaults(func=cmd_accel_solve)

    s = sub.add_parser("gen-data", help="generate a GPDS training dataset")
    s.add_argument("--group", default="broad", choices=["broad", "hard"])
    s.add_argument("--runs", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output GPDS path")
    s.add_argument("--params-file")
    s.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    s.add_argument("--kappa-range", type=float, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--omega-range", type=float, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--v1-range", type=float, nargs=2, metavar=("LO", "HI"))
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("bench", help="paired classical/accelerated benchmark")
    s.add_argument("--cases", required=True, help="JSON case list")
    s.add_argument("--model", required=True)
    s.add_argument("--spec", help="topology sidecar (default: <model>.json)")
    s.add_argument("--workers", type=int, default=1,
                   help="cases run in a process pool when > 1")
    s.add_argument("--mode", default="strategy",
                   choices=["strategy", "random_apply", "both"])
    s.add_argument("--out", required=True, help="JSON-lines records path")
    s.add_argument("--summary-csv")
    s.add_argument("--plot-summary", help="histogram figure (.png)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("summarize", help="recompute statistics from records")
    s.add_argument("--records", required=True)
    s.add_argument("--summary-csv")
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("plot", help="density heatmap of a saved state")
    s.add_argument("--state-file", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
