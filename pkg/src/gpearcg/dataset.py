"""Training-data generation and the GPDS on-disk container.

A generation run solves from a random start to eps2; the iteration callback
captures the state and gradient the first time the gradient energy norm
crosses each of 20 log-equidistant tolerances inside the acceleration
window, and the converged state is attached to all of them as the target.
Runs that do not converge, or that start below the window, are discarded.

GPDS layout (little-endian):

    header:  magic "GPDS" | version u32 | sample count u32 | grid n u32
    record:  a f64 | v1 f64 | v2 f64 | omega f64 | kappa f64
             | tolerance f64 | run id u64 | j u8
             | three (n, n, 2) float32 arrays: state, gradient, target

Field arrays are real-space [Re, Im] channel stacks in float32 (training
precision); conversion from the solver's spectral float64 happens here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .field import State, TangentField, random_state, to_real
from .gpe import CoercivityError, GpeParams
from .solver import EarcgConfig, IterationInfo, earcg_solve

__all__ = [
    "SamplePoint",
    "DatasetFormatError",
    "tolerance_schedule",
    "sample_params",
    "sample_params_custom",
    "field_to_channels",
    "generate_run",
    "generate_batch",
    "write_dataset",
    "read_dataset",
]

MAGIC = b"GPDS"
FORMAT_VERSION = 1
_META = struct.Struct("<5dd QB")

BROAD_BOX = {"kappa": (200.0, 1000.0), "omega": (0.8, 1.6), "v1": (1.0, 2.0)}
HARD_BOX = {"kappa": (600.0, 1000.0), "omega": (1.2, 1.6), "v1": (1.0, 2.0)}


class DatasetFormatError(ValueError):
    """Malformed GPDS container; messages carry byte offsets."""


@dataclass
class SamplePoint:
    """One ((state, gradient), target) training triple."""

    phi_j: np.ndarray  # (n, n, 2) float32
    g_j: np.ndarray
    phi_star: np.ndarray
    tolerance: float
    params: GpeParams
    run_id: int
    j: int  # 1-based index into the tolerance schedule


def tolerance_schedule(eps_min: float, eps_max: float, m: int = 20) -> np.ndarray:
    """Log-equidistant capture tolerances, decreasing from eps_max to eps_min.

    schedule[j-1] = exp((1 - (j-1)/(m-1)) * ln(eps_max)
                        + ((j-1)/(m-1)) * ln(eps_min)),  j = 1..m,
    evaluated in the equivalent power form so the endpoints are exact.
    """
    if not (0.0 < eps_min < eps_max):
        raise ValueError(f"need 0 < eps_min < eps_max, got ({eps_min}, {eps_max})")
    if m < 2:
        raise ValueError(f"need at least 2 tolerances, got m={m}")
    frac = np.arange(m) / (m - 1)
    return eps_max ** (1.0 - frac) * eps_min**frac


def sample_params_custom(rng: np.random.Generator, *, kappa: tuple[float, float],
                         omega: tuple[float, float], v1: tuple[float, float] = (1.0, 2.0),
                         a: float = 20.0, v2: float = 1.0, n: int = 64) -> GpeParams:
    """Uniform parameter draw from explicit ranges (desk-scale regimes)."""
    return GpeParams(
        a=a,
        n=n,
        v1=float(rng.uniform(*v1)),
        v2=v2,
        omega=float(rng.uniform(*omega)),
        kappa=float(rng.uniform(*kappa)),
    )


def sample_params(rng: np.random.Generator, group: str, *, n: int = 64) -> GpeParams:
    """Uniform draw from the named parameter box ("broad" or "hard")."""
    boxes = {"broad": BROAD_BOX, "hard": HARD_BOX}
    if group not in boxes:
        raise ValueError(f"unknown group {group!r}, expected one of {sorted(boxes)}")
    box = boxes[group]
    return sample_params_custom(
        rng, kappa=box["kappa"], omega=box["omega"], v1=box["v1"], n=n
    )


def field_to_channels(field: State | TangentField) -> np.ndarray:
    """Real-space float32 [Re, Im] channel stack of a field."""
    u = to_real(field)
    return np.stack([u.real, u.imag], axis=-1).astype(np.float32)


def generate_run(
    params: GpeParams,
    seed: int,
    *,
    window: tuple[float, float] = (1e-4, 1e-1),
    eps2: float = 1e-8,
    max_iters: int = 30000,
    m: int = 20,
    run_id: int | None = None,
) -> tuple[list[SamplePoint], dict]:
    """One randomized generation run; returns (samples, info).

    Capture uses first-crossing-from-above semantics: tolerance j is taken
    at the first iterate whose gradient norm is <= schedule[j] while the
    previous iterate's was above.  A run yields exactly ``m`` samples or is
    discarded (info["skip_reason"] explains why), so datasets stay uniform.
    """
    schedule = tolerance_schedule(window[0], window[1], m)
    grid = params.make_grid()
    phi0 = random_state(grid, seed)
    rid = seed if run_id is None else run_id

    captured: dict[int, tuple[np.ndarray, np.ndarray, float]] = {}
    prev_gnorm = None

    def capture(info: IterationInfo):
        nonlocal prev_gnorm
        if prev_gnorm is not None:
            for idx, eps_j in enumerate(schedule):
                if idx not in captured and prev_gnorm > eps_j >= info.grad_norm:
                    captured[idx] = (
                        field_to_channels(info.state),
                        field_to_channels(info.grad),
                        info.grad_norm,
                    )
        prev_gnorm = info.grad_norm
        return None

    cfg = EarcgConfig(tol=eps2, max_iters=max_iters, callback=capture)
    final, trace = earcg_solve(phi0, params, cfg)

    info = {
        "run_id": rid,
        "seed": seed,
        "iterations": trace.iterations,
        "termination": trace.termination,
        "final_energy": trace.final_energy,
        "skip_reason": None,
    }
    if trace.termination != "converged":
        info["skip_reason"] = f"not_converged ({trace.termination})"
        return [], info
    if len(captured) < m:
        info["skip_reason"] = (
            f"incomplete_capture ({len(captured)}/{m} tolerances crossed)"
        )
        return [], info

    target = field_to_channels(final)
    samples = [
        SamplePoint(
            phi_j=captured[idx][0],
            g_j=captured[idx][1],
            phi_star=target,
            tolerance=float(schedule[idx]),
            params=params,
            run_id=rid,
            j=idx + 1,
        )
        for idx in range(m)
    ]
    return samples, info


def generate_batch(
    sampler,
    runs: int,
    seed: int,
    *,
    n: int = 64,
    window: tuple[float, float] = (1e-4, 1e-1),
    eps2: float = 1e-8,
    max_iters: int = 30000,
    progress=None,
) -> tuple[list[SamplePoint], dict]:
    """Run ``runs`` generation solves and collect their samples.

    ``sampler`` is a group name ("broad"/"hard") or a callable
    rng -> GpeParams.  Failed runs are skipped and logged in the manifest,
    never fatal.
    """
    rng = np.random.default_rng(seed)
    samples: list[SamplePoint] = []
    manifest_runs = []
    for i in range(runs):
        if callable(sampler):
            params = sampler(rng)
        else:
            params = sample_params(rng, sampler, n=n)
        run_seed = int(rng.integers(0, 2**62))
        try:
            got, info = generate_run(
                params, run_seed, window=window, eps2=eps2,
                max_iters=max_iters, run_id=run_seed,
            )
        except (CoercivityError, RuntimeError) as exc:
            got, info = [], {
                "run_id": run_seed, "seed": run_seed, "iterations": None,
                "termination": "error", "final_energy": None,
                "skip_reason": f"solver_error: {exc}",
            }
        info["params"] = {
            "a": params.a, "n": params.n, "v1": params.v1, "v2": params.v2,
            "omega": params.omega, "kappa": params.kappa,
        }
        info["n_samples"] = len(got)
        manifest_runs.append(info)
        samples.extend(got)
        if progress is not None:
            progress(i + 1, runs, info)
    manifest = {
        "seed": seed,
        "runs": runs,
        "n": n,
        "window": list(window),
        "eps2": eps2,
        "kept_runs": sum(1 for r in manifest_runs if r["skip_reason"] is None),
        "samples": len(samples),
        "run_log": manifest_runs,
    }
    return samples, manifest


def write_dataset(samples: list[SamplePoint], path) -> None:
    """Write samples as a GPDS container; all samples must share one grid size."""
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    n = samples[0].phi_j.shape[0]
    for s in samples:
        for arr in (s.phi_j, s.g_j, s.phi_star):
            if arr.shape != (n, n, 2):
                raise DatasetFormatError(
                    f"sample run={s.run_id} j={s.j} has shape {arr.shape}, "
                    f"container is fixed to ({n}, {n}, 2)"
                )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, len(samples), n))
        for s in samples:
            p = s.params
            fh.write(_META.pack(p.a, p.v1, p.v2, p.omega, p.kappa,
                                s.tolerance, s.run_id, s.j))
            for arr in (s.phi_j, s.g_j, s.phi_star):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_dataset(path) -> tuple[list[SamplePoint], dict]:
    """Exact inverse of :func:`write_dataset`."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 16:
        raise DatasetFormatError(f"file too short for a header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise DatasetFormatError(f"bad magic {buf[:4]!r} at offset 0, expected {MAGIC!r}")
    version, count, n = struct.unpack_from("<III", buf, 4)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported version {version} at offset 4")
    array_bytes = n * n * 2 * 4
    rec_bytes = _META.size + 3 * array_bytes
    expected = 16 + count * rec_bytes
    if len(buf) != expected:
        raise DatasetFormatError(
            f"size mismatch: header promises {count} records "
            f"({expected} bytes), file has {len(buf)}"
        )
    samples = []
    off = 16
    for _ in range(count):
        a, v1, v2, omega, kappa, tol, run_id, j = _META.unpack_from(buf, off)
        off += _META.size
        arrays = []
        for _ in range(3):
            arr = np.frombuffer(buf, dtype="<f4", count=n * n * 2, offset=off)
            arrays.append(arr.reshape(n, n, 2).copy())
            off += array_bytes
        params = GpeParams(a=a, n=n, v1=v1, v2=v2, omega=omega, kappa=kappa)
        samples.append(SamplePoint(
            phi_j=arrays[0], g_j=arrays[1], phi_star=arrays[2],
            tolerance=tol, params=params, run_id=run_id, j=j,
        ))
    meta = {"version": version, "count": count, "n": n}
    return samples, meta
