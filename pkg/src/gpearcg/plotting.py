"""Density heatmaps and benchmark report figures.

Density plots come in two flavors.  The PPM (P6) writer is fully
deterministic -- fixed colormap, fixed orientation, no external renderer --
so outputs are bit-exact across runs and usable as golden files.  PNG output
goes through matplotlib with the same colormap for human consumption.

Colormap (documented, frozen): density is scaled by its maximum to
t in [0, 1], then mapped black -> red -> yellow -> white through the
piecewise-linear ramp r = 3t, g = 3t - 1, b = 3t - 2 (each clipped to [0, 1]
and quantized as round(255 * channel)).  Pixel rows scan decreasing second
coordinate (top row = largest x2), columns scan increasing first coordinate.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .field import State, to_real  # noqa: E402

__all__ = [
    "density_of",
    "density_to_rgb",
    "plot_density",
    "plot_trace",
    "plot_bench_summary",
]


def density_of(state: State) -> np.ndarray:
    """Real-space density |phi|^2 samples."""
    u = to_real(state)
    return u.real**2 + u.imag**2


def density_to_rgb(rho: np.ndarray) -> np.ndarray:
    """Map a density array to uint8 RGB pixels under the fixed colormap."""
    peak = float(rho.max())
    t = rho / peak if peak > 0 else np.zeros_like(rho)
    rgb = np.stack(
        [np.clip(3.0 * t, 0.0, 1.0),
         np.clip(3.0 * t - 1.0, 0.0, 1.0),
         np.clip(3.0 * t - 2.0, 0.0, 1.0)],
        axis=-1,
    )
    return np.round(255.0 * rgb).astype(np.uint8)


def _image_array(state: State) -> np.ndarray:
    rho = density_of(state)
    # [i, j] indexes (x1, x2); images scan x2 downward, x1 rightward
    img = rho.T[::-1, :]
    return density_to_rgb(img)


def plot_density(state: State, path) -> None:
    """Write |phi|^2 as a heatmap; .ppm is bit-exact, .png via matplotlib."""
    path = str(path)
    if path.endswith(".ppm"):
        img = _image_array(state)
        n = state.grid.n
        with open(path, "wb") as fh:
            fh.write(f"P6\n{n} {n}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    elif path.endswith(".png"):
        img = _image_array(state)
        half = state.grid.a / 2
        fig, ax = plt.subplots(figsize=(4.2, 4.0))
        ax.imshow(img, extent=(-half, half, -half, half), interpolation="nearest")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    else:
        raise ValueError(f"unsupported plot extension in {path!r} (use .ppm or .png)")


def plot_trace(trace, path) -> None:
    """Energy and gradient-norm history of one run."""
    ks = [r.k for r in trace.rows]
    es = [r.energy for r in trace.rows]
    gs = [r.grad_norm for r in trace.rows]
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6.0, 5.4), sharex=True)
    ax0.plot(ks, es, lw=1.0)
    ax0.set_ylabel("energy")
    ax1.semilogy(ks, gs, lw=1.0)
    ax1.set_ylabel("gradient energy norm")
    ax1.set_xlabel("iteration")
    for r in trace.rows:
        if r.event in ("nn_applied", "nn_forced"):
            for ax in (ax0, ax1):
                ax.axvline(r.k, color="tab:red", lw=0.8, alpha=0.7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_bench_summary(records, path) -> None:
    """Histograms of the percentage of iterations saved, per mode."""
    modes = [("strategy", "tab:blue"), ("random_apply", "tab:orange")]
    present = [(m, c) for m, c in modes
               if any(getattr(r, m) for r in records if r.error is None)]
    if not present:
        raise ValueError("no accelerated results in the records")
    fig, axes = plt.subplots(1, len(present), figsize=(5.0 * len(present), 3.8),
                             squeeze=False)
    for ax, (mode, color) in zip(axes[0], present):
        vals = [getattr(r, mode)["iters_saved_pct"] for r in records
                if r.error is None and getattr(r, mode) is not None]
        ax.hist(vals, bins=20, color=color, edgecolor="black", lw=0.4)
        ax.axvline(0.0, color="black", lw=0.8)
        ax.set_title(mode.replace("_", " "))
        ax.set_xlabel("iterations saved (%)")
        ax.set_ylabel("cases")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
