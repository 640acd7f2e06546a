"""Rendering of run artifacts: metric and optimization figures as PNG files
(headless Agg backend) and 8-bit grayscale slice export in the binary
portable-graymap (P5) format with a JSON sidecar recording the value window.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import ScalarVolume, VectorField
from .metrics import DetHistogram, MetricsReport
from .objective import LossBreakdown

__all__ = [
    "save_loss_curves",
    "save_det_curves",
    "save_slice_panels",
    "render_metric_figures",
    "write_pgm",
    "export_slices",
]

_AXIS_NAMES = ("x", "y", "z")


def save_loss_curves(history: list[LossBreakdown], path) -> Path:
    """Plot every objective term against the iteration number."""
    if not history:
        raise ValueError("loss history is empty")
    path = Path(path)
    iters = np.arange(len(history))
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name in ("total", "sim", "smooth", "incompress"):
        ax.plot(iters, [getattr(h, name) for h in history], label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("objective terms during optimization")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_det_curves(histogram: DetHistogram, auc: float, path) -> Path:
    """Plot the weighted determinant-error histogram and its CDF."""
    path = Path(path)
    edges = np.asarray(histogram.bin_edges, dtype=np.float64)
    counts = np.asarray(histogram.counts, dtype=np.float64)
    total = float(np.sum(counts))
    if total <= 0:
        raise ValueError("histogram has zero total weight")
    centers = 0.5 * (edges[:-1] + edges[1:])
    cdf = np.cumsum(counts) / total

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.bar(centers, counts / total, width=np.diff(edges),
           alpha=0.4, label="weight fraction")
    ax.set_xlabel("|determinant - 1| (clipped to [0, 1])")
    ax.set_ylabel("weight fraction")
    ax2 = ax.twinx()
    ax2.plot(edges[1:], cdf, color="tab:red", label="CDF")
    ax2.set_ylabel("cumulative weight fraction")
    ax2.set_ylim(0.0, 1.05)
    ax.set_title(f"determinant error distribution (area under CDF = {auc:.4f})")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _mid_slice(values: np.ndarray, axis: int) -> np.ndarray:
    index = values.shape[axis] // 2
    return np.take(values, index, axis=axis)


def save_slice_panels(panels: dict[str, ScalarVolume], path, axis: int = 2) -> Path:
    """One mid-slice image per named volume, shared figure, own color scales."""
    if not panels:
        raise ValueError("no panels to draw")
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1, or 2, got {axis}")
    path = Path(path)
    fig, axes = plt.subplots(1, len(panels), figsize=(4.0 * len(panels), 3.6),
                             squeeze=False)
    for ax, (name, vol) in zip(axes[0], panels.items()):
        sl = _mid_slice(vol.values, axis)
        im = ax.imshow(sl.T, origin="lower", cmap="viridis")
        ax.set_title(f"{name} ({_AXIS_NAMES[axis]} mid-slice)")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_metric_figures(report: MetricsReport, out_dir,
                          history: list[LossBreakdown] | None = None,
                          panels: dict[str, ScalarVolume] | None = None) -> list[Path]:
    """Write the standard evaluation figures; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [save_det_curves(report.histogram, report.det_auc,
                               out_dir / "det_cdf.png")]
    if history:
        written.append(save_loss_curves(history, out_dir / "loss_curves.png"))
    if panels:
        written.append(save_slice_panels(panels, out_dir / "slices.png"))
    return written


def write_pgm(values: np.ndarray, path,
              window: tuple[float, float] | None = None) -> tuple[float, float]:
    """Write a 2D array as a binary portable graymap; returns the window used.

    Gray levels follow gray = round(255 * clip((v - lo) / (hi - lo), 0, 1));
    a degenerate window (hi <= lo) maps every pixel to mid-gray 128.  Array
    rows become pixel rows top to bottom.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2D slice, got shape {values.shape}")
    if window is None:
        window = (float(np.min(values)), float(np.max(values)))
    lo, hi = float(window[0]), float(window[1])
    if hi > lo:
        gray = np.round(255.0 * np.clip((values - lo) / (hi - lo), 0.0, 1.0))
    else:
        gray = np.full(values.shape, 128.0)
    rows, cols = values.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(gray.astype(np.uint8).tobytes())
    return lo, hi


def export_slices(volume: ScalarVolume | VectorField, axis: int,
                  indices: list[int], out_dir, source: str = "",
                  prefix: str = "slice") -> list[Path]:
    """Export planar slices of a volume as PGM images plus a window sidecar.

    Vector fields are exported as their per-voxel Euclidean magnitude.  All
    slices share one window (the volume-wide min/max) so gray levels are
    comparable across slices; the sidecar ``<prefix>_window.json`` records
    the window, the mapping formula, and the slice index of every file.
    Slices are written with the first remaining grid axis as pixel columns.
    """
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1, or 2, got {axis}")
    if not indices:
        raise ValueError("no slice indices given")
    if isinstance(volume, VectorField):
        values = np.sqrt(np.sum(volume.vectors ** 2, axis=-1))
    else:
        values = volume.values
    n = values.shape[axis]
    for index in indices:
        if not 0 <= index < n:
            raise ValueError(f"slice index {index} out of range [0, {n}) "
                             f"along axis {_AXIS_NAMES[axis]}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    window = (float(np.min(values)), float(np.max(values)))
    files: dict[str, int] = {}
    written: list[Path] = []
    for index in indices:
        sl = np.take(values, index, axis=axis)
        name = f"{prefix}_{_AXIS_NAMES[axis]}{index:04d}.pgm"
        write_pgm(sl.T, out_dir / name, window)
        files[name] = index
        written.append(out_dir / name)
    sidecar = {
        "source": source,
        "axis": _AXIS_NAMES[axis],
        "window": [window[0], window[1]],
        "maxval": 255,
        "mapping": "gray = round(255 * clip((value - window[0]) / "
                   "(window[1] - window[0]), 0, 1)); degenerate window -> 128",
        "files": files,
    }
    sidecar_path = out_dir / f"{prefix}_window.json"
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n")
    written.append(sidecar_path)
    return written
