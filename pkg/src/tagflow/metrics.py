"""Registration quality metrics: image RMSE, determinant statistics, and
ground-truth endpoint error, plus the report container the CLI serializes.

The determinant area-under-curve metric summarizes incompressibility: the
per-voxel errors |det - 1| are clipped to [0, 1], histogrammed with
magnitude weights, and the empirical CDF is integrated over the bins, so a
field whose determinants all sit at 1 scores 1.0 and mass pushed toward
larger errors lowers the score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ScalarVolume, VectorField, jacobian_determinant, require_same_geometry, warp_scalar
from .harp import SinCosTrio

__all__ = [
    "DetHistogram",
    "MetricsReport",
    "rmse",
    "det_auc",
    "negdet_fraction",
    "endpoint_error",
    "build_metrics_report",
]


@dataclass(frozen=True)
class DetHistogram:
    """Weighted histogram of clipped determinant errors over [0, 1]."""

    bin_edges: np.ndarray   # (n_bins + 1,)
    counts: np.ndarray      # (n_bins,), magnitude-weighted

    def as_dict(self) -> dict[str, list[float]]:
        return {"bin_edges": [float(x) for x in self.bin_edges],
                "counts": [float(x) for x in self.counts]}


@dataclass(frozen=True)
class MetricsReport:
    """All quality numbers for one registered pair."""

    rmse_global: float
    rmse_masked: float
    det_auc: float
    negdet_percent: float
    histogram: DetHistogram
    endpoint_error_mean: float | None = None
    endpoint_error_median: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.det_auc <= 1.0:
            raise ValueError(f"det_auc must lie in [0, 1], got {self.det_auc}")
        if not 0.0 <= self.negdet_percent <= 100.0:
            raise ValueError(f"negdet_percent must lie in [0, 100], got {self.negdet_percent}")

    def as_dict(self) -> dict:
        out = {
            "rmse_global": self.rmse_global,
            "rmse_masked": self.rmse_masked,
            "det_auc": self.det_auc,
            "negdet_percent": self.negdet_percent,
            "histogram": self.histogram.as_dict(),
        }
        if self.endpoint_error_mean is not None:
            out["endpoint_error_mean"] = self.endpoint_error_mean
        if self.endpoint_error_median is not None:
            out["endpoint_error_median"] = self.endpoint_error_median
        return out


def _mask_weights(mask: ScalarVolume | None, like: np.ndarray) -> np.ndarray:
    if mask is None:
        return np.ones_like(like)
    w = mask.values
    if np.min(w) < 0:
        raise ValueError("mask weights must be non-negative")
    if np.sum(w) == 0:
        raise ValueError("mask weights sum to zero")
    return w


def rmse(fixed: SinCosTrio, warped: SinCosTrio, mask: ScalarVolume | None = None) -> float:
    """Root mean squared difference over all voxels of all six channels."""
    require_same_geometry(fixed.geometry, warped.geometry, "rmse")
    if mask is not None:
        require_same_geometry(fixed.geometry, mask.geometry, "rmse")
    diff = fixed.stacked() - warped.stacked()
    w = _mask_weights(mask, diff[0])
    total = float(np.sum(w * np.sum(diff * diff, axis=0)))
    return float(np.sqrt(total / (np.sum(w) * diff.shape[0])))


def det_auc(disp: VectorField, i_mag: ScalarVolume,
            n_bins: int = 100) -> tuple[float, DetHistogram]:
    """Area under the weighted CDF of clipped determinant errors.

    Returns the AUC in [0, 1] (1.0 means every weighted voxel has det = 1)
    together with the underlying histogram.
    """
    require_same_geometry(disp.geometry, i_mag.geometry, "det_auc")
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    w = i_mag.values
    total = float(np.sum(w))
    if total <= 0:
        raise ValueError("det_auc: total magnitude weight is zero")
    d = jacobian_determinant(disp).values
    errors = np.clip(np.abs(d - 1.0), 0.0, 1.0)
    counts, edges = np.histogram(errors, bins=n_bins, range=(0.0, 1.0), weights=w)
    cdf = np.cumsum(counts) / total
    # The exact value lies in [0, 1]; the cumulative sums can overshoot by a
    # few ulps when every voxel lands in the first bin, so clamp.
    auc = float(np.clip(np.sum(cdf * np.diff(edges)), 0.0, 1.0))
    return auc, DetHistogram(bin_edges=edges, counts=counts)


def negdet_fraction(disp: VectorField, mask: ScalarVolume | None = None) -> float:
    """Percentage of (weighted) voxels whose warp determinant is negative."""
    if mask is not None:
        require_same_geometry(disp.geometry, mask.geometry, "negdet_fraction")
    d = jacobian_determinant(disp).values
    w = _mask_weights(mask, d)
    return float(100.0 * np.sum(w * (d < 0.0)) / np.sum(w))


def endpoint_error(est: VectorField, truth: VectorField,
                   mask: ScalarVolume) -> tuple[float, float]:
    """Mask-weighted mean and median of per-voxel displacement error norms.

    The weighted median is the smallest error value whose cumulative weight
    reaches half the total.
    """
    require_same_geometry(est.geometry, truth.geometry, "endpoint_error")
    require_same_geometry(est.geometry, mask.geometry, "endpoint_error")
    diff = est.vectors - truth.vectors
    errors = np.sqrt(np.sum(diff * diff, axis=-1)).reshape(-1)
    w = _mask_weights(mask, errors).reshape(-1)
    total = float(np.sum(w))
    mean = float(np.sum(w * errors) / total)
    order = np.argsort(errors, kind="stable")
    cumulative = np.cumsum(w[order])
    idx = int(np.searchsorted(cumulative, 0.5 * total))
    median = float(errors[order[min(idx, len(order) - 1)]])
    return mean, median


def build_metrics_report(fixed: SinCosTrio, moving: SinCosTrio, disp: VectorField,
                         i_mag: ScalarVolume, truth: VectorField | None = None,
                         truth_mask: ScalarVolume | None = None,
                         n_bins: int = 100) -> MetricsReport:
    """Warp the moving trio and assemble every metric into one report.

    Endpoint errors are included only when a ground-truth displacement is
    supplied (phantom runs); they are weighted by ``truth_mask`` when given,
    else by ``i_mag``.
    """
    warped = SinCosTrio.from_stacked(
        disp.geometry,
        np.stack([warp_scalar(ScalarVolume(disp.geometry, ch), disp).values
                  for ch in moving.stacked()]))
    auc, hist = det_auc(disp, i_mag, n_bins)
    epe_mean = epe_median = None
    if truth is not None:
        epe_mean, epe_median = endpoint_error(disp, truth, truth_mask or i_mag)
    return MetricsReport(
        rmse_global=rmse(fixed, warped, None),
        rmse_masked=rmse(fixed, warped, i_mag),
        det_auc=auc,
        negdet_percent=negdet_fraction(disp, None),
        histogram=hist,
        endpoint_error_mean=epe_mean,
        endpoint_error_median=epe_median,
    )
