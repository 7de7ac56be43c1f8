"""Angular and on-screen error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import MonitorSpec, angles_to_vector


def angular_error(g, g_hat) -> np.ndarray:
    """Angle in degrees between the 3D directions of two ``(..., 2)`` angle sets.

    Computed as ``atan2(|u x v|, u . v)``, which equals the arccosine of the
    cosine similarity but stays accurate for nearly parallel vectors.
    """
    u = angles_to_vector(g)
    v = angles_to_vector(g_hat)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.sum(u * v, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def euclidean_error(p, p_hat) -> np.ndarray:
    """Unsquared Euclidean distance of ``(..., 2)`` points (same unit as inputs)."""
    d = np.asarray(p, dtype=float) - np.asarray(p_hat, dtype=float)
    return np.sqrt(np.sum(d * d, axis=-1))


def px_to_mm(p, m: MonitorSpec) -> np.ndarray:
    return (np.asarray(p, dtype=float) - [m.offset_x, m.offset_y]) * m.mm_per_px


def mean_errors(e_deg, d_mm) -> tuple[float, float]:
    """(mean angular error, mean distance error), NaN entries skipped."""
    return float(np.nanmean(e_deg)), float(np.nanmean(d_mm))


@dataclass
class Heatmap:
    mean: np.ndarray     # (ny, nx) mean error per cell, NaN where empty
    count: np.ndarray    # (ny, nx)
    x_edges: np.ndarray
    y_edges: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.count == 0

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y_lo", "y_hi"] + [f"x{i}" for i in range(self.mean.shape[1])])
            for j, row in enumerate(self.mean):
                w.writerow([self.y_edges[j], self.y_edges[j + 1]]
                           + ["" if np.isnan(v) else repr(float(v)) for v in row])


def error_heatmap(errors, points, bins=(8, 6), extent=None) -> Heatmap:
    """Mean error binned by on-screen position. ``extent`` = (x0, x1, y0, y1)."""
    e = np.asarray(errors, dtype=float)
    p = np.asarray(points, dtype=float)
    if extent is None:
        extent = (p[:, 0].min(), p[:, 0].max(), p[:, 1].min(), p[:, 1].max())
    x0, x1, y0, y1 = extent
    nx, ny = bins
    xe = np.linspace(x0, x1, nx + 1)
    ye = np.linspace(y0, y1, ny + 1)
    total, _, _ = np.histogram2d(p[:, 1], p[:, 0], bins=[ye, xe], weights=e)
    count, _, _ = np.histogram2d(p[:, 1], p[:, 0], bins=[ye, xe])
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return Heatmap(mean, count.astype(int), xe, ye)
