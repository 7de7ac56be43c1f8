"""Depth-map preprocessing and the loss math of the depth-reconstruction GAN.

Raw depth maps are 16-bit millimeters with 0 meaning "no measurement".
Equalized maps live in [-1, 1] with missing pixels at exactly -1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np
from scipy import ndimage

from .errors import EmptyMask, EmptyTable

MISSING_RAW = 0
MISSING_EQUALIZED = -1.0
DEFAULT_MISSING_TOL = 0.01
DEFAULT_ERODE_RADIUS = 12
L1_WEIGHT = 10.0
SCORE_CLAMP = 1e-7


@dataclass
class EqualizedDepth:
    """Equalized depth with the table needed to undo the mapping.

    ``levels[k]`` is the equalized value assigned to source depth ``depths[k]``.
    """

    values: np.ndarray
    levels: np.ndarray
    depths: np.ndarray
    all_missing: bool = False


def histogram_equalize(depth) -> EqualizedDepth:
    """Map nonzero depths through their empirical CDF onto (-1, 1].

    Zeros are excluded from the CDF and map to -1. A map with no valid pixel
    comes back all -1 with an empty table and ``all_missing`` set.
    """
    d = np.asarray(depth)
    out = np.full(d.shape, MISSING_EQUALIZED, dtype=np.float64)
    valid = d != MISSING_RAW
    if not valid.any():
        return EqualizedDepth(out, np.empty(0), np.empty(0, dtype=d.dtype), all_missing=True)
    depths, inverse, counts = np.unique(d[valid], return_inverse=True, return_counts=True)
    cdf = np.cumsum(counts) / counts.sum()
    levels = 2.0 * cdf - 1.0
    out[valid] = levels[inverse.ravel()]
    return EqualizedDepth(out, levels, depths)


def undo_equalization(values, levels, depths) -> np.ndarray:
    """Nearest-level inverse lookup from equalized values back to millimeters.

    The missing value -1 is treated as one more level mapping to depth 0; on
    an exact tie between two levels the smaller depth wins.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0:
        raise EmptyTable("equalization table is empty")
    lv = np.r_[MISSING_EQUALIZED, levels]
    dp = np.r_[0, np.asarray(depths)].astype(np.float64)
    v = np.asarray(values, dtype=float)
    hi = np.clip(np.searchsorted(lv, v, side="left"), 1, len(lv) - 1)
    lo = hi - 1
    pick_hi = (lv[hi] - v) < (v - lv[lo])
    return dp[np.where(pick_hi, hi, lo)]


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= r * r


def missing_pixels(values, missing=MISSING_EQUALIZED, tol=DEFAULT_MISSING_TOL) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return (v >= missing - tol) & (v <= missing + tol)


def compute_valid_mask(values, missing=MISSING_EQUALIZED, tol=DEFAULT_MISSING_TOL,
                       radius=DEFAULT_ERODE_RADIUS) -> np.ndarray:
    """Validity mask: 1 where no missing pixel lies within Euclidean ``radius``.

    Binary mask of non-missing pixels eroded with a circular
    ``(2r+1) x (2r+1)`` structuring element; the outside of the image counts
    as valid.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if isinstance(values, EqualizedDepth):
        values = values.values
    valid = ~missing_pixels(values, missing, tol)
    if radius == 0 or valid.all():
        return valid.astype(np.uint8)
    eroded = ndimage.binary_erosion(valid, structure=disk(radius), border_value=1)
    return eroded.astype(np.uint8)


class Rect(NamedTuple):
    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class AugmentSpec:
    """Missing-data augmentation; sizes are for a 448 px image and scale with it."""

    max_big_patches: int = 1
    max_small_patches: int = 10
    big_size: tuple = (64, 128)
    small_size: tuple = (8, 24)
    reference_size: int = 448


def augment_missing(depth, spec: AugmentSpec = AugmentSpec(), seed=None, rng=None):
    """Zero out random axis-aligned rectangles. Returns ``(augmented, rects)``."""
    d = np.array(depth, copy=True)
    rng = rng if rng is not None else np.random.default_rng(seed)
    H, W = d.shape[:2]
    factor = min(H, W) / spec.reference_size
    rects = []
    for count_max, (lo, hi) in ((spec.max_big_patches, spec.big_size),
                                (spec.max_small_patches, spec.small_size)):
        n = int(rng.integers(0, count_max + 1))
        lo_s = max(1, int(round(lo * factor)))
        hi_s = max(lo_s, int(round(hi * factor)))
        for _ in range(n):
            w = min(int(rng.integers(lo_s, hi_s + 1)), W)
            h = min(int(rng.integers(lo_s, hi_s + 1)), H)
            x = int(rng.integers(0, W - w + 1))
            y = int(rng.integers(0, H - h + 1))
            d[y:y + h, x:x + w] = 0
            rects.append(Rect(x, y, w, h))
    return d, rects


def _window(center, size, shape):
    cx, cy = (int(v) for v in np.rint(center))
    r = size // 2
    y0, y1 = max(cy - r, 0), min(cy + r + 1, shape[0])
    x0, x1 = max(cx - r, 0), min(cx + r + 1, shape[1])
    return slice(y0, y1), slice(x0, x1)


def eye_region_min_depth(depth, eyes, region: int) -> tuple[float, float]:
    """Minimum raw depth in a ``region x region`` window around each eye.

    ``eyes`` is ``(right_eye, left_eye)`` in pixel coordinates. Windows are
    clipped at the border. Zeros count, so missing data drives the minimum to 0.
    """
    if region <= 0 or region % 2 == 0:
        raise ValueError("region size must be odd and positive")
    d = np.asarray(depth)
    mins = []
    for eye in eyes[:2]:
        ys, xs = _window(eye, region, d.shape)
        win = d[ys, xs]
        mins.append(float(win.min()) if win.size else 0.0)
    return mins[0], mins[1]


@dataclass(frozen=True)
class EyeFilterParams:
    region_size: int = 81
    threshold: float = 200.0

    @classmethod
    def for_image_size(cls, size: int) -> "EyeFilterParams":
        # 41 px windows were used on 224 px images, 81 px on 448 px images
        return cls(region_size=41 if size <= 224 else 81)


@dataclass
class FilterReport:
    kept: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "min_left", "min_right", "kept"])
            for r in self.rows:
                w.writerow([r["sample"], r["min_left"], r["min_right"], int(r["kept"])])


def filter_target_set(samples: Iterable, params: EyeFilterParams = EyeFilterParams()) -> FilterReport:
    """Select depth maps whose eye windows are free of near/missing depth.

    ``samples`` yields ``(sample_id, depth, landmarks)``; landmarks may be
    ``None``, which drops the sample and records an error entry.
    """
    report = FilterReport()
    for sample_id, depth, landmarks in samples:
        if landmarks is None or not np.all(np.isfinite(np.asarray(landmarks)[:2])):
            report.errors.append({"sample": sample_id, "error": "MissingLandmarks"})
            continue
        L = np.asarray(landmarks)
        min_r, min_l = eye_region_min_depth(depth, (L[0], L[1]), params.region_size)
        keep = min_l >= params.threshold and min_r >= params.threshold
        report.rows.append({"sample": sample_id, "min_left": min_l, "min_right": min_r,
                            "kept": keep})
        if keep:
            report.kept.append(sample_id)
    return report


def masked_l1_loss(pred, target, mask) -> float:
    """Mean absolute difference over pixels where ``mask`` is nonzero."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    m = np.broadcast_to(np.asarray(mask).astype(bool), pred.shape)
    if not m.any():
        raise EmptyMask("no valid pixel under the mask")
    return float(np.abs(pred[m] - target[m]).mean())


class GanLosses(NamedTuple):
    discriminator: float
    generator_adv: float
    clamped: bool


def gan_losses(d_real, d_fake) -> GanLosses:
    """Discriminator objective (maximized as written) and generator adversarial loss.

    Scores outside ``[1e-7, 1 - 1e-7]`` are clamped and reported through
    ``clamped``; a warning is emitted as well.
    """
    real = np.asarray(d_real, dtype=float)
    fake = np.asarray(d_fake, dtype=float)
    lo, hi = SCORE_CLAMP, 1.0 - SCORE_CLAMP
    clamped = bool(np.any((real < lo) | (real > hi) | (fake < lo) | (fake > hi)))
    if clamped:
        warnings.warn("discriminator scores clamped into (0, 1)", RuntimeWarning, stacklevel=2)
        real = np.clip(real, lo, hi)
        fake = np.clip(fake, lo, hi)
    l_d = float(np.mean(np.log(real)) + np.mean(np.log1p(-fake)))
    l_g = float(-np.mean(np.log(fake)))
    return GanLosses(l_d, l_g, clamped)


def generator_loss(d_fake, pred, target, mask, l1_weight=L1_WEIGHT) -> float:
    """Adversarial term plus the weighted masked L1 reconstruction term."""
    fake = np.clip(np.asarray(d_fake, dtype=float), SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return float(-np.mean(np.log(fake))) + l1_weight * masked_l1_loss(pred, target, mask)


def extract_depth_patches(eq: EqualizedDepth, eyes, r: int = 5) -> np.ndarray:
    """``2 r^2`` depth values (mm): r x r crops at the right then left eye.

    Windows are shifted inside the image at the border; the equalization is
    undone per pixel.
    """
    if r <= 0 or r % 2 == 0:
        raise ValueError("patch size must be odd and positive")
    v = eq.values
    H, W = v.shape
    out = []
    for eye in eyes[:2]:
        cx, cy = (int(c) for c in np.rint(eye))
        x0 = int(np.clip(cx - r // 2, 0, W - r))
        y0 = int(np.clip(cy - r // 2, 0, H - r))
        out.append(v[y0:y0 + r, x0:x0 + r].ravel())
    return undo_equalization(np.concatenate(out), eq.levels, eq.depths)
