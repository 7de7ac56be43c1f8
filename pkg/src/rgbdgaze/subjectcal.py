"""Per-subject bias estimation from calibration samples.

Two estimators: a per-axis linear fit ``g = a * i + b`` (offset and scale) and
the offset-only mean-residual baseline. Pitch and yaw are fitted separately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, TooFewSamples
from .fusion.model import SubjectBias, apply_subject_bias

MIN_SAMPLES = 3
VARIANCE_FLOOR = 1e-12


def wrap_angle(a):
    """Map angles onto (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)


@dataclass(frozen=True)
class BiasFit:
    """Fitted subject bias.

    ``yaw_center`` names the branch on which yaw was fitted: yaw values are
    taken as ``yaw_center + wrap(yaw - yaw_center)`` before the affine map.
    It is 0 unless the calibration targets sit near the +-pi seam.
    """

    bias: SubjectBias
    residual: tuple                  # per-axis RMS (pitch, yaw) on the calibration set
    flags: tuple = ()
    subject_id: str = ""
    yaw_center: float = 0.0

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "offset_pitch": self.bias.offset[0], "offset_yaw": self.bias.offset[1],
            "scale_pitch": self.bias.scale_centered[0], "scale_yaw": self.bias.scale_centered[1],
            "residual": list(self.residual), "flags": list(self.flags),
            "yaw_center": self.yaw_center,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BiasFit":
        bias = SubjectBias((d["offset_pitch"], d["offset_yaw"]),
                           (d["scale_pitch"], d["scale_yaw"]))
        return cls(bias, tuple(d.get("residual", (0.0, 0.0))), tuple(d.get("flags", ())),
                   d.get("subject_id", ""), float(d.get("yaw_center", 0.0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "BiasFit":
        return cls.from_json(json.loads(Path(path).read_text()))


def _split(predictions, truths):
    p = np.asarray(predictions, dtype=float).reshape(-1, 2)
    g = np.asarray(truths, dtype=float).reshape(-1, 2)
    if p.shape != g.shape:
        raise ValueError(f"{len(p)} predictions vs {len(g)} ground-truth samples")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(g))):
        raise ValueError("calibration samples must be finite")
    return p, g


def _yaw_branch(g):
    """0 when truths stay clear of the seam, else their circular mean."""
    yaw = g[:, 1]
    if len(yaw) == 0 or np.max(np.abs(yaw)) < np.pi / 2:
        return 0.0
    return float(np.arctan2(np.mean(np.sin(yaw)), np.mean(np.cos(yaw))))


def _on_branch(a, center):
    a = np.array(a, dtype=float)
    if center != 0.0:
        a[..., 1] = center + wrap_angle(a[..., 1] - center)
    return a


def _rms(p, g, bias: SubjectBias):
    r = apply_subject_bias(p, bias) - g
    return tuple(float(v) for v in np.sqrt(np.mean(r * r, axis=0)))


def estimate_offset_only(predictions, truths, subject_id="") -> BiasFit:
    """Offset = per-axis mean of ``g - i``; scale stays at 1."""
    p, g = _split(predictions, truths)
    if len(p) == 0:
        raise EmptyDataset("no calibration samples")
    center = _yaw_branch(g)
    p, g = _on_branch(p, center), _on_branch(g, center)
    bias = SubjectBias(tuple(np.mean(g - p, axis=0)), (0.0, 0.0))
    return BiasFit(bias, _rms(p, g, bias), (), subject_id, center)


def estimate_bias_ls(predictions, truths, subject_id="") -> BiasFit:
    """Per-axis least squares for slope ``a`` and intercept ``b``.

    Solved through the explicit 2x2 normal equations on centered data. An axis
    whose predictions have variance <= 1e-12 falls back to the offset-only
    estimate and is flagged ``degenerate_pitch`` / ``degenerate_yaw``.
    """
    p, g = _split(predictions, truths)
    if len(p) < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} calibration samples, got {len(p)}")
    center = _yaw_branch(g)
    p, g = _on_branch(p, center), _on_branch(g, center)
    offset, scale, flags = [0.0, 0.0], [0.0, 0.0], []
    for axis, name in enumerate(("pitch", "yaw")):
        x, y = p[:, axis], g[:, axis]
        mx, my = x.mean(), y.mean()
        sxx = np.mean((x - mx) ** 2)
        if sxx <= VARIANCE_FLOOR:
            offset[axis] = float(my - mx)
            flags.append(f"degenerate_{name}")
            continue
        a = np.mean((x - mx) * (y - my)) / sxx
        scale[axis] = float(a - 1.0)
        offset[axis] = float(my - a * mx)
    bias = SubjectBias(tuple(offset), tuple(scale))
    return BiasFit(bias, _rms(p, g, bias), tuple(flags), subject_id, center)


def apply_calibration(predictions, fit: BiasFit) -> np.ndarray:
    """Apply the fitted bias; yaw is moved onto the fit's branch first and wrapped after."""
    if fit.yaw_center == 0.0:
        return apply_subject_bias(predictions, fit.bias)
    out = apply_subject_bias(_on_branch(predictions, fit.yaw_center), fit.bias)
    out[..., 1] = wrap_angle(out[..., 1])
    return out


def calibration_rms(predictions, truths, fit: BiasFit | None = None) -> float:
    """Overall RMS of the angle residual (both axes pooled), optionally after a fit."""
    p, g = _split(predictions, truths)
    if fit is not None:
        p = apply_calibration(p, fit)
    d = p - g
    d[:, 1] = wrap_angle(d[:, 1])
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
