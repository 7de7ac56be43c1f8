"""Offline replay of stored samples through prediction, bias, un-normalization and filters."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset.metrics import angular_error, euclidean_error, mean_errors, px_to_mm
from .dataset.schema import read_subject
from .depthproc import extract_depth_patches, histogram_equalize
from .errors import BadConfig, GazeError
from .filtering import make_filter
from .fusion.model import HyperParams, fusion_forward, init_fusion_params, project_to_token
from .geometry import Extrinsics, MonitorSpec, gaze_point_from_prediction
from .subjectcal import BiasFit, apply_calibration, wrap_angle

EYE_POOL = 8           # 112 px eye crops are averaged in 8x8 blocks -> 14x14 features
DEPTH_PATCH = 5
TOKEN_SOURCES = ("right_eye", "left_eye", "head_pose", "depth")
FEATURE_DIMS = {"right_eye": (112 // EYE_POOL) ** 2, "left_eye": (112 // EYE_POOL) ** 2,
                "head_pose": 13, "depth": 2 * DEPTH_PATCH ** 2}

ROW_FIELDS = ["sample", "session", "recording", "index",
              "gaze_pitch", "gaze_yaw", "point_x", "point_y",
              "raw_pitch", "raw_yaw", "cal_pitch", "cal_yaw", "pred_pitch", "pred_yaw",
              "pred_x", "pred_y", "e_deg", "d_mm", "error"]


class StubPredictor:
    """Echoes the stored label, plus a fixed offset and seeded Gaussian noise (radians)."""

    needs_images = False

    def __init__(self, offset=(0.0, 0.0), noise=0.0, seed=0):
        self.offset = np.asarray(offset, dtype=float)
        self.noise = float(noise)
        self.rng = np.random.default_rng(seed)

    def __call__(self, sample) -> np.ndarray:
        g = np.asarray(sample["gaze"], dtype=float) + self.offset
        if self.noise:
            g = g + self.rng.normal(0.0, self.noise, 2)
        return g


def _gray_pool(img):
    g = np.asarray(img, dtype=float)
    if g.ndim == 3:
        g = g.mean(axis=2)
    h, w = g.shape
    return g.reshape(h // EYE_POOL, EYE_POOL, w // EYE_POOL, EYE_POOL).mean(axis=(1, 3)).ravel() / 255.0


def sample_features(sample, landmarks=None) -> dict:
    """Flat feature vectors per token source, built from stored patches.

    These stand in for the convolutional feature extractors: pooled eye
    intensities, landmarks with the normalized head rotation, and the
    un-equalized depth values around both eyes (meters).
    """
    lm = np.asarray(sample["face_landmarks"] if landmarks is None else landmarks, dtype=float)
    feats = {
        "right_eye": _gray_pool(sample["right_eye_color"]),
        "left_eye": _gray_pool(sample["left_eye_color"]),
        "head_pose": np.r_[lm.ravel() / 448.0, np.asarray(sample["head_rot_norm"], float)],
    }
    eq = histogram_equalize(sample["face_depth"])
    if eq.all_missing:
        feats["depth"] = np.zeros(FEATURE_DIMS["depth"])
    else:
        feats["depth"] = extract_depth_patches(eq, lm[:2], DEPTH_PATCH) / 1000.0
    return feats


def init_replay_model(hp: HyperParams, seed=0) -> dict:
    """Random fusion parameters plus one token projection per feature source."""
    params = init_fusion_params(hp, seed)
    rng = np.random.default_rng(seed + 1)
    for src in TOKEN_SOURCES[:hp.n_features]:
        d_in = FEATURE_DIMS[src]
        b = 1.0 / math.sqrt(d_in)
        params[f"proj.{src}.w"] = rng.uniform(-b, b, (hp.d_model, d_in))
        params[f"proj.{src}.b"] = rng.uniform(-b, b, hp.d_model)
    return params


class ModelPredictor:
    needs_images = True

    def __init__(self, params: dict, hp: HyperParams):
        missing = [f"proj.{s}.w" for s in TOKEN_SOURCES[:hp.n_features]
                   if f"proj.{s}.w" not in params]
        if missing:
            raise BadConfig(f"parameter file lacks token projections: {', '.join(missing)}")
        self.params, self.hp = params, hp

    def __call__(self, sample, landmarks=None) -> np.ndarray:
        feats = sample_features(sample, landmarks)
        tokens = np.stack([project_to_token(feats[s], self.params[f"proj.{s}.w"],
                                            self.params[f"proj.{s}.b"])
                           for s in TOKEN_SOURCES[:self.hp.n_features]])
        return fusion_forward(tokens, self.params, self.hp)


class AngleFilter:
    """Wraps a 2D filter for (pitch, yaw): yaw is unwrapped against the previous
    output before filtering and wrapped back afterwards, so a track that
    crosses the +-pi seam is not averaged across it."""

    def __init__(self, inner):
        self.inner = inner
        self.last_yaw = None

    def reset(self):
        self.inner.reset()
        self.last_yaw = None

    def step(self, g, t=None):
        g = np.array(g, dtype=float)
        if self.last_yaw is not None:
            # shift by whole turns only, so values away from the seam stay bit-exact
            turns = np.round((g[1] - self.last_yaw) / (2 * np.pi))
            if turns:
                g[1] -= 2 * np.pi * turns
        out = np.array(self.inner.step(g, t), dtype=float)
        self.last_yaw = out[1]
        if not -np.pi < out[1] <= np.pi:
            out[1] = wrap_angle(out[1])
        return out


@dataclass
class FilterSpec:
    landmarks: str = "none"
    angles: str = "none"
    point: str = "none"
    q: float = 1e-3
    r: float = 1e-2
    dt: float = 1.0


@dataclass
class ReplayResult:
    rows: list = field(default_factory=list)

    @property
    def e_deg(self) -> np.ndarray:
        return np.array([r["e_deg"] for r in self.rows], dtype=float)

    @property
    def d_mm(self) -> np.ndarray:
        return np.array([r["d_mm"] for r in self.rows], dtype=float)

    @property
    def ok(self) -> np.ndarray:
        return np.array([not r["error"] for r in self.rows], dtype=bool)

    def summary(self) -> tuple[float, float]:
        """(mean angular error, mean distance error) over rows without errors."""
        ok = self.ok
        return mean_errors(self.e_deg[ok], self.d_mm[ok])

    def write_csv(self, path) -> None:
        write_rows(path, self.rows)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in ROW_FIELDS})


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ROW_FIELDS:
            if k not in ("error",) and r.get(k, "") != "":
                r[k] = float(r[k])
    return rows


def replay(path_or_data, predictor, bias: BiasFit | None = None,
           filters: FilterSpec = FilterSpec()) -> ReplayResult:
    """Run every stored sample through the online processing chain, in file order.

    Filters restart at every new (session, recording) pair. Per-sample
    failures are recorded in the row's ``error`` field.
    """
    if isinstance(path_or_data, dict):
        data = path_or_data
    else:
        keys = None if getattr(predictor, "needs_images", True) else [
            "face_center", "face_transformation", "gaze", "gaze_point", "face_landmarks",
            "head_rot_norm", "recording_index", "recording_session", "in_recording_index",
            "extrinsics", "monitor"]
        data = read_subject(path_or_data, keys)
    Es = [Extrinsics(E) for E in data["extrinsics"]]
    monitors = [MonitorSpec.from_matrix(M) for M in data["monitor"]]
    sample_keys = [k for k in data if k not in ("extrinsics", "monitor")]
    fkw = dict(q=filters.q, r=filters.r, dt=filters.dt)
    f_lm = [make_filter(filters.landmarks, **fkw) for _ in range(5)]
    # without angle filtering there is nothing to unwrap, and labels pass through untouched
    f_ang = (AngleFilter(make_filter(filters.angles, **fkw)) if filters.angles != "none"
             else make_filter("none"))
    f_pt = make_filter(filters.point, **fkw)
    result = ReplayResult()
    current = None
    n = len(data["gaze"])
    for i in range(n):
        s = int(data["recording_session"][i])
        rec = int(data["recording_index"][i])
        idx = int(data["in_recording_index"][i])
        if (s, rec) != current:
            current = (s, rec)
            for f in (*f_lm, f_ang, f_pt):
                f.reset()
        g = np.asarray(data["gaze"][i], dtype=float)
        p = np.asarray(data["gaze_point"][i], dtype=np.float64)
        row = {"sample": i, "session": s, "recording": rec, "index": idx,
               "gaze_pitch": float(g[0]), "gaze_yaw": float(g[1]),
               "point_x": float(p[0]), "point_y": float(p[1]), "error": ""}
        try:
            sample = {k: data[k][i] for k in sample_keys}
            if isinstance(predictor, ModelPredictor):
                lm = np.array([f.step(pt) for f, pt in zip(f_lm, sample["face_landmarks"])])
                raw = predictor(sample, lm)
            else:
                raw = predictor(sample)
            row.update(raw_pitch=float(raw[0]), raw_yaw=float(raw[1]))
            cal = apply_calibration(raw, bias) if bias is not None else raw
            pred = f_ang.step(cal)
            row.update(cal_pitch=float(cal[0]), cal_yaw=float(cal[1]),
                       pred_pitch=float(pred[0]), pred_yaw=float(pred[1]),
                       e_deg=float(angular_error(g, pred)))
            m = monitors[s]
            px = gaze_point_from_prediction(pred, data["face_transformation"][i],
                                            data["face_center"][i], Es[s], m)
            px = f_pt.step(px)
            row.update(pred_x=float(px[0]), pred_y=float(px[1]),
                       d_mm=float(euclidean_error(px_to_mm(p, m), px_to_mm(px, m))))
        except (GazeError, ValueError, FloatingPointError) as exc:
            row.setdefault("e_deg", float("nan"))
            row.update(d_mm=float("nan"), error=f"{type(exc).__name__}: {exc}")
        result.rows.append(row)
    return result


def summarize(rows) -> dict:
    """Mean, median and quartiles of both error columns (error rows skipped)."""
    e = np.array([r["e_deg"] for r in rows if not r.get("error")], dtype=float)
    d = np.array([r["d_mm"] for r in rows if not r.get("error")], dtype=float)
    if e.size == 0:
        raise ValueError("no valid rows to summarize")
    out = {"n": int(e.size), "n_errors": len(rows) - int(e.size)}
    for name, v in (("e_deg", e), ("d_mm", d)):
        q1, q2, q3 = np.percentile(v, [25, 50, 75])
        out[name] = {"mean": float(v.mean()), "q1": float(q1), "median": float(q2),
                     "q3": float(q3), "max": float(v.max())}
    return out
