"""Per-subject HDF5 container: flat keys, one leading sample axis per array.

Session-level arrays (``extrinsics``, ``monitor``) carry a leading session
axis instead; a sample refers to its session through ``recording_session``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import h5py
import numpy as np

from ..errors import SchemaError

FACE_SIZE = 448
EYE_SIZE = 112
N_RECORDINGS = 132

# key -> (per-sample shape, dtype)
SAMPLE_KEYS = {
    "face_center": ((3,), np.float64),
    "face_color": ((FACE_SIZE, FACE_SIZE, 3), np.uint8),
    "face_depth": ((FACE_SIZE, FACE_SIZE), np.uint16),
    "face_landmarks": ((5, 2), np.float32),
    "face_transformation": ((3, 3), np.float64),
    "gaze": ((2,), np.float64),
    "gaze_point": ((2,), np.float32),
    "head_rot_norm": ((3,), np.float64),
    "in_recording_index": ((), np.int64),
    "left_eye_color": ((EYE_SIZE, EYE_SIZE, 3), np.uint8),
    "left_eye_depth": ((EYE_SIZE, EYE_SIZE), np.uint16),
    "mouse_distance": ((), np.float64),
    "on_grid": ((), np.bool_),
    "recording_index": ((), np.int64),
    "recording_session": ((), np.int64),
    "right_eye_color": ((EYE_SIZE, EYE_SIZE, 3), np.uint8),
    "right_eye_depth": ((EYE_SIZE, EYE_SIZE), np.uint16),
}
SESSION_KEYS = {
    "extrinsics": ((3, 4), np.float64),
    "monitor": ((3, 2), np.int64),
}
ALL_KEYS = {**SAMPLE_KEYS, **SESSION_KEYS}
IMAGE_KEYS = tuple(k for k in SAMPLE_KEYS if k.endswith(("_color", "_depth")))


@dataclass
class Violation:
    key: str
    index: int | None
    rule: str
    detail: str = ""

    def __str__(self):
        where = self.key if self.index is None else f"{self.key}[{self.index}]"
        return f"{where}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


class SubjectFile(dict):
    """Mapping of key -> array for one subject. Thin ``dict`` subclass."""

    @property
    def n_samples(self) -> int:
        return len(self["gaze"])

    @property
    def n_sessions(self) -> int:
        return len(self["extrinsics"])


def _structural_problems(data) -> list[Violation]:
    out = []
    for key, (shape, dtype) in ALL_KEYS.items():
        if key not in data:
            out.append(Violation(key, None, "missing key"))
            continue
        arr = np.asarray(data[key])
        if arr.dtype != np.dtype(dtype):
            out.append(Violation(key, None, "dtype", f"{arr.dtype} != {np.dtype(dtype)}"))
        if arr.shape[1:] != shape:
            out.append(Violation(key, None, "shape", f"{arr.shape[1:]} != {shape}"))
    return out


def read_subject(path, keys=None) -> SubjectFile:
    """Load a subject file. Missing keys, wrong shapes or dtypes raise SchemaError.

    ``keys`` restricts loading to a subset (structure is then checked only
    for those keys).
    """
    wanted = ALL_KEYS if keys is None else {k: ALL_KEYS[k] for k in keys}
    with h5py.File(path, "r") as f:
        data = SubjectFile({k: f[k][()] for k in wanted if k in f})
    problems = [v for v in _structural_problems(data) if v.key in wanted]
    if problems:
        raise SchemaError(problems)
    return data


def write_subject(path, data, compression="gzip") -> None:
    """Write every key as a flat dataset. Image arrays are chunked per sample."""
    problems = _structural_problems(data)
    if problems:
        raise SchemaError(problems)
    with h5py.File(path, "w") as f:
        for key in ALL_KEYS:
            arr = np.asarray(data[key])
            if key in IMAGE_KEYS and len(arr):
                f.create_dataset(key, data=arr, chunks=(1,) + arr.shape[1:],
                                 compression=compression, compression_opts=1 if compression == "gzip" else None)
            else:
                f.create_dataset(key, data=arr)


def _rotation_ok(R, tol=1e-6):
    return (np.max(np.abs(R @ R.T - np.eye(3))) < tol) and np.linalg.det(R) > 0


def validate(data) -> list[Violation]:
    """Check every content invariant; an empty list means the file is valid."""
    report = _structural_problems(data)
    if report:
        return report
    n = len(data["gaze"])
    lengths = {k: len(data[k]) for k in SAMPLE_KEYS}
    for k, ln in lengths.items():
        if ln != n:
            report.append(Violation(k, None, "length", f"{ln} samples, expected {n}"))
    if report:
        return report

    def flag(key, mask, rule):
        for i in np.flatnonzero(mask):
            report.append(Violation(key, int(i), rule))

    lm = data["face_landmarks"]
    flag("face_landmarks", ~np.all(np.isfinite(lm) & (lm >= 0) & (lm <= FACE_SIZE), axis=(1, 2)),
         f"landmarks must lie in [0, {FACE_SIZE}]")
    ir = data["recording_index"]
    flag("recording_index", (ir < 0) | (ir >= N_RECORDINGS), f"must be in [0, {N_RECORDINGS})")
    ii = data["in_recording_index"]
    flag("in_recording_index", ii < 0, "must be >= 0")
    flag("in_recording_index", (ir >= 0) & (ir < 100) & (ii != 0),
         "single-sample recordings hold exactly one sample")
    sess = data["recording_session"]
    m = len(data["extrinsics"])
    flag("recording_session", (sess < 0) | (sess >= m), f"must index one of {m} sessions")

    keys = np.stack([sess, ir, ii], axis=1)
    _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    seen = set(first.tolist())
    for i in range(n):
        if i not in seen:
            report.append(Violation("in_recording_index", i,
                                    "(session, recording, index) tuple not unique"))
    if n and m != int(sess.max()) + 1:
        report.append(Violation("extrinsics", None, "one entry per session",
                                f"{m} entries, max session {int(sess.max())}"))
    if len(data["monitor"]) != m:
        report.append(Violation("monitor", None, "one entry per session",
                                f"{len(data['monitor'])} vs {m}"))
    for s, E in enumerate(data["extrinsics"]):
        if not (np.all(np.isfinite(E)) and _rotation_ok(E[:, :3])):
            report.append(Violation("extrinsics", s, "rotation block must be a proper rotation"))
    for s, M in enumerate(data["monitor"]):
        if np.any(M[0] <= 0) or np.any(M[2] <= 0) or np.any(M[1] < 0):
            report.append(Violation("monitor", s, "sizes must be positive, offsets >= 0"))

    ft = data["face_transformation"]
    flag("face_transformation", np.array([not (np.all(np.isfinite(R)) and _rotation_ok(R))
                                          for R in ft], dtype=bool),
         "must be a proper rotation")
    fc = data["face_center"]
    flag("face_center", ~(np.all(np.isfinite(fc), axis=1) & (fc[:, 2] > 0)),
         "must be finite and in front of the camera")
    g = data["gaze"]
    flag("gaze", ~(np.all(np.isfinite(g), axis=1) & (np.abs(g[:, 0]) <= np.pi / 2)
                   & (np.abs(g[:, 1]) <= np.pi)), "angles out of range")
    flag("gaze_point", ~np.all(np.isfinite(data["gaze_point"]), axis=1), "must be finite")
    flag("head_rot_norm", ~np.all(np.isfinite(data["head_rot_norm"]), axis=1), "must be finite")
    md = data["mouse_distance"]
    flag("mouse_distance", md < 0, "must be >= 0 or NaN")
    flag("on_grid", data["on_grid"] & (ir >= 122), "moving-point samples are never on a grid")
    return report


def empty_subject(n: int, n_sessions: int = 1) -> SubjectFile:
    """Zero-filled arrays with the right shapes and dtypes (identity rotations)."""
    d = SubjectFile()
    for key, (shape, dtype) in SAMPLE_KEYS.items():
        d[key] = np.zeros((n,) + shape, dtype=dtype)
    d["face_transformation"][:] = np.eye(3)
    d["extrinsics"] = np.zeros((n_sessions, 3, 4))
    d["extrinsics"][:, :, :3] = np.eye(3)
    d["monitor"] = np.zeros((n_sessions, 3, 2), dtype=np.int64)
    return d
