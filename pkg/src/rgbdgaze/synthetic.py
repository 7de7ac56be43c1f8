"""Geometrically consistent synthetic subject files and scenes.

Labels are derived from the stored (float32) gaze points, so an oracle that
echoes the labels reproduces the stored gaze points up to float64 rounding.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .dataset.protocol import gen_phase1_targets, gen_phase2_targets, gen_phase3_paths
from .dataset.schema import EYE_SIZE, FACE_SIZE, SubjectFile, empty_subject
from .geometry import Extrinsics, MonitorSpec, compute_gaze_label, look_at_rotation
from .normalization import (GenericFaceModel, HeadPose, NormParams, compute_face_center,
                            compute_normalization, normalized_head_rotation, warp_landmarks)
from .pnp import Intrinsics, project_point

MONITOR = MonitorSpec(w=3840, h=2160, W=597, H=336)
INTRINSICS = Intrinsics(1000.0, 1000.0, 640.0, 360.0)
FPS = 30.0


def camera_below_screen(m: MonitorSpec = MONITOR, tilt_deg=10.0, gap_mm=20.0,
                        x_mm=0.0, depth_mm=-15.0) -> Extrinsics:
    """Camera under the screen's bottom edge, facing the user and tilted upwards."""
    base = np.diag([-1.0, 1.0, -1.0])          # camera looks along world -z
    R = Rotation.from_euler("x", tilt_deg, degrees=True).as_matrix() @ base
    center = np.array([x_mm, m.H / 2 + gap_mm, depth_mm])
    return Extrinsics.from_rt(R, -R @ center)


def random_head(rng, E: Extrinsics, m: MonitorSpec = MONITOR, dist=(400.0, 900.0),
                max_angle_deg=(20.0, 20.0, 10.0)) -> HeadPose:
    """Head 400-900 mm in front of the screen, roughly facing the camera."""
    world = np.array([rng.uniform(-0.25, 0.25) * m.W, rng.uniform(-0.1, 0.3) * m.H,
                      -rng.uniform(*dist)])
    t = E.rotation @ world + E.translation
    # head frame points at the camera, then gets a random perturbation
    facing = look_at_rotation(-t / np.linalg.norm(t), up_hint=(0.0, -1.0, 0.0))
    # rows of `facing` express the head axes; flip so that z points away from the camera
    R0 = np.diag([-1.0, 1.0, -1.0]) @ facing
    yaw, pitch, roll = (rng.uniform(-a, a) for a in max_angle_deg)
    jitter = Rotation.from_euler("YXZ", [yaw, pitch, roll], degrees=True).as_matrix()
    return HeadPose(R0.T @ jitter, t)


def _schedule(n: int):
    """(recording_index, in_recording_index) for n samples across the three phases."""
    n1 = min(100, n)
    rest = n - n1
    n2 = rest // 2
    n3 = rest - n2
    rows = [(i, 0) for i in range(n1)]
    for count, base, recs in ((n2, 100, 22), (n3, 122, 10)):
        per = [count // recs + (1 if r < count % recs else 0) for r in range(recs)]
        for r, k in enumerate(per):
            rows.extend((base + r, i) for i in range(k))
    return rows


def make_subject(n: int = 500, seed: int = 0, n_sessions: int = 1,
                 m: MonitorSpec = MONITOR, K: Intrinsics = INTRINSICS,
                 model: GenericFaceModel | None = None, params: NormParams = NormParams(),
                 images: str = "zeros") -> SubjectFile:
    """Build a valid subject file whose labels follow the shared geometry exactly."""
    rng = np.random.default_rng(seed)
    model = model or GenericFaceModel.default()
    d = empty_subject(n, n_sessions)
    d["monitor"][:] = m.to_matrix().astype(np.int64)
    Es = [camera_below_screen(m, tilt_deg=rng.uniform(5, 15), x_mm=rng.uniform(-20, 20))
          for _ in range(n_sessions)]
    for s, E in enumerate(Es):
        d["extrinsics"][s] = E.matrix[:3]
    sched = _schedule(n)
    sessions = np.sort(rng.integers(0, n_sessions, n)) if n_sessions > 1 else np.zeros(n, int)
    if n_sessions > 1:
        sessions[:n_sessions] = np.arange(n_sessions)  # every session appears
        sessions.sort()
    # targets per session
    targets = {}
    for s in range(n_sessions):
        p1, grid = gen_phase1_targets(m, (seed, s, 1))
        targets[s] = (p1, grid, gen_phase2_targets(m, (seed, s, 2)),
                      gen_phase3_paths(m, (seed, s, 3)))
    for i, (ir, ii) in enumerate(sched):
        s = int(sessions[i])
        E = Es[s]
        p1, grid, p2, paths = targets[s]
        if ir < 100:
            point, on_grid, mouse = p1[ir], bool(grid[ir]), rng.uniform(0, 8)
        elif ir < 122:
            point, on_grid, mouse = p2[ir - 100], True, np.nan
        else:
            point, on_grid, mouse = paths[ir - 122].sample(ii / FPS), False, rng.uniform(0, 15)
        point = np.asarray(point, dtype=np.float32)
        for _ in range(100):
            pose = random_head(rng, E, m)
            c = compute_face_center(pose, model)
            R, _, warp = compute_normalization(pose, c, K, params, model)
            lm = warp_landmarks(project_point(pose.transform(model.points), K), warp)
            if np.all((lm >= 0) & (lm <= FACE_SIZE)):
                break
        d["recording_index"][i], d["in_recording_index"][i] = ir, ii
        d["recording_session"][i] = s
        d["gaze_point"][i] = point
        d["on_grid"][i] = on_grid
        d["mouse_distance"][i] = mouse
        d["face_center"][i] = c
        d["face_transformation"][i] = R
        d["face_landmarks"][i] = lm.astype(np.float32)
        d["head_rot_norm"][i] = normalized_head_rotation(pose, R)
        d["gaze"][i] = compute_gaze_label(point.astype(np.float64), c, R, E, m)
    if images == "noise":
        for key in ("face_color", "left_eye_color", "right_eye_color"):
            d[key][:] = rng.integers(0, 256, d[key].shape, dtype=np.uint8)
        for key in ("face_depth", "left_eye_depth", "right_eye_depth"):
            d[key][:] = rng.integers(300, 900, d[key].shape).astype(np.uint16)
    return d


def random_scene(rng, m: MonitorSpec = MONITOR):
    """One (E, c, R, pixel) tuple with the camera below the screen and a face 400-900 mm away."""
    E = camera_below_screen(m, tilt_deg=rng.uniform(0, 20), x_mm=rng.uniform(-50, 50))
    head = random_head(rng, E, m)
    c = head.translation
    R = look_at_rotation(c)
    px = rng.uniform([0, 0], [m.w, m.h])
    return E, c, R, px


__all__ = ["MONITOR", "INTRINSICS", "camera_below_screen", "random_head", "make_subject",
           "random_scene", "EYE_SIZE"]
