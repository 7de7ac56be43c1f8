"""Face normalization.

Fit a generic 5-point face model to detected landmarks, then build the
rotation/scale/warp that centers the face, removes head roll and moves the
face to a fixed virtual distance. Landmark order everywhere: right eye,
left eye, nose tip, right mouth corner, left mouth corner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import Degenerate, DegenerateRoll, GimbalLock, SingularWarp
from .pnp import Intrinsics, fit_pose, reprojection_cost

RIGHT_EYE, LEFT_EYE, NOSE, RIGHT_MOUTH, LEFT_MOUTH = range(5)


@dataclass(frozen=True)
class GenericFaceModel:
    """Five 3D landmark positions (mm) in a head frame.

    The head frame is camera-aligned for a frontal face: x towards the
    subject's left (image right), y down, z away from the camera. A face
    looking straight into the camera has identity head rotation.
    """

    points: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.shape != (5, 3):
            raise ValueError(f"face model needs 5x3 points, got {P.shape}")
        s = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
        if s[-1] <= 1e-9 * s[0]:
            raise Degenerate("face model points are coplanar or collinear")
        object.__setattr__(self, "points", P)

    @classmethod
    def default(cls) -> "GenericFaceModel":
        """Non-authoritative stand-in model (eyes +-30 mm, nose 30 mm forward).

        Suitable for tests and synthetic data only; real use should load the
        model the training data was normalized with.
        """
        return cls(np.array([
            [-30.0, 0.0, 0.0],
            [30.0, 0.0, 0.0],
            [0.0, 30.0, -30.0],
            [-25.0, 60.0, -5.0],
            [25.0, 60.0, -5.0],
        ]))

    @property
    def interocular_axis(self) -> np.ndarray:
        d = self.points[LEFT_EYE] - self.points[RIGHT_EYE]
        return d / np.linalg.norm(d)

    @classmethod
    def load(cls, path) -> "GenericFaceModel":
        return cls(np.asarray(json.loads(Path(path).read_text())["points"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({"points": self.points.tolist()}, indent=2))


@dataclass(frozen=True)
class HeadPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("head rotation must be a proper rotation matrix")
        if t[2] <= 0:
            raise ValueError("face must be in front of the camera (t_z > 0)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def transform(self, pts) -> np.ndarray:
        return np.asarray(pts) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class NormParams:
    virtual_focal: float = 960.0
    norm_distance: float = 300.0
    face_patch: int = 448
    eye_patch: int = 112
    flip_left_eye: bool = True

    def __post_init__(self):
        if min(self.virtual_focal, self.norm_distance, self.face_patch, self.eye_patch) <= 0:
            raise ValueError("normalization parameters must be positive")

    @property
    def K_virtual(self) -> np.ndarray:
        c = self.face_patch / 2
        return np.array([[self.virtual_focal, 0, c], [0, self.virtual_focal, c], [0, 0, 1.0]])


@dataclass
class NormalizationResult:
    R: np.ndarray
    scale: float
    warp: np.ndarray
    center: np.ndarray
    landmarks: np.ndarray = field(default=None)
    head_rotation: np.ndarray = field(default=None)


def estimate_head_pose(landmarks, model: GenericFaceModel, K: Intrinsics) -> HeadPose:
    """Fit the face model to five image landmarks.

    Starts from a homography pose of the model flattened onto its best-fit
    plane, then refines all six degrees of freedom on reprojection error.
    """
    L = np.asarray(landmarks, dtype=float)
    if L.shape != (5, 2) or not np.all(np.isfinite(L)):
        raise Degenerate("expected 5 finite landmarks")
    R, t, _ = fit_pose(model.points, L, K)
    if t[2] < 0:
        raise Degenerate("pose fit placed the face behind the camera")
    # near-planar points admit a second local minimum with the face plane
    # tilted the other way about the line of sight; keep the better fit
    R_alt = _flip_tilt(R, t, model)
    try:
        R2, t2, _ = fit_pose(model.points, L, K, R0=R_alt, t0=t)
        if t2[2] > 0 and (reprojection_cost(model.points, L, K, R2, t2)
                          < reprojection_cost(model.points, L, K, R, t)):
            R, t = R2, t2
    except Exception:  # noqa: BLE001 - the alternative start is optional
        pass
    return HeadPose(R, t)


def _flip_tilt(R, t, model: GenericFaceModel) -> np.ndarray:
    P = model.points - model.points.mean(axis=0)
    normal = R @ np.linalg.svd(P)[2][2]
    view = t / np.linalg.norm(t)
    mirrored = 2 * (normal @ view) * view - normal
    axis = np.cross(normal, mirrored)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        return R
    angle = np.arctan2(s, normal @ mirrored)
    return Rotation.from_rotvec(axis / s * angle).as_matrix() @ R


def compute_face_center(pose: HeadPose, model: GenericFaceModel) -> np.ndarray:
    """Mean of both eyes and the nose tip, in camera coordinates."""
    idx = [RIGHT_EYE, LEFT_EYE, NOSE]
    return pose.transform(model.points[idx].mean(axis=0))


def compute_normalization(pose: HeadPose, center, K_real: Intrinsics,
                          params: NormParams = NormParams(),
                          model: GenericFaceModel | None = None):
    """Return ``(R, scale, warp)`` for a face centered at ``center``.

    R's rows are (right, down, forward): forward looks at the face center,
    down is orthogonal to the head's inter-ocular axis so roll vanishes.
    The warp maps real image pixels to normalized patch pixels.
    """
    c = np.asarray(center, dtype=float)
    dist = np.linalg.norm(c)
    if dist <= 0:
        raise ValueError("face center must be non-zero")
    forward = c / dist
    axis_head = model.interocular_axis if model is not None else np.array([1.0, 0.0, 0.0])
    head_x = pose.rotation @ axis_head
    down = np.cross(forward, head_x)
    n = np.linalg.norm(down)
    if n < 1e-9:
        raise DegenerateRoll("inter-ocular axis is parallel to the viewing direction")
    down /= n
    right = np.cross(down, forward)
    R = np.vstack([right, down, forward])
    scale = params.norm_distance / dist
    S = np.diag([1.0, 1.0, scale])
    warp = params.K_virtual @ S @ R @ K_real.K_inv
    return R, scale, warp


def warp_landmarks(landmarks, warp) -> np.ndarray:
    L = np.asarray(landmarks, dtype=float)
    h = np.c_[L, np.ones(len(L))] @ np.asarray(warp).T
    if np.any(np.abs(h[:, 2]) < 1e-12):
        raise SingularWarp("a landmark maps to the line at infinity")
    return h[:, :2] / h[:, 2:]


def bilinear_sample(img, xs, ys) -> np.ndarray:
    """Bilinear lookup at float pixel positions; taps outside the image read 0."""
    img = np.asarray(img)
    H, W = img.shape[:2]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    extra = (1,) * (img.ndim - 2)
    out = np.zeros(xs.shape + img.shape[2:], dtype=float)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
            vals = np.zeros(xs.shape + img.shape[2:], dtype=float)
            vals[ok] = img[yi[ok], xi[ok]]
            out += (wx * wy).reshape(xs.shape + extra) * vals
    return out


def warp_image(img, warp, out_size, dtype=None) -> np.ndarray:
    """Inverse-map bilinear resampling: ``out(u, v) = img(warp^-1 (u, v, 1))``.

    ``out_size`` is ``(width, height)`` or a single int for square output.
    Integer inputs are rounded back to their dtype unless ``dtype`` says otherwise.
    """
    img = np.asarray(img)
    warp = np.asarray(warp, dtype=float)
    if abs(np.linalg.det(warp)) < 1e-300:
        raise SingularWarp("warp matrix is singular")
    inv = np.linalg.inv(warp)
    ow, oh = (out_size, out_size) if np.isscalar(out_size) else out_size
    u, v = np.meshgrid(np.arange(ow, dtype=float), np.arange(oh, dtype=float))
    src = np.stack([u, v, np.ones_like(u)], axis=-1) @ inv.T
    w = src[..., 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    xs, ys = src[..., 0] / w, src[..., 1] / w
    xs[bad] = -10.0  # samples at infinity read as zero
    ys[bad] = -10.0
    out = bilinear_sample(img, xs, ys)
    dtype = dtype or img.dtype
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return out.astype(dtype)


def normalize_gaze(g3, R) -> np.ndarray:
    """Rotate a camera-frame gaze vector into the normalized frame (no scaling)."""
    return np.asarray(g3, dtype=float) @ np.asarray(R).T


def crop_eyes(face_patch, landmarks_warped, params: NormParams = NormParams()):
    """Cut ``eye_patch``-sized crops around both warped eye landmarks.

    Windows that would cross the patch border are shifted inside it. Returns
    ``(right_eye, left_eye, clamped)`` where ``clamped`` flags each eye.
    """
    img = np.asarray(face_patch)
    H, W = img.shape[:2]
    s = params.eye_patch
    crops, clamped = [], []
    for idx in (RIGHT_EYE, LEFT_EYE):
        cx, cy = np.rint(landmarks_warped[idx]).astype(int)
        x0, y0 = cx - s // 2, cy - s // 2
        x0c = int(np.clip(x0, 0, W - s))
        y0c = int(np.clip(y0, 0, H - s))
        clamped.append(bool(x0c != x0 or y0c != y0))
        crops.append(img[y0c:y0c + s, x0c:x0c + s].copy())
    right, left = crops
    if params.flip_left_eye:
        left = left[:, ::-1].copy()
    return right, left, tuple(clamped)


def normalized_head_rotation(pose: HeadPose, R) -> np.ndarray:
    """(roll, pitch, yaw) of the head in the normalized frame.

    The normalized head rotation factors as ``Ry(yaw) @ Rx(pitch) @ Rz(roll)``.
    """
    M = np.asarray(R) @ pose.rotation
    # pitch = asin(-M[1, 2]) for this factorization
    if abs(M[1, 2]) > np.cos(1e-6):
        raise GimbalLock("pitch within 1e-6 rad of +-pi/2; roll and yaw are not separable")
    yaw, pitch, roll = Rotation.from_matrix(M).as_euler("YXZ")
    return np.array([roll, pitch, yaw])


def normalize(image, landmarks, K: Intrinsics, model: GenericFaceModel,
              params: NormParams = NormParams(), depth=None):
    """Full normalization of one frame. Returns ``(result, patches)``.

    ``patches`` holds the face patch, optional depth patch and both eye crops.
    """
    pose = estimate_head_pose(landmarks, model, K)
    c = compute_face_center(pose, model)
    R, scale, warp = compute_normalization(pose, c, K, params, model)
    Lw = warp_landmarks(landmarks, warp)
    res = NormalizationResult(R=R, scale=scale, warp=warp, center=c, landmarks=Lw,
                              head_rotation=normalized_head_rotation(pose, R))
    face = warp_image(image, warp, params.face_patch)
    right, left, clamped = crop_eyes(face, Lw, params)
    patches = {"face": face, "right_eye": right, "left_eye": left, "eye_clamped": clamped}
    if depth is not None:
        patches["depth"] = warp_image(depth, warp, params.face_patch)
    return res, patches
