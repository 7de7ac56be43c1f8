"""Pinhole projection and perspective-n-point pose fitting.

Shared by head-pose estimation (5 face landmarks) and the mirror calibration
initializer (planar checkerboard). Poses map object points into the camera
frame: ``X_cam = R @ X + t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, Degenerate, NoConvergence


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([[1 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d) -> "Intrinsics":
        if isinstance(d, dict):
            return cls(d["fx"], d["fy"], d["cx"], d["cy"])
        K = np.asarray(d, dtype=float)
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2])


def project_point(p_cam, K: Intrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame point(s) ``(..., 3)`` to pixels."""
    p = np.asarray(p_cam, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCamera("point(s) at or behind the camera plane")
    return np.stack([K.fx * p[..., 0] / z + K.cx, K.fy * p[..., 1] / z + K.cy], axis=-1)


def _project_unchecked(p, K: Intrinsics):
    z = p[..., 2]
    return np.stack([K.fx * p[..., 0] / z + K.cx, K.fy * p[..., 1] / z + K.cy], axis=-1)


def homography_dlt(src, dst) -> np.ndarray:
    """Direct linear transform for ``dst ~ H src`` with Hartley normalization."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)

    def normalizer(pts):
        mu = pts.mean(axis=0)
        s = np.sqrt(2) / max(np.mean(np.linalg.norm(pts - mu, axis=1)), 1e-300)
        return np.array([[s, 0, -s * mu[0]], [0, s, -s * mu[1]], [0, 0, 1.0]])

    Ts, Td = normalizer(src), normalizer(dst)
    a = np.c_[src, np.ones(len(src))] @ Ts.T
    b = np.c_[dst, np.ones(len(dst))] @ Td.T
    rows = []
    for (x, y, w), (u, v, _) in zip(a, b):
        rows.append([0, 0, 0, -x, -y, -w, v * x, v * y, v * w])
        rows.append([x, y, w, 0, 0, 0, -u * x, -u * y, -u * w])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    H = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ H @ Ts
    return H / H[2, 2] if abs(H[2, 2]) > 1e-300 else H


def planar_pose(obj_xy, img_norm) -> tuple[np.ndarray, np.ndarray]:
    """Pose of a planar target (z = 0 in object frame) from normalized image coords.

    Decomposes the object-plane -> image homography; the result has the
    target in front of the camera.
    """
    H = homography_dlt(obj_xy, img_norm)
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if h3[2] * lam < 0:
        lam = -lam
    r1, r2, t = lam * h1, lam * h2, lam * h3
    R = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(R)
    R = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return R, t


def _plane_frame(points):
    """Best-fit plane basis (rows) and centroid for 3D points."""
    mu = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - mu)
    if vt[0] @ np.cross(vt[1], vt[2]) < 0:
        vt[2] = -vt[2]
    return mu, vt, s


def fit_pose(obj, img, K: Intrinsics, R0=None, t0=None, *, xtol=1e-10, max_iter=100):
    """Least-squares reprojection fit of ``R, t`` (Levenberg-Marquardt).

    Without an initial guess the object points are flattened onto their best
    fit plane and a homography pose serves as the starting point.
    Returns ``(R, t, rms_px)``.
    """
    obj = np.asarray(obj, dtype=float)
    img = np.asarray(img, dtype=float)
    if len(obj) != len(img) or len(obj) < 4:
        raise Degenerate("need at least 4 point correspondences")
    spread = np.linalg.svd(img - img.mean(axis=0), compute_uv=False)
    if spread[-1] < 1e-9 * max(spread[0], 1.0):
        raise Degenerate("image points are collinear or coincident")

    if R0 is None:
        mu, basis, _ = _plane_frame(obj)
        local = (obj - mu) @ basis.T
        norm = np.c_[img, np.ones(len(img))] @ K.K_inv.T
        Rp, tp = planar_pose(local[:, :2], norm[:, :2])
        # X_cam = Rp @ (basis @ (X - mu)) + tp
        R0 = Rp @ basis
        t0 = tp - R0 @ mu
    rv0 = Rotation.from_matrix(R0).as_rotvec()

    # translation is solved in units of its initial length so the relative
    # step tolerance means the same thing for rotation and translation
    unit = max(float(np.linalg.norm(t0)), 1e-9)

    def residual(x):
        R = Rotation.from_rotvec(x[:3]).as_matrix()
        cam = obj @ R.T + x[3:] * unit
        return (_project_unchecked(cam, K) - img).ravel()

    x0 = np.r_[rv0, np.asarray(t0, dtype=float) / unit]
    sol = least_squares(residual, x0, method="lm", xtol=xtol, ftol=1e-15, gtol=1e-15,
                        max_nfev=max_iter * (len(x0) + 1))
    R = Rotation.from_rotvec(sol.x[:3]).as_matrix()
    t = sol.x[3:] * unit
    if sol.status <= 0:
        rms = float(np.sqrt(np.mean(sol.fun.reshape(-1, 2) ** 2 @ np.ones(2))))
        raise NoConvergence("pose fit did not converge", result=(R, t), residual=rms)
    R, t = _polish(obj, img, K, R, t)
    r = _project_unchecked(obj @ R.T + t, K) - img
    return R, t, float(np.sqrt(np.mean(np.sum(r ** 2, axis=1))))


def _polish(obj, img, K: Intrinsics, R, t, steps=5):
    """Gauss-Newton steps with the analytic Jacobian.

    The finite-difference Jacobian used by the LM solver stalls near 1e-8 rad;
    a few exact steps take noiseless fits to machine precision. A step is only
    kept if it lowers the cost.
    """
    def cost(R, t):
        return float(np.sum((_project_unchecked(obj @ R.T + t, K) - img) ** 2))

    best = cost(R, t)
    for _ in range(steps):
        cam = obj @ R.T + t
        x, y, z = cam.T
        r = (_project_unchecked(cam, K) - img).ravel()
        dproj = np.zeros((len(obj), 2, 3))
        dproj[:, 0, 0] = K.fx / z
        dproj[:, 0, 2] = -K.fx * x / z ** 2
        dproj[:, 1, 1] = K.fy / z
        dproj[:, 1, 2] = -K.fy * y / z ** 2
        # left perturbation exp([w]) R: d(cam)/dw = -[R X]_x
        rx = cam - t
        skew = np.zeros((len(obj), 3, 3))
        skew[:, 0, 1], skew[:, 0, 2] = rx[:, 2], -rx[:, 1]
        skew[:, 1, 0], skew[:, 1, 2] = -rx[:, 2], rx[:, 0]
        skew[:, 2, 0], skew[:, 2, 1] = rx[:, 1], -rx[:, 0]
        J = np.concatenate([dproj @ skew, dproj], axis=2).reshape(-1, 6)
        delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        R_new = Rotation.from_rotvec(delta[:3]).as_matrix() @ R
        t_new = t + delta[3:]
        c = cost(R_new, t_new)
        if not c < best:
            break
        R, t, best = R_new, t_new, c
    return R, t


def reprojection_cost(obj, img, K: Intrinsics, R, t) -> float:
    cam = np.asarray(obj) @ np.asarray(R).T + t
    return float(np.sum((_project_unchecked(cam, K) - img) ** 2))
