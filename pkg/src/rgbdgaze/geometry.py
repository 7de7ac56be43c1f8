"""Coordinate chain between gaze angles, camera space, world space and screen pixels.

Conventions
-----------
* Gaze angles are ``(pitch, yaw)`` in radians. The matching unit vector is
  ``(-cos p sin y, sin p, cos p cos y)``.
* World frame: origin at the screen center, x along pixel columns, y along
  pixel rows, screen in the plane z = 0. Units are millimeters.
* ``Extrinsics.matrix`` maps homogeneous world points to camera points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BehindOrigin, InvalidExtrinsics, OffPlane, Parallel, ZeroVector

ZERO_NORM = 1e-12
PARALLEL_EPS = 1e-12
PLANE_TOL_MM = 1e-6


@dataclass(frozen=True)
class MonitorSpec:
    """Screen resolution (px), multi-monitor offsets (px) and physical size (mm)."""

    w: float
    h: float
    W: float
    H: float
    offset_x: float = 0.0
    offset_y: float = 0.0

    def __post_init__(self):
        if min(self.w, self.h, self.W, self.H) <= 0:
            raise ValueError(f"monitor dimensions must be positive: {self}")

    @property
    def mm_per_px(self) -> np.ndarray:
        return np.array([self.W / self.w, self.H / self.h])

    def to_matrix(self) -> np.ndarray:
        """The 3x2 monitor matrix ``[[w, h], [offset_x, offset_y], [W, H]]``."""
        return np.array([[self.w, self.h], [self.offset_x, self.offset_y], [self.W, self.H]])

    @classmethod
    def from_matrix(cls, M) -> "MonitorSpec":
        M = np.asarray(M)
        return cls(w=M[0, 0].item(), h=M[0, 1].item(), W=M[2, 0].item(), H=M[2, 1].item(),
                   offset_x=M[1, 0].item(), offset_y=M[1, 1].item())

    def to_dict(self) -> dict:
        return {"w": self.w, "h": self.h, "offset_x": self.offset_x,
                "offset_y": self.offset_y, "W": self.W, "H": self.H}

    @classmethod
    def from_dict(cls, d: dict) -> "MonitorSpec":
        return cls(w=d["w"], h=d["h"], W=d["W"], H=d["H"],
                   offset_x=d.get("offset_x", 0.0), offset_y=d.get("offset_y", 0.0))


@dataclass(frozen=True)
class Extrinsics:
    """Rigid world -> camera transform as a 4x4 homogeneous matrix (mm)."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        E = np.array(self.matrix, dtype=float)
        if E.shape == (3, 4):
            E = np.vstack([E, [0.0, 0.0, 0.0, 1.0]])
        object.__setattr__(self, "matrix", E)
        self.check()

    def check(self, tol: float = 1e-9) -> None:
        E = self.matrix
        if E.shape != (4, 4):
            raise InvalidExtrinsics(f"expected 4x4 matrix, got {E.shape}")
        if not np.all(np.isfinite(E)):
            raise InvalidExtrinsics("non-finite entries")
        if np.max(np.abs(E[3] - [0, 0, 0, 1])) > tol:
            raise InvalidExtrinsics(f"bottom row must be (0,0,0,1), got {E[3]}")
        R = E[:3, :3]
        if np.max(np.abs(R @ R.T - np.eye(3))) > tol:
            raise InvalidExtrinsics("rotation block is not orthonormal")
        if np.linalg.det(R) < 0:
            raise InvalidExtrinsics("rotation block has determinant -1")

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @classmethod
    def from_rt(cls, R, t) -> "Extrinsics":
        E = np.eye(4)
        E[:3, :3] = R
        E[:3, 3] = t
        return cls(E)

    def inverse_matrix(self) -> np.ndarray:
        # closed form; avoids a general 4x4 inversion
        R, t = self.rotation, self.translation
        Einv = np.eye(4)
        Einv[:3, :3] = R.T
        Einv[:3, 3] = -R.T @ t
        return Einv

    def to_json(self) -> dict:
        return {"extrinsics": self.matrix.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Extrinsics":
        return cls(np.asarray(d["extrinsics"], dtype=float))

    def save(self, path, **extra) -> None:
        Path(path).write_text(json.dumps({**self.to_json(), **extra}, indent=2))

    @classmethod
    def load(cls, path) -> "Extrinsics":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ScreenPlane:
    """Plane ``a x + b y + c z + d = 0`` in world coordinates."""

    coefficients: tuple = (0.0, 0.0, 1.0, 0.0)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        n = np.linalg.norm(c[:3])
        if n < ZERO_NORM:
            raise ZeroVector("plane normal is zero")
        object.__setattr__(self, "coefficients", tuple((c / n).tolist()))

    @property
    def normal(self) -> np.ndarray:
        return np.asarray(self.coefficients[:3])

    @property
    def offset(self) -> float:
        return self.coefficients[3]


DEFAULT_PLANE = ScreenPlane()


def angles_to_vector(g) -> np.ndarray:
    """Unit gaze direction for ``(..., 2)`` pitch/yaw angles."""
    g = np.asarray(g, dtype=float)
    p, y = g[..., 0], g[..., 1]
    cp = np.cos(p)
    return np.stack([-cp * np.sin(y), np.sin(p), cp * np.cos(y)], axis=-1)


def vector_to_angles(v) -> np.ndarray:
    """Inverse of :func:`angles_to_vector`; the input is normalized first."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < ZERO_NORM):
        raise ZeroVector("cannot take angles of a zero vector")
    u = v / n
    pitch = np.arcsin(np.clip(u[..., 1], -1.0, 1.0))
    yaw = -np.arctan2(u[..., 0], u[..., 2])
    return np.stack([pitch, yaw], axis=-1)


def unproject_screen(p, m: MonitorSpec) -> np.ndarray:
    """Screen pixel(s) ``(..., 2)`` to world points ``(..., 3)`` on z = 0."""
    p = np.asarray(p, dtype=float)
    x = (p[..., 0] - m.offset_x - m.w / 2) * (m.W / m.w)
    y = (p[..., 1] - m.offset_y - m.h / 2) * (m.H / m.h)
    return np.stack([x, y, np.zeros_like(x)], axis=-1)


def project_world_to_screen(p3, m: MonitorSpec, tol: float = PLANE_TOL_MM) -> np.ndarray:
    p3 = np.asarray(p3, dtype=float)
    if np.any(np.abs(p3[..., 2]) > tol):
        raise OffPlane(f"point(s) not on the screen plane (|z| > {tol} mm)")
    x = p3[..., 0] * (m.w / m.W) + m.w / 2 + m.offset_x
    y = p3[..., 1] * (m.h / m.H) + m.h / 2 + m.offset_y
    return np.stack([x, y], axis=-1)


def _apply(M, p):
    p = np.asarray(p, dtype=float)
    return p @ M[:3, :3].T + M[:3, 3]


def world_to_camera(p, E: Extrinsics) -> np.ndarray:
    return _apply(E.matrix, p)


def camera_to_world(p, E: Extrinsics) -> np.ndarray:
    return _apply(E.inverse_matrix(), p)


def intersect_ray_plane(origin, direction, plane: ScreenPlane = DEFAULT_PLANE) -> np.ndarray:
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if np.linalg.norm(direction) < ZERO_NORM:
        raise ZeroVector("ray direction is zero")
    n = plane.normal
    denom = float(n @ direction)
    if abs(denom) < PARALLEL_EPS:
        raise Parallel("ray is parallel to the plane")
    t = -(float(n @ origin) + plane.offset) / denom
    if t <= 0:
        raise BehindOrigin(f"plane lies behind the ray origin (t={t:.6g})")
    hit = origin + t * direction
    if plane.coefficients == DEFAULT_PLANE.coefficients:
        hit[2] = 0.0  # exact on the default screen plane
    return hit


def gaze_point_from_prediction(g_pred, R, c, E: Extrinsics, m: MonitorSpec,
                               plane: ScreenPlane = DEFAULT_PLANE) -> np.ndarray:
    """Predicted normalized gaze angles to an on-screen pixel.

    ``c`` is the face center in camera coordinates and ``R`` the normalization
    rotation. The ray runs from the face center through ``c + g`` after both
    points are moved to world coordinates.
    """
    g_norm = angles_to_vector(g_pred)
    g_cam = np.asarray(R).T @ g_norm
    c = np.asarray(c, dtype=float)
    c_world = camera_to_world(c, E)
    end_world = camera_to_world(c + g_cam, E)
    hit = intersect_ray_plane(c_world, end_world - c_world, plane)
    if plane.coefficients != DEFAULT_PLANE.coefficients:
        # a custom plane may not be z=0; report its point in-plane coordinates
        return project_world_to_screen(np.array([hit[0], hit[1], 0.0]), m)
    return project_world_to_screen(hit, m)


def compute_gaze_label(p, c, R, E: Extrinsics, m: MonitorSpec) -> np.ndarray:
    """Ground-truth normalized gaze angles for a subject at ``c`` looking at pixel ``p``."""
    p_cam = world_to_camera(unproject_screen(p, m), E)
    g_cam = p_cam - np.asarray(c, dtype=float)
    if np.linalg.norm(g_cam) < ZERO_NORM:
        raise ZeroVector("gaze target coincides with the face center")
    g_norm = np.asarray(R) @ g_cam
    return vector_to_angles(g_norm / np.linalg.norm(g_norm))


def look_at_rotation(forward, up_hint=(0.0, -1.0, 0.0)) -> np.ndarray:
    """Rotation whose rows are (right, down, forward) for a camera looking along ``forward``.

    Used to build synthetic scenes; ``up_hint`` only fixes the roll.
    """
    f = np.asarray(forward, dtype=float)
    f = f / np.linalg.norm(f)
    down = -np.asarray(up_hint, dtype=float)
    down = down - (down @ f) * f
    down = down / np.linalg.norm(down)
    right = np.cross(down, f)
    return np.vstack([right, down, f])
