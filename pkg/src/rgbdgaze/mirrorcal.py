"""Screen-to-camera extrinsic calibration through a planar mirror.

The screen shows a checkerboard; a front-facing camera sees it reflected in a
hand-held mirror held at several poses. Each observation constrains
``project(reflect(E X, plane_i))`` for the known world corners ``X``. The
extrinsics and all mirror planes are estimated jointly by Levenberg-Marquardt,
started from a closed-form initialization built on per-image pose fits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import BoardOffScreen, NoConvergence, TooFewPoses
from .geometry import Extrinsics, MonitorSpec, unproject_screen
from .pnp import Intrinsics, _project_unchecked, fit_pose, project_point

FLIP_X = np.diag([-1.0, 1.0, 1.0])


@dataclass(frozen=True)
class BoardSpec:
    """Inner-corner grid drawn on screen; ``origin_px`` is the top-left corner."""

    cols: int = 10
    rows: int = 5
    tile_mm: float = 50.0
    origin_px: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.cols < 2 or self.rows < 2:
            raise ValueError("board needs at least 2x2 corners")
        if self.tile_mm <= 0:
            raise ValueError("tile size must be positive")

    def to_dict(self) -> dict:
        return {"cols": self.cols, "rows": self.rows, "tile_mm": self.tile_mm,
                "origin_px": list(self.origin_px)}

    @classmethod
    def from_dict(cls, d) -> "BoardSpec":
        return cls(int(d.get("cols", 10)), int(d.get("rows", 5)), float(d.get("tile_mm", 50.0)),
                   tuple(d.get("origin_px", (0.0, 0.0))))


@dataclass(frozen=True)
class MirrorPlane:
    """Plane ``n . p = d`` in camera coordinates, ``n`` pointing away from the camera."""

    normal: np.ndarray
    d: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("mirror normal must be nonzero")
        n = n / norm
        d = float(self.d) / norm
        if d < 0:
            n, d = -n, -d
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "d", d)


@dataclass
class ExtrinsicsFit:
    extrinsics: Extrinsics
    planes: list
    rms_px: float
    iterations: int
    cost: float = 0.0
    init: Extrinsics | None = field(default=None, repr=False)

    def diagnostics(self) -> dict:
        return {"rms_px": self.rms_px, "iterations": self.iterations,
                "planes": [{"normal": p.normal.tolist(), "d": p.d} for p in self.planes]}


def board_world_points(spec: BoardSpec, m: MonitorSpec) -> np.ndarray:
    """World coordinates (z = 0) of every inner corner, row-major from the top-left."""
    tile_px = spec.tile_mm * np.array([m.w / m.W, m.h / m.H])
    j, i = np.meshgrid(np.arange(spec.cols), np.arange(spec.rows))
    px = np.asarray(spec.origin_px, dtype=float) + np.stack([j.ravel(), i.ravel()], axis=1) * tile_px
    lo = np.array([m.offset_x, m.offset_y])
    hi = lo + [m.w, m.h]
    if np.any(px < lo) or np.any(px > hi):
        raise BoardOffScreen("checkerboard corners fall outside the screen")
    return unproject_screen(px, m)


def reflect_point(p, plane: MirrorPlane) -> np.ndarray:
    """Mirror image of point(s) ``(..., 3)``: ``p - 2 (n.p - d) n``."""
    p = np.asarray(p, dtype=float)
    n = plane.normal
    return p - 2.0 * (p @ n - plane.d)[..., None] * n


def render_observation(world, E: Extrinsics, plane: MirrorPlane, K: Intrinsics) -> np.ndarray:
    """Pixels at which the camera sees the mirrored world points."""
    cam = np.asarray(world) @ E.rotation.T + E.translation
    return project_point(reflect_point(cam, plane), K)


def _householder(n):
    return np.eye(3) - 2.0 * np.outer(n, n)


def _initial_guess(world, observations, K: Intrinsics):
    """Closed-form start: per-image PnP on the x-flipped board, then linear algebra.

    For mirror i with Householder matrix H_i, the image is that of a proper
    pose ``(H_i R F, H_i t + 2 d_i n_i)`` applied to ``F X``. The products
    ``M_j M_i^T = H_j H_i`` are rotations about ``n_i x n_j``; each normal is
    the common null direction of its axes. R and the translations then follow.
    """
    flipped = world @ FLIP_X
    Ms, ts = [], []
    for obs in observations:
        Rp, tp, _ = fit_pose(flipped, obs, K)
        Ms.append(Rp @ FLIP_X)
        ts.append(tp)
    k = len(Ms)
    normals = []
    for i in range(k):
        axes = []
        for j in range(k):
            if j != i:
                rv = Rotation.from_matrix(Ms[j] @ Ms[i].T).as_rotvec()
                axes.append(rv / max(np.linalg.norm(rv), 1e-300))
        _, _, vt = np.linalg.svd(np.asarray(axes))
        n = vt[-1]
        normals.append(n if n[2] >= 0 else -n)
    Rsum = sum(_householder(n) @ M for n, M in zip(normals, Ms))
    u, _, vt = np.linalg.svd(Rsum)
    R = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    # t_i' = H_i t + 2 d_i n_i, linear in (t, d_1..d_k)
    A = np.zeros((3 * k, 3 + k))
    b = np.concatenate(ts)
    for i, n in enumerate(normals):
        A[3 * i:3 * i + 3, :3] = _householder(n)
        A[3 * i:3 * i + 3, 3 + i] = 2.0 * n
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    planes = [MirrorPlane(n, d) for n, d in zip(normals, sol[3:])]
    return R, sol[:3], planes


def _tangent_basis(n):
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b1 = np.cross(n, a)
    b1 /= np.linalg.norm(b1)
    return b1, np.cross(n, b1)


def total_cost(world, observations, K, E: Extrinsics, planes) -> float:
    """Sum of squared pixel residuals over every image and corner."""
    c = 0.0
    for obs, pl in zip(observations, planes):
        c += float(np.sum((render_observation(world, E, pl, K) - obs) ** 2))
    return c


def solve_extrinsics(observations, K: Intrinsics, spec: BoardSpec, m: MonitorSpec,
                     max_iter: int = 200, ftol: float = 1e-12) -> ExtrinsicsFit:
    """Jointly fit the world->camera extrinsics and one mirror plane per image.

    Every observation is an ``(rows*cols, 2)`` array of detected corners in the
    order of :func:`board_world_points`. At least three distinct mirror poses
    are needed.
    """
    obs = [np.asarray(o, dtype=float).reshape(-1, 2) for o in observations]
    if len(obs) < 3:
        raise TooFewPoses(f"need at least 3 mirror poses, got {len(obs)}")
    world = board_world_points(spec, m)
    for o in obs:
        if o.shape != (len(world), 2) or not np.all(np.isfinite(o)):
            raise ValueError(f"each observation needs {len(world)} finite corners")

    R0, t0, planes0 = _initial_guess(world, obs, K)
    bases = [_tangent_basis(p.normal) for p in planes0]
    k = len(obs)

    def unpack(x):
        R = Rotation.from_rotvec(x[:3]).as_matrix() @ R0
        t = x[3:6]
        planes = []
        for i, pl in enumerate(planes0):
            a, b, d = x[6 + 3 * i:9 + 3 * i]
            n = pl.normal + a * bases[i][0] + b * bases[i][1]
            nn = np.linalg.norm(n)
            planes.append((n / nn, d))
        return R, t, planes

    def residual(x):
        R, t, planes = unpack(x)
        cam = world @ R.T + t
        out = []
        for (n, d), o in zip(planes, obs):
            p = cam - 2.0 * (cam @ n - d)[:, None] * n
            out.append(_project_unchecked(p, K) - o)
        return np.concatenate(out).ravel()

    x0 = np.zeros(6 + 3 * k)
    x0[3:6] = t0
    for i, pl in enumerate(planes0):
        x0[8 + 3 * i] = pl.d
    sol = least_squares(residual, x0, method="lm", ftol=ftol, xtol=1e-15, gtol=1e-15,
                        max_nfev=max_iter * (len(x0) + 1))
    R, t, planes = unpack(sol.x)
    fit = ExtrinsicsFit(
        extrinsics=Extrinsics.from_rt(_orthonormalize(R), t),
        planes=[MirrorPlane(n, d) for n, d in planes],
        rms_px=float(np.sqrt(np.mean(np.sum(sol.fun.reshape(-1, 2) ** 2, axis=1)))),
        iterations=int(sol.nfev),
        cost=float(np.sum(sol.fun ** 2)),
        init=Extrinsics.from_rt(R0, t0),
    )
    if sol.status <= 0:
        raise NoConvergence("mirror calibration hit the iteration limit",
                            result=fit, residual=fit.rms_px)
    return fit


def _orthonormalize(R):
    u, _, vt = np.linalg.svd(R)
    return u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt


# synthetic scenes ------------------------------------------------------------

DEFAULT_MONITOR = MonitorSpec(w=3840, h=2160, W=600.0, H=337.5)
DEFAULT_INTRINSICS = Intrinsics(1000.0, 1000.0, 640.0, 360.0)
IMAGE_SIZE = (1280, 720)


def default_board(m: MonitorSpec = DEFAULT_MONITOR, spec: BoardSpec | None = None) -> BoardSpec:
    """Board centered on the screen."""
    spec = spec or BoardSpec()
    tile_px = spec.tile_mm * np.array([m.w / m.W, m.h / m.H])
    span = tile_px * [spec.cols - 1, spec.rows - 1]
    origin = (np.array([m.w, m.h]) - span) / 2 + [m.offset_x, m.offset_y]
    return BoardSpec(spec.cols, spec.rows, spec.tile_mm, tuple(float(v) for v in origin))


def typical_extrinsics(m: MonitorSpec = DEFAULT_MONITOR, tilt_deg=10.0) -> Extrinsics:
    """Camera centered 20 mm below the screen's bottom edge, facing the user, tilted up."""
    base = np.diag([-1.0, 1.0, -1.0])  # camera looks along world -z
    tilt = Rotation.from_euler("x", tilt_deg, degrees=True).as_matrix()
    R = tilt @ base
    center = np.array([0.0, m.H / 2 + 20.0, -15.0])
    return Extrinsics.from_rt(R, -R @ center)


def random_mirror_plane(rng, z_range=(300.0, 600.0), max_tilt_deg=25.0) -> MirrorPlane:
    """Mirror facing the camera, tipped up so the screen above the camera is visible."""
    tilt = Rotation.from_euler("xy", [rng.uniform(-max_tilt_deg, max_tilt_deg) - 12.0,
                                      rng.uniform(-max_tilt_deg, max_tilt_deg)], degrees=True)
    n = tilt.apply([0.0, 0.0, 1.0])
    z = rng.uniform(*z_range)
    return MirrorPlane(n, n[2] * z)


def synthetic_scene(n_poses=3, noise_px=0.0, seed=0, K: Intrinsics = DEFAULT_INTRINSICS,
                    m: MonitorSpec = DEFAULT_MONITOR, E: Extrinsics | None = None,
                    image_size=IMAGE_SIZE, max_tries=10_000):
    """Render mirror observations of the on-screen board; returns a dict.

    Only planes whose reflected board lands fully inside the image are kept.
    """
    rng = np.random.default_rng(seed)
    E = E or typical_extrinsics(m)
    spec = default_board(m)
    world = board_world_points(spec, m)
    cam = world @ E.rotation.T + E.translation
    planes, clean = [], []
    for _ in range(max_tries):
        if len(planes) == n_poses:
            break
        pl = random_mirror_plane(rng)
        refl = reflect_point(cam, pl)
        if np.any(refl[:, 2] <= 0):
            continue
        uv = project_point(refl, K)
        if np.all((uv >= 0) & (uv <= image_size)):
            planes.append(pl)
            clean.append(uv)
    if len(planes) < n_poses:
        raise RuntimeError("could not place enough visible mirror poses")
    noisy = [uv + rng.normal(0.0, noise_px, uv.shape) if noise_px else uv for uv in clean]
    return {"E": E, "planes": planes, "observations": noisy, "clean": clean,
            "board": spec, "monitor": m, "K": K}


def load_observations(path):
    """Read ``{intrinsics, board, images:[{corners}], monitor?}``."""
    d = json.loads(Path(path).read_text())
    K = Intrinsics.from_dict(d["intrinsics"])
    board = BoardSpec.from_dict(d["board"])
    m = MonitorSpec.from_dict(d["monitor"]) if "monitor" in d else None
    obs = [np.asarray(img["corners"], dtype=float) for img in d["images"]]
    return K, board, m, obs


def save_observations(path, K: Intrinsics, board: BoardSpec, observations,
                      m: MonitorSpec | None = None) -> None:
    d = {"intrinsics": K.to_dict(), "board": board.to_dict(),
         "images": [{"corners": np.asarray(o).tolist()} for o in observations]}
    if m is not None:
        d["monitor"] = m.to_dict()
    Path(path).write_text(json.dumps(d))
