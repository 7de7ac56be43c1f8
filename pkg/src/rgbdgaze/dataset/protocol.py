"""On-screen target generation for the three collection phases."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import MonitorSpec

PHASE1_UNIFORM = 80
PHASE3_DURATION_S = 20.0
PHASE3_PATHS = 10
POINT_DIAMETER_MM = 4.7
PENALTY_LIMIT_MM = 350.0
RADIUS_RANGE = (0.15, 0.4)  # fraction of min(W, H)


def _grid(m: MonitorSpec, nx, ny, kx, ky):
    """Centered ``nx x ny`` grid (row-major) with margins ``w/kx`` and ``h/ky`` on each side.

    A span of 4/5 of the width is a margin of w/10, hence ``kx = 10``.
    """
    xs = np.linspace(m.w / kx, m.w - m.w / kx, nx) + m.offset_x
    ys = np.linspace(m.h / ky, m.h - m.h / ky, ny) + m.offset_y
    X, Y = np.meshgrid(xs, ys)
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def gen_phase1_targets(m: MonitorSpec, seed) -> tuple[np.ndarray, np.ndarray]:
    """80 uniform points plus a centered 5x4 grid spanning 4/5 x 3/4, shuffled.

    Returns ``(points (100, 2) px, on_grid (100,) bool)``.
    """
    rng = np.random.default_rng(seed)
    uniform = rng.uniform([0, 0], [m.w, m.h], size=(PHASE1_UNIFORM, 2)) + [m.offset_x, m.offset_y]
    grid = _grid(m, 5, 4, 10, 8)
    pts = np.vstack([uniform, grid])
    flags = np.r_[np.zeros(len(uniform), bool), np.ones(len(grid), bool)]
    order = rng.permutation(len(pts))
    return pts[order], flags[order]


def phase2_grids(m: MonitorSpec) -> tuple[np.ndarray, np.ndarray]:
    """(12 inner points of a 4x3 grid over 3/4 x 2/3, 10 perimeter points of a 4x3 grid over 98 %)."""
    inner = _grid(m, 4, 3, 8, 6)
    outer = _grid(m, 4, 3, 100, 100).reshape(3, 4, 2)
    keep = np.ones((3, 4), bool)
    keep[1:-1, 1:-1] = False
    return inner, outer[keep]


def gen_phase2_targets(m: MonitorSpec, seed) -> np.ndarray:
    """All 22 fixation targets, shuffled per seed."""
    inner, perimeter = phase2_grids(m)
    pts = np.vstack([inner, perimeter])
    return pts[np.random.default_rng(seed).permutation(len(pts))]


@dataclass(frozen=True)
class CircularPath:
    """Uniform-speed circular path; center and radius in world millimeters."""

    monitor: MonitorSpec
    center_mm: tuple
    radius_mm: float
    phase0: float = 0.0
    duration_s: float = PHASE3_DURATION_S

    def sample_mm(self, t) -> np.ndarray:
        ang = self.phase0 + 2 * np.pi * np.asarray(t, dtype=float) / self.duration_s
        c = np.asarray(self.center_mm)
        return np.stack([c[0] + self.radius_mm * np.cos(ang),
                         c[1] + self.radius_mm * np.sin(ang)], axis=-1)

    def sample(self, t) -> np.ndarray:
        """Moving-point position in screen pixels at time ``t`` seconds."""
        mm = self.sample_mm(t)
        m = self.monitor
        return np.stack([mm[..., 0] * m.w / m.W + m.w / 2 + m.offset_x,
                         mm[..., 1] * m.h / m.H + m.h / 2 + m.offset_y], axis=-1)


class PenaltyAccountant:
    """Accumulates mouse-to-point distances above the 4.7 mm threshold.

    ``aborted`` turns true once the total is strictly greater than 350 mm.
    """

    def __init__(self, threshold_mm=POINT_DIAMETER_MM, limit_mm=PENALTY_LIMIT_MM):
        self.threshold, self.limit = threshold_mm, limit_mm
        self.total = 0.0
        self.samples = 0

    @property
    def aborted(self) -> bool:
        return self.total > self.limit

    def add_distance(self, dist_mm: float) -> bool:
        """Account one sample; returns ``aborted``."""
        self.samples += 1
        if dist_mm > self.threshold:
            self.total += float(dist_mm)
        return self.aborted

    def observe(self, mouse_mm, point_mm) -> bool:
        d = float(np.linalg.norm(np.asarray(mouse_mm, float) - np.asarray(point_mm, float)))
        return self.add_distance(d)


def gen_phase3_path(m: MonitorSpec, seed) -> tuple[CircularPath, PenaltyAccountant]:
    """Random circle fully on screen, plus a fresh penalty accountant."""
    rng = np.random.default_rng(seed)
    r = rng.uniform(*RADIUS_RANGE) * min(m.W, m.H)
    cx = rng.uniform(-m.W / 2 + r, m.W / 2 - r)
    cy = rng.uniform(-m.H / 2 + r, m.H / 2 - r)
    return CircularPath(m, (cx, cy), r, rng.uniform(0, 2 * np.pi)), PenaltyAccountant()


def gen_phase3_paths(m: MonitorSpec, seed, n=PHASE3_PATHS) -> list:
    rng = np.random.default_rng(seed)
    return [gen_phase3_path(m, s)[0] for s in rng.integers(0, 2**63 - 1, size=n)]
