"""Temporal smoothing of 2D signals (landmarks, gaze angles, gaze points)."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import BadConfig

DEFAULT_Q = 1e-3
DEFAULT_R = 1e-2
INIT_VELOCITY_VAR = 1e6
GAP_FACTOR = 5.0


class Kalman2D:
    """Constant-velocity Kalman filter with independent x and y axes.

    Each axis carries its own ``[position, velocity]`` state and 2x2 covariance,
    so the full 4x4 covariance is block diagonal by construction and the axes
    never exchange information. ``covariance`` exposes it in
    ``(x, y, vx, vy)`` order.
    """

    def __init__(self, first, q=DEFAULT_Q, r=DEFAULT_R, dt=1.0, t0=None):
        for name, val in (("q", q), ("r", r), ("dt", dt)):
            if not (np.isfinite(val) and val > 0):
                raise BadConfig(f"{name} must be positive, got {val}")
        self.q, self.r, self.dt = float(q), float(r), float(dt)
        self.F = np.array([[1.0, dt], [0.0, 1.0]])
        self.Q = q * np.array([[dt ** 4 / 4, dt ** 3 / 2], [dt ** 3 / 2, dt ** 2]])
        self.last_t = t0
        self._init(first)

    def _init(self, z):
        z = np.asarray(z, dtype=float).reshape(2)
        self.s = np.stack([z, np.zeros(2)], axis=1)           # (axis, [pos, vel])
        self.P = np.zeros((2, 2, 2))
        self.P[:, 0, 0] = self.r
        self.P[:, 1, 1] = INIT_VELOCITY_VAR

    @property
    def position(self) -> np.ndarray:
        return self.s[:, 0].copy()

    @property
    def velocity(self) -> np.ndarray:
        return self.s[:, 1].copy()

    @property
    def covariance(self) -> np.ndarray:
        C = np.zeros((4, 4))
        for a in range(2):
            idx = [a, a + 2]
            C[np.ix_(idx, idx)] = self.P[a]
        return C

    def predict(self) -> np.ndarray:
        return self.s @ self.F.T[:, 0]  # position after one constant-velocity step

    def step(self, z, t=None) -> np.ndarray:
        """Predict one step, then update with measurement ``z``; returns the position.

        When timestamps are given and the gap since the previous sample exceeds
        five timesteps, the filter restarts from ``z``.
        """
        if t is not None:
            if self.last_t is not None and t - self.last_t > GAP_FACTOR * self.dt:
                self.last_t = t
                self._init(z)
                return self.position
            self.last_t = t
        z = np.asarray(z, dtype=float).reshape(2)
        F = self.F
        s = self.s @ F.T
        P = np.einsum("ij,ajk,lk->ail", F, self.P, F) + self.Q
        S = P[:, 0, 0] + self.r
        K = P[:, :, 0] / S[:, None]                              # (axis, 2)
        s = s + K * (z - s[:, 0])[:, None]
        # Joseph form keeps P symmetric PSD under rounding
        IKH = np.eye(2)[None] - K[:, :, None] * np.array([1.0, 0.0])[None, None, :]
        P = np.einsum("aij,ajk,alk->ail", IKH, P, IKH) + self.r * np.einsum("ai,aj->aij", K, K)
        self.s = s
        self.P = 0.5 * (P + P.transpose(0, 2, 1))
        return self.position


def kf_init(first, q=DEFAULT_Q, r=DEFAULT_R, dt=1.0) -> Kalman2D:
    return Kalman2D(first, q, r, dt)


def kf_step(f: Kalman2D, z, t=None):
    return f.step(z, t), f


class Avg3:
    """Mean of the latest (up to) three samples."""

    def __init__(self, window=3):
        self.buf = deque(maxlen=window)

    def step(self, z, t=None) -> np.ndarray:
        self.buf.append(np.asarray(z, dtype=float))
        return np.mean(self.buf, axis=0)


def avg3_step(f: Avg3, z):
    return f.step(z), f


class Passthrough:
    def step(self, z, t=None) -> np.ndarray:
        return np.asarray(z, dtype=float)


class LazyFilter:
    """Creates its underlying filter on the first sample; ``reset`` forgets it."""

    def __init__(self, kind="none", q=DEFAULT_Q, r=DEFAULT_R, dt=1.0):
        if kind not in ("kalman", "avg3", "none"):
            raise BadConfig(f"unknown filter {kind!r}")
        if kind == "kalman":
            Kalman2D(np.zeros(2), q, r, dt)  # validate eagerly
        self.kind, self.q, self.r, self.dt = kind, q, r, dt
        self.f = None

    def reset(self):
        self.f = None

    def step(self, z, t=None) -> np.ndarray:
        if self.f is None:
            if self.kind == "kalman":
                self.f = Kalman2D(z, self.q, self.r, self.dt, t0=t)
                return self.f.position
            self.f = Avg3() if self.kind == "avg3" else Passthrough()
        return self.f.step(z, t)


def make_filter(kind="none", **kw) -> LazyFilter:
    return LazyFilter(kind, **kw)
