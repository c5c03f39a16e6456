from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MIN_STEP = 1e-6


@dataclass(frozen=True)
class Frame:
    """Rigid transform into an agent's canonical frame.

    Origin at the last observed point, +x along the last observed velocity.
    """

    origin: np.ndarray
    cos: float
    sin: float

    @property
    def heading(self) -> float:
        return float(np.arctan2(self.sin, self.cos))

    @property
    def matrix(self) -> np.ndarray:
        """World -> local rotation."""
        return np.array([[self.cos, self.sin], [-self.sin, self.cos]])

    def to_local(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=float) - self.origin) @ self.matrix.T

    def to_world(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.matrix + self.origin

    def vec_to_local(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.matrix.T


def frame_of(obs, fallback_heading=None) -> Frame:
    obs = np.asarray(obs, dtype=float)
    if len(obs) < 2:
        raise ValueError("need at least 2 observed points")
    v = obs[-1] - obs[-2]
    n = float(np.hypot(*v))
    if n < _MIN_STEP:
        v = np.array([1.0, 0.0]) if fallback_heading is None else np.asarray(fallback_heading, dtype=float)
        n = float(np.hypot(*v))
    return Frame(obs[-1].copy(), float(v[0] / n), float(v[1] / n))


def normalize_frame(obs, fut=None, fallback_heading=None):
    """Canonicalize a track. Returns ``(local_obs, local_fut, frame)``.

    A stationary agent (zero last displacement) takes ``fallback_heading``,
    normally the direction of its lane.
    """
    frame = frame_of(obs, fallback_heading)
    local_fut = None if fut is None else frame.to_local(fut)
    return frame.to_local(obs), local_fut, frame
