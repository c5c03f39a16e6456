from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

INTENTS = ("forward", "left", "right")
OBS_LEN = 20
DT = 0.1
MAX_SPEED = 40.0
MAX_POINT_SPACING = 5.0
HEADWAY_BOUNDS = (0.05, 30.0)


class ScenarioError(ValueError):
    """Invalid scenario content; carries the offending scenario id."""

    def __init__(self, message: str, scenario_id: str | None = None):
        self.scenario_id = scenario_id
        prefix = f"scenario {scenario_id}: " if scenario_id is not None else ""
        super().__init__(prefix + message)


@dataclass
class Lane:
    id: str
    width: float
    pts: np.ndarray
    succ: list[str] = field(default_factory=list)
    pred: list[str] = field(default_factory=list)
    left: str | None = None
    right: str | None = None

    def __eq__(self, other):
        return (isinstance(other, Lane) and self.id == other.id and self.width == other.width
                and np.array_equal(self.pts, other.pts) and self.succ == other.succ
                and self.pred == other.pred and self.left == other.left and self.right == other.right)


@dataclass
class BehaviorLabel:
    intent: str | None = None
    headway: float | None = None


@dataclass
class AgentTrack:
    id: str
    obs: np.ndarray
    fut: np.ndarray
    lane: str
    ego: bool = False
    label: BehaviorLabel = field(default_factory=BehaviorLabel)
    hidden: BehaviorLabel | None = None

    @property
    def horizon(self) -> int:
        return len(self.fut)

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.obs, self.fut], axis=0)

    def __eq__(self, other):
        return (isinstance(other, AgentTrack) and self.id == other.id and self.ego == other.ego
                and np.array_equal(self.obs, other.obs) and np.array_equal(self.fut, other.fut)
                and self.lane == other.lane and self.label == other.label and self.hidden == other.hidden)


class LaneGraph:
    """Lane segments keyed by id, with polyline projection helpers."""

    def __init__(self, lanes: list[Lane]):
        self.lanes = list(lanes)
        self.by_id = {lane.id: lane for lane in self.lanes}
        self.index = {lane.id: i for i, lane in enumerate(self.lanes)}

    def __len__(self):
        return len(self.lanes)

    def __getitem__(self, lane_id: str) -> Lane:
        return self.by_id[lane_id]

    def nearest(self, point, heading=None) -> tuple[str, float]:
        """Closest lane to a point; with a heading, prefer lanes pointing the same way."""
        best, best_d = None, np.inf
        for lane in self.lanes:
            proj = project(lane.pts, np.asarray(point, dtype=float)[None])
            d = float(abs(proj.offset[0]))
            if proj.outside[0]:
                d = float(np.hypot(*(np.asarray(point) - proj.foot[0])))
            if heading is not None and float(np.dot(proj.tangent[0], heading)) < 0.5:
                d += 100.0
            if d < best_d:
                best, best_d = lane.id, d
        return best, best_d


@dataclass
class Scenario:
    id: str
    lanes: list[Lane]
    agents: list[AgentTrack]

    @cached_property
    def graph(self) -> LaneGraph:
        return LaneGraph(self.lanes)

    @property
    def ego(self) -> AgentTrack | None:
        for a in self.agents:
            if a.ego:
                return a
        return None

    def agent(self, agent_id: str) -> AgentTrack:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"scenario {self.id}: no agent {agent_id!r}")

    def __eq__(self, other):
        return (isinstance(other, Scenario) and self.id == other.id
                and self.lanes == other.lanes and self.agents == other.agents)


# --------------------------------------------------------------------------
# polyline geometry


@dataclass
class Projection:
    s: np.ndarray        # arc length of the foot point
    offset: np.ndarray   # signed lateral offset, positive to the left
    foot: np.ndarray     # (n, 2)
    tangent: np.ndarray  # (n, 2) unit
    outside: np.ndarray  # foot clamped to an end point


def arc_lengths(pts: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def project(pts: np.ndarray, points: np.ndarray, extend: bool = False,
            cum: np.ndarray | None = None) -> Projection:
    """Project points onto a polyline.

    With ``extend`` the first and last segments are treated as rays, so
    points beyond the ends get negative or beyond-length arc positions.
    """
    pts = np.asarray(pts, dtype=float)
    points = np.asarray(points, dtype=float)
    a = pts[:-1]
    d = np.diff(pts, axis=0)
    seg_len2 = np.maximum(np.sum(d * d, axis=1), 1e-12)
    rel = points[:, None, :] - a[None, :, :]
    u = np.sum(rel * d[None], axis=2) / seg_len2[None]
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    if extend:
        lo[:, 0] = -np.inf
        hi[:, -1] = np.inf
    uc = np.clip(u, lo, hi)
    foot = a[None] + uc[..., None] * d[None]
    dist2 = np.sum((points[:, None, :] - foot) ** 2, axis=2)
    k = np.argmin(dist2, axis=1)
    rows = np.arange(len(points))
    seg_len = np.sqrt(seg_len2)
    cum = arc_lengths(pts) if cum is None else cum
    s = cum[k] + uc[rows, k] * seg_len[k]
    tangent = d[k] / seg_len[k][:, None]
    f = foot[rows, k]
    r = points - f
    offset = tangent[:, 0] * r[:, 1] - tangent[:, 1] * r[:, 0]
    outside = ((k == 0) & (u[rows, k] < 0)) | ((k == len(d) - 1) & (u[rows, k] > 1))
    return Projection(s, offset, f, tangent, outside)


def point_at(pts: np.ndarray, s: np.ndarray, cum: np.ndarray | None = None):
    """Position and unit tangent at arc lengths ``s`` (extrapolated linearly)."""
    cum = arc_lengths(pts) if cum is None else cum
    s = np.atleast_1d(np.asarray(s, dtype=float))
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(pts) - 2)
    d = pts[k + 1] - pts[k]
    seg = np.maximum(cum[k + 1] - cum[k], 1e-12)
    t = d / seg[:, None]
    return pts[k] + t * (s - cum[k])[:, None], t


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])
