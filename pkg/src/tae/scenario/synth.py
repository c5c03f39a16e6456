"""Synthetic urban scenarios with known behavior ground truth.

Two layouts: a three-lane straight road and a four-way intersection with two
lanes per approach. Every agent carries a hidden target time headway drawn
from a truncated log-normal and a hidden intention (forward, left, right).
Longitudinal motion follows a gap/relative-speed controller; lateral motion
is scripted (cosine lane-change profile or a connector turn). Maneuvers begin
inside the observed window so the intention is visible in the history.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..rng import stream
from .labels import compute_headway, label_intention
from .types import (DT, INTENTS, OBS_LEN, AgentTrack, BehaviorLabel, Lane, LaneGraph, Scenario,
                    ScenarioError, arc_lengths, point_at, project, rotation)

log = logging.getLogger(__name__)

LANE_WIDTH = 3.5
POINT_SPACING = 2.5
MIN_CLEARANCE = 3.0
FOLLOW_RANGE = 60.0

# car-following law: a = K_GAP (gap - h v) + K_REL (v_lead - v); free road: K_FREE (v_des - v)
K_GAP = 0.3
K_REL = 0.8
K_FREE = 0.6
ACC_BOUNDS = (-6.0, 2.5)
REFERENCE_HEADWAY = float(np.exp(0.3))


@dataclass
class SynthConfig:
    n: int = 100
    agents: tuple[int, int] = (3, 6)
    intent_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    label_frac: float = 0.3
    horizon: int = 30
    intersection_frac: float = 0.4
    headway_mu: float = 0.30
    headway_sigma: float = 0.55
    headway_range: tuple[float, float] = (0.5, 10.0)
    speed_range: tuple[float, float] = (5.0, 10.0)
    max_retries: int = 60
    seed: int = 0
    id_prefix: str = "s"

    def validate(self):
        lo, hi = self.agents
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (2 <= lo <= hi <= 8):
            raise ValueError(f"agents per scenario must satisfy 2 <= min <= max <= 8, got {self.agents}")
        mix = np.asarray(self.intent_mix, dtype=float)
        if mix.shape != (3,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-6:
            raise ValueError(f"intent mix must be 3 nonnegative weights summing to 1, got {self.intent_mix}")
        if not 0.0 <= self.label_frac <= 1.0:
            raise ValueError("label_frac must be in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.headway_sigma <= 0:
            raise ValueError("headway_sigma must be positive")


def desired_speed(base: float, headway: float) -> float:
    """Free-road target speed; shorter headway (more aggressive) drives faster."""
    return base * float(np.clip((REFERENCE_HEADWAY / headway) ** 0.3, 0.7, 1.4))


def sample_headway(rng, cfg: SynthConfig) -> float:
    lo, hi = cfg.headway_range
    for _ in range(1000):
        h = float(np.exp(cfg.headway_mu + cfg.headway_sigma * rng.standard_normal()))
        if lo <= h <= hi:
            return h
    return float(np.clip(h, lo, hi))


def car_following_accel(gap, v, v_lead, headway, v_des):
    a_free = K_FREE * (v_des - v)
    a = a_free
    if gap is not None:
        a = min(a_free, K_GAP * (gap - headway * v) + K_REL * (v_lead - v))
    return float(np.clip(a, *ACC_BOUNDS))


def simulate_following(headway: float, lead_speed: float, gap0: float, v0: float,
                       duration: float = 60.0, v_des: float | None = None):
    """Follower behind a constant-speed lead; returns (times, gaps, speeds)."""
    v_des = lead_speed * 2.0 if v_des is None else v_des
    steps = int(round(duration / DT))
    gap, v = gap0, v0
    gaps, speeds = [gap], [v]
    for _ in range(steps):
        a = car_following_accel(gap, v, lead_speed, headway, v_des)
        v = max(v + a * DT, 0.0)
        gap += (lead_speed - v) * DT
        gaps.append(gap)
        speeds.append(v)
    return np.arange(steps + 1) * DT, np.array(gaps), np.array(speeds)


# --------------------------------------------------------------------------
# layouts


def _line(p0, p1, spacing=POINT_SPACING):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(int(np.ceil(np.hypot(*(p1 - p0)) / spacing)), 1)
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return p0 + t * (p1 - p0)


def _bezier(p0, c, p1, spacing=1.0):
    p0, c, p1 = (np.asarray(p, float) for p in (p0, c, p1))
    approx = np.hypot(*(c - p0)) + np.hypot(*(p1 - c))
    n = max(int(np.ceil(approx / spacing)), 2)
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * c + t ** 2 * p1


def _link(lanes: dict[str, Lane], a: str, b: str):
    lanes[a].succ.append(b)
    lanes[b].pred.append(a)


def _neighbors(lanes: dict[str, Lane], left: str, right: str):
    lanes[left].right = right
    lanes[right].left = left


def straight_road(n_lanes=3, length=300.0, seg_len=60.0):
    """Lanes indexed 0 (leftmost) .. n-1, all heading +x."""
    lanes: dict[str, Lane] = {}
    n_seg = int(round(length / seg_len))
    centers = [(n_lanes - 1) / 2 * LANE_WIDTH - i * LANE_WIDTH for i in range(n_lanes)]
    for i, y in enumerate(centers):
        for k in range(n_seg):
            lid = f"r{i}s{k}"
            lanes[lid] = Lane(lid, LANE_WIDTH, _line((k * seg_len, y), ((k + 1) * seg_len, y)))
            if k:
                _link(lanes, f"r{i}s{k - 1}", lid)
    for i in range(n_lanes - 1):
        for k in range(n_seg):
            _neighbors(lanes, f"r{i}s{k}", f"r{i + 1}s{k}")
    paths = {i: np.array([[0.0, y], [length, y]]) for i, y in enumerate(centers)}
    return lanes, paths, centers


ARMS = ("S", "E", "N", "W")
BOX = 12.0
ARM_LEN = 80.0


def intersection():
    """Four-way junction. Each arm has two incoming and two outgoing lanes.

    Incoming lane 0 (inner) feeds left-turn and straight connectors; lane 1
    (outer) feeds right-turn and straight connectors. Returns the lanes and,
    per (arm, lane, maneuver), the full driving path polyline.
    """
    lanes: dict[str, Lane] = {}
    half = ARM_LEN / 2
    offsets = (LANE_WIDTH / 2, 3 * LANE_WIDTH / 2)
    geo = {}
    for ai, arm in enumerate(ARMS):
        rot = rotation(ai * np.pi / 2)
        for j, x in enumerate(offsets):
            # arm S frame: incoming heads +y at x>0, outgoing heads -y at x<0
            a0, a1, a2 = np.array([x, -BOX - ARM_LEN]), np.array([x, -BOX - half]), np.array([x, -BOX])
            o0, o1, o2 = np.array([-x, -BOX]), np.array([-x, -BOX - half]), np.array([-x, -BOX - ARM_LEN])
            for name, (p, q) in {f"{arm}in{j}a": (a0, a1), f"{arm}in{j}b": (a1, a2),
                                 f"{arm}out{j}a": (o0, o1), f"{arm}out{j}b": (o1, o2)}.items():
                lanes[name] = Lane(name, LANE_WIDTH, _line(rot @ p, rot @ q))
            _link(lanes, f"{arm}in{j}a", f"{arm}in{j}b")
            _link(lanes, f"{arm}out{j}a", f"{arm}out{j}b")
            geo[(arm, j)] = rot
        _neighbors(lanes, f"{arm}in0a", f"{arm}in1a")
        _neighbors(lanes, f"{arm}in0b", f"{arm}in1b")
        _neighbors(lanes, f"{arm}out0a", f"{arm}out1a")
        _neighbors(lanes, f"{arm}out0b", f"{arm}out1b")

    paths = {}
    for ai, arm in enumerate(ARMS):
        rot = rotation(ai * np.pi / 2)
        across = ARMS[(ai + 2) % 4]
        left_arm = ARMS[(ai + 3) % 4]
        right_arm = ARMS[(ai + 1) % 4]
        for j, x in enumerate(offsets):
            start = rot @ np.array([x, -BOX])
            moves = {"forward": (across, j, None)}
            if j == 0:
                moves["left"] = (left_arm, 0, rot @ np.array([x, x]))
            else:
                moves["right"] = (right_arm, 1, rot @ np.array([x, -x]))
            for intent, (dst_arm, dj, ctrl) in moves.items():
                end = lanes[f"{dst_arm}out{dj}a"].pts[0]
                pts = _line(start, end) if ctrl is None else _bezier(start, ctrl, end)
                cid = f"{arm}{intent[0]}{j}"
                lanes[cid] = Lane(cid, LANE_WIDTH, pts)
                _link(lanes, f"{arm}in{j}b", cid)
                _link(lanes, cid, f"{dst_arm}out{dj}a")
                full = np.concatenate([lanes[f"{arm}in{j}a"].pts, lanes[f"{arm}in{j}b"].pts[1:], pts[1:],
                                       lanes[f"{dst_arm}out{dj}a"].pts[1:], lanes[f"{dst_arm}out{dj}b"].pts[1:]])
                paths[(arm, j, intent)] = full
    return lanes, paths


# --------------------------------------------------------------------------
# simulation


@dataclass
class _Plan:
    intent: str
    headway: float
    path: np.ndarray
    s0: float
    v0: float
    v_des: float
    lc_side: float = 0.0
    lc_start: float = 0.0
    lc_dur: float = 3.0
    leader: int | None = None
    cum: np.ndarray = field(default=None, repr=False)

    def lateral(self, t: float) -> float:
        if self.lc_side == 0.0:
            return 0.0
        u = np.clip((t - self.lc_start) / self.lc_dur, 0.0, 1.0)
        return self.lc_side * LANE_WIDTH * 0.5 * (1.0 - np.cos(np.pi * u))


def _simulate(plans: list[_Plan], steps: int) -> np.ndarray:
    n = len(plans)
    for p in plans:
        p.cum = arc_lengths(p.path)
    s = np.array([p.s0 for p in plans])
    v = np.array([p.v0 for p in plans])
    out = np.zeros((steps, n, 2))

    def positions(t):
        pos = np.zeros((n, 2))
        for i, p in enumerate(plans):
            xy, tan = point_at(p.path, s[i], p.cum)
            normal = np.array([-tan[0, 1], tan[0, 0]])
            pos[i] = xy[0] + normal * p.lateral(t)
        return pos

    for k in range(steps):
        t = k * DT
        pos = positions(t)
        out[k] = pos
        acc = np.zeros(n)
        for i, p in enumerate(plans):
            others = [j for j in range(n) if j != i]
            gap, v_lead = None, 0.0
            if others:
                lo = max(np.searchsorted(p.cum, s[i] - 5.0) - 1, 0)
                hi = min(np.searchsorted(p.cum, s[i] + FOLLOW_RANGE + 5.0) + 1, len(p.cum))
                hi = max(hi, lo + 2)
                proj = project(p.path[lo:hi], pos[others], cum=p.cum[lo:hi] - p.cum[lo])
                proj.s = proj.s + p.cum[lo]
                lat = p.lateral(t)
                for jj, j in enumerate(others):
                    ds = proj.s[jj] - s[i]
                    if 0.0 < ds <= FOLLOW_RANGE and abs(proj.offset[jj] - lat) < LANE_WIDTH / 2 and not proj.outside[jj]:
                        if gap is None or ds < gap:
                            gap, v_lead = ds, v[j]
            acc[i] = car_following_accel(gap, v[i], v_lead, p.headway, p.v_des)
        v = np.maximum(v + acc * DT, 0.0)
        s = s + v * DT
    return out


def _place_straight(rng, intents, headways, cfg: SynthConfig):
    lanes, paths, _ = straight_road()
    allowed = {"forward": (0, 1, 2), "left": (1, 2), "right": (0, 1)}
    by_lane: dict[int, list[int]] = {0: [], 1: [], 2: []}
    for i, intent in enumerate(intents):
        by_lane[int(rng.choice(allowed[intent]))].append(i)
    base = rng.uniform(*cfg.speed_range)
    plans: list[_Plan | None] = [None] * len(intents)
    for lane_idx, members in by_lane.items():
        s_prev = v_prev = vdes_prev = None
        prev = None
        for i in members:
            h = headways[i]
            if prev is None:
                s0 = rng.uniform(100.0, 160.0)
                v0 = base * rng.uniform(0.85, 1.15)
                v_des = desired_speed(base, h)
            else:
                v0 = v_prev * rng.uniform(0.9, 1.1)
                s0 = s_prev - h * v0 * (1.0 + rng.uniform(-0.15, 0.25))
                v_des = max(desired_speed(base, h), vdes_prev + 1.0)
            plan = _Plan(intents[i], h, paths[lane_idx], s0, v0, v_des, leader=prev)
            if intents[i] != "forward":
                plan.lc_side = 1.0 if intents[i] == "left" else -1.0
                plan.lc_start = rng.uniform(0.6, 1.4)
                plan.lc_dur = rng.uniform(2.5, 3.5)
            plans[i] = plan
            s_prev, v_prev, vdes_prev, prev = s0, v0, v_des, i
    return lanes, plans


def _place_intersection(rng, intents, headways, cfg: SynthConfig):
    lanes, paths = intersection()
    n_left = sum(i == "left" for i in intents)
    n_right = sum(i == "right" for i in intents)
    n_arms = max(int(rng.integers(1, 3)), n_left, n_right)
    if n_arms > 4:
        return None
    arms = sorted(rng.choice(4, size=n_arms, replace=False).tolist())
    slots: dict[tuple[str, int], list[int]] = {(ARMS[a], j): [] for a in arms for j in (0, 1)}
    free_inner = [ARMS[a] for a in arms]
    free_outer = [ARMS[a] for a in arms]
    order = sorted(range(len(intents)), key=lambda i: ("left", "right", "forward").index(intents[i]))
    for i in order:
        if intents[i] == "left":
            slots[(free_inner.pop(int(rng.integers(len(free_inner)))), 0)].append(i)
        elif intents[i] == "right":
            slots[(free_outer.pop(int(rng.integers(len(free_outer)))), 1)].append(i)
        else:
            keys = sorted(slots)
            slots[keys[int(rng.integers(len(keys)))]].append(i)
    base = rng.uniform(*cfg.speed_range)
    plans: list[_Plan | None] = [None] * len(intents)
    entry = arc_lengths(np.concatenate([lanes["Sin0a"].pts, lanes["Sin0b"].pts[1:]]))[-1]
    for (arm, j), members in sorted(slots.items()):
        prev = None
        for i in members:
            h = headways[i]
            # only the front agent of a slot turns; followers go straight
            intent = intents[i] if prev is None else "forward"
            path = paths[(arm, j, intent)]
            turning = intent != "forward"
            if prev is None:
                v0 = base * rng.uniform(0.85, 1.15)
                v_des = desired_speed(base, h)
                if turning:
                    v0, v_des = min(v0, 7.0), min(v_des, 7.0)
                    s0 = entry - v0 * rng.uniform(0.6, 1.4)
                else:
                    s0 = entry - v0 * rng.uniform(-0.5, 2.0)
            else:
                p = plans[prev]
                v0 = p.v0 * rng.uniform(0.9, 1.1)
                s0 = p.s0 - h * v0 * (1.0 + rng.uniform(-0.15, 0.25))
                v_des = max(desired_speed(base, h), p.v_des + 1.0)
            if s0 < 0.0:
                return None
            plans[i] = _Plan(intent, h, path, s0, v0, v_des, leader=prev)
            prev = i
    return lanes, plans


def _attempt(rng, cfg: SynthConfig, scenario_id: str, n_agents: int):
    intents = [INTENTS[k] for k in rng.choice(3, size=n_agents, p=np.asarray(cfg.intent_mix, float))]
    headways = [sample_headway(rng, cfg) for _ in range(n_agents)]
    placed = None
    if rng.uniform() < cfg.intersection_frac:
        placed = _place_intersection(rng, intents, headways, cfg)
    if placed is None:
        placed = _place_straight(rng, intents, headways, cfg)
    lanes, plans = placed
    steps = OBS_LEN + cfg.horizon
    xy = _simulate(plans, steps)
    diff = xy[:, :, None, :] - xy[:, None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    dist[:, np.arange(n_agents), np.arange(n_agents)] = np.inf
    if dist.min() < MIN_CLEARANCE:
        return None
    theta = rng.uniform(0.0, 2 * np.pi)
    shift = rng.uniform(-500.0, 500.0, size=2)
    rot = rotation(theta)
    lane_list = [Lane(l.id, l.width, l.pts @ rot.T + shift, list(l.succ), list(l.pred), l.left, l.right)
                 for l in lanes.values()]
    world = xy @ rot.T + shift
    graph = LaneGraph(lane_list)
    followers = [i for i, p in enumerate(plans) if p.leader is not None]
    ego = int(rng.choice(followers)) if followers else int(rng.integers(n_agents))
    agents = []
    for i, p in enumerate(plans):
        track = world[:, i, :]
        heading = track[OBS_LEN - 1] - track[OBS_LEN - 2]
        lane_id, _ = graph.nearest(track[OBS_LEN - 1], heading)
        agents.append(AgentTrack(
            id=f"a{i}", obs=track[:OBS_LEN].copy(), fut=track[OBS_LEN:].copy(), lane=lane_id,
            ego=(i == ego), hidden=BehaviorLabel(p.intent, p.headway)))
    scenario = Scenario(scenario_id, lane_list, agents)
    reveal = rng.uniform(size=n_agents) < cfg.label_frac
    for i, a in enumerate(agents):
        if reveal[i]:
            a.label = BehaviorLabel(label_intention(a, graph), compute_headway(scenario, a.id))
    return scenario


def generate_one(cfg: SynthConfig, index: int) -> Scenario:
    rng = stream(cfg.seed, "scenario", index)
    lo, hi = cfg.agents
    n_agents = int(rng.integers(lo, hi + 1))
    sid = f"{cfg.id_prefix}{index:05d}"
    for attempt in range(cfg.max_retries):
        scenario = _attempt(rng, cfg, sid, n_agents)
        if scenario is not None:
            return scenario
    raise ScenarioError(f"no feasible spawn after {cfg.max_retries} attempts", sid)


def synth_generate(cfg: SynthConfig) -> list[Scenario]:
    cfg.validate()
    return [generate_one(cfg, i) for i in range(cfg.n)]
