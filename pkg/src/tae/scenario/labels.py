"""Behavior labels computed from observable geometry."""

from __future__ import annotations

import numpy as np

from .types import DT, HEADWAY_BOUNDS, AgentTrack, LaneGraph, Scenario, arc_lengths, project

LEAD_RANGE = 60.0
MIN_SPEED = 0.5
INTENT_WINDOW = 50  # 5 s at 10 Hz
LATERAL_FRAC = 0.5
FORWARD_FRAC = 0.25
HEADING_DEG = 30.0
_CORRIDOR_REACH = 120.0


def lane_corridor(graph: LaneGraph, lane_id: str, reach: float = _CORRIDOR_REACH) -> np.ndarray:
    """Centerline of a lane extended through predecessors and successors.

    Where a lane branches, the continuation with the smallest heading change
    is taken.
    """
    lane = graph[lane_id]
    pts = [lane.pts]

    def straightest(cands, direction, at_start):
        best, best_dot = None, -np.inf
        for cid in cands:
            c = graph[cid].pts
            d = (c[-1] - c[-2]) if at_start else (c[1] - c[0])
            dot = float(np.dot(d, direction) / (np.hypot(*d) * np.hypot(*direction) + 1e-12))
            if dot > best_dot:
                best, best_dot = cid, dot
        return best

    cur, back = lane, 0.0
    seen = {lane.id}
    while cur.pred and back < reach:
        nxt = straightest(cur.pred, cur.pts[1] - cur.pts[0], True)
        if nxt in seen:
            break
        seen.add(nxt)
        cur = graph[nxt]
        pts.insert(0, cur.pts[:-1])
        back += arc_lengths(cur.pts)[-1]
    cur, ahead = lane, 0.0
    while cur.succ and ahead < reach:
        nxt = straightest(cur.succ, cur.pts[-1] - cur.pts[-2], False)
        if nxt in seen:
            break
        seen.add(nxt)
        cur = graph[nxt]
        pts.append(cur.pts[1:])
        ahead += arc_lengths(cur.pts)[-1]
    out = np.concatenate(pts, axis=0)
    keep = np.concatenate([[True], np.hypot(*np.diff(out, axis=0).T) > 1e-9])
    return out[keep]


def compute_headway(scenario: Scenario, agent_id: str) -> float | None:
    """Mean gap-over-speed to the lead vehicle across the observed window.

    The lead is the nearest agent ahead along the follower's lane corridor
    (within half a lane width laterally and ``LEAD_RANGE`` ahead). Returns
    None when a lead is present in fewer than half of the observed steps.
    """
    agent = scenario.agent(agent_id)
    graph = scenario.graph
    corridor = lane_corridor(graph, agent.lane)
    half = graph[agent.lane].width / 2.0
    others = [a for a in scenario.agents if a.id != agent_id]
    if not others:
        return None
    obs = agent.obs
    steps = len(obs) - 1
    me = project(corridor, obs, extend=True)
    other_proj = [project(corridor, o.obs, extend=True) for o in others]
    values = []
    for k in range(1, len(obs)):
        speed = float(np.hypot(*(obs[k] - obs[k - 1]))) / DT
        if speed < MIN_SPEED or abs(me.offset[k]) > half:
            continue
        gap = np.inf
        for p in other_proj:
            ds = p.s[k] - me.s[k]
            if 0.0 < ds <= LEAD_RANGE and abs(p.offset[k]) < half:
                gap = min(gap, ds)
        if np.isfinite(gap):
            values.append(gap / speed)
    if len(values) * 2 < steps:
        return None
    h = float(np.mean(values))
    if not HEADWAY_BOUNDS[0] < h < HEADWAY_BOUNDS[1]:
        return None
    return h


def _heading(v) -> float:
    return float(np.arctan2(v[1], v[0]))


def label_intention(track: AgentTrack, graph: LaneGraph) -> str | None:
    """forward / left / right over the first 5 s of obs+fut, else None."""
    pts = track.full
    if len(pts) < INTENT_WINDOW:
        return None
    pts = pts[:INTENT_WINDOW]
    h0 = pts[4] - pts[0]
    lane_id, _ = graph.nearest(pts[0], h0 if np.hypot(*h0) > 1e-6 else None)
    lane = graph[lane_id]
    width = lane.width
    proj = project(lane.pts, pts[:1], extend=True)
    p0, t0 = proj.foot[0], proj.tangent[0]
    rel = pts - p0
    lateral = t0[0] * rel[:, 1] - t0[1] * rel[:, 0]

    h1 = pts[-1] - pts[-5]
    dtheta = 0.0
    if np.hypot(*h1) > 1e-6:
        dtheta = np.degrees(np.arctan2(t0[0] * h1[1] - t0[1] * h1[0], t0 @ h1))

    net = lateral[-1]
    if abs(net) > LATERAL_FRAC * width:
        big = lateral[np.abs(lateral) > 0.1 * width]
        if np.all(np.sign(big) == np.sign(net)):
            return "left" if net > 0 else "right"
    if abs(dtheta) > HEADING_DEG:
        return "left" if dtheta > 0 else "right"
    if np.max(np.abs(lateral)) < FORWARD_FRAC * width:
        return "forward"
    return None
