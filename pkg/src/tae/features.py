"""Context feature extraction.

History branch: causal dilated 1-D convolutions (dilations 1, 2, 4) over
each agent's canonical-frame step displacements. Map/interaction branch: two
rounds of message passing over a graph whose nodes are lane segments and
agents. Fusion: single-head dot-product attention from every agent over its
incoming edges, concatenated with both branches and projected to width D.

Every geometric quantity fed to the network is expressed in the frame of the
receiving node, so the features do not change under a rigid motion of the
whole scenario.

Graph preparation depends only on the scenario and is done once
(:func:`prepare`); :func:`extract` is the differentiable part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .scenario.frame import Frame, frame_of
from .scenario.labels import compute_headway, label_intention
from .scenario.types import DT, INTENTS, OBS_LEN, Scenario, arc_lengths, project

LANE_RADIUS = 20.0
AGENT_RADIUS = 30.0
DILATIONS = (1, 2, 4)
KERNEL = 3
POS_SCALE = 20.0
VEL_SCALE = 10.0

EDGE_TYPES = ("succ", "pred", "left", "right", "lane_agent", "agent_lane", "agent_agent")
LANE_FEATS = 8
EDGE_FEATS = len(EDGE_TYPES) + 8
GAP_CLIP = 10.0  # s, time-gap edge cue range
MIN_SPEED = 1.0  # m/s floor when dividing by the receiver speed


@dataclass
class Graph:
    """Edges over nodes [lanes..., agents...], sorted by (dst, src key)."""

    n_lanes: int
    n_agents: int
    src: np.ndarray
    dst: np.ndarray
    kind: np.ndarray
    feats: np.ndarray

    def count(self, kind: str) -> int:
        return int(np.sum(self.kind == EDGE_TYPES.index(kind)))


@dataclass
class Prepared:
    """Parameter-independent arrays for one scenario."""

    scenario_id: str
    agent_ids: list[str]
    ego: np.ndarray           # (A,) bool
    hist: np.ndarray          # (A, T, 2) canonical step displacements
    flag: np.ndarray          # (A, 1) no lane within LANE_RADIUS
    lane_feats: np.ndarray    # (L, LANE_FEATS)
    graph: Graph
    frames: list[Frame]
    fut: np.ndarray           # (A, H, 2) canonical future
    label_intent: np.ndarray  # (A,) class index or -1
    label_headway: np.ndarray  # (A,) seconds or nan
    hidden_intent: np.ndarray
    hidden_headway: np.ndarray

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)


def _rot(c, s, v):
    """Rotate world vectors into a frame with heading (c, s)."""
    v = np.asarray(v, dtype=float)
    return np.stack([c * v[..., 0] + s * v[..., 1], -s * v[..., 0] + c * v[..., 1]], axis=-1)


def _lane_frame(pts):
    mid = len(pts) // 2
    k = min(mid, len(pts) - 2)
    t = pts[k + 1] - pts[k]
    t = t / np.hypot(*t)
    return pts[mid], t


def _lane_features(lane, n_succ, n_pred):
    pts = lane.pts
    t0 = pts[1] - pts[0]
    t1 = pts[-1] - pts[-2]
    a0, a1 = np.arctan2(t0[1], t0[0]), np.arctan2(t1[1], t1[0])
    turn = a1 - a0
    return np.array([arc_lengths(pts)[-1] / 50.0, lane.width / 3.5, np.cos(turn), np.sin(turn),
                     n_succ / 3.0, n_pred / 3.0, float(lane.left is not None), float(lane.right is not None)])


def _onehot(kind):
    v = np.zeros(len(EDGE_TYPES))
    v[EDGE_TYPES.index(kind)] = 1.0
    return v


def graph_build(scenario: Scenario, frames: list[Frame] | None = None) -> tuple[Graph, np.ndarray]:
    """Edge lists with radii LANE_RADIUS (agent-lane) and AGENT_RADIUS (agent-agent).

    Returns the graph and the per-agent "no lane in range" flag.
    """
    lanes = scenario.lanes
    agents = scenario.agents
    L, A = len(lanes), len(agents)
    index = {l.id: i for i, l in enumerate(lanes)}
    if frames is None:
        frames = [_agent_frame(scenario, a) for a in agents]
    pos = np.array([a.obs[-1] for a in agents])
    vel = np.array([(a.obs[-1] - a.obs[-2]) / DT for a in agents])
    speed = [np.hypot(*np.diff(a.obs, axis=0).T) / DT for a in agents]
    half = [scenario.graph[a.lane].width / 2.0 for a in agents]
    lane_mid, lane_tan = zip(*[_lane_frame(l.pts) for l in lanes])
    lane_mid, lane_tan = np.array(lane_mid), np.array(lane_tan)
    lane_len = [arc_lengths(l.pts) for l in lanes]

    edges = []  # (dst, src_key, src, kind, feats)

    def add(dst, src, src_key, kind, rel_pos, rel_head, rel_vel=(0.0, 0.0), gap=0.0, lead=0.0):
        f = np.concatenate([_onehot(kind), np.asarray(rel_pos) / POS_SCALE,
                            [np.cos(rel_head), np.sin(rel_head)], np.asarray(rel_vel) / VEL_SCALE,
                            [gap / GAP_CLIP, lead]])
        edges.append((dst, src_key, src, EDGE_TYPES.index(kind), f))

    def lane_key(j):
        return (0, j, "")

    def agent_key(a):
        return (1, 0, agents[a].id)

    for i, lane in enumerate(lanes):
        c, s = lane_tan[i]
        hi = np.arctan2(s, c)
        for kind, refs in (("succ", lane.succ), ("pred", lane.pred), ("left", [lane.left]), ("right", [lane.right])):
            for ref in refs:
                if ref is None:
                    continue
                j = index[ref]
                rel = _rot(c, s, lane_mid[j] - lane_mid[i])
                add(i, j, lane_key(j), kind, rel, np.arctan2(lane_tan[j][1], lane_tan[j][0]) - hi)

    flag = np.zeros((A, 1))
    for a, agent in enumerate(agents):
        fr = frames[a]
        p = pos[a][None]
        projs = [project(l.pts, p, cum=lane_len[j]) for j, l in enumerate(lanes)]
        dist = np.array([np.hypot(*(pos[a] - pr.foot[0])) for pr in projs])
        near = np.flatnonzero(dist <= LANE_RADIUS)
        if near.size == 0:
            near = np.array([int(np.argmin(dist))])
            flag[a, 0] = 1.0
        ah = np.arctan2(fr.sin, fr.cos)
        for j in near:
            pr = projs[j]
            tc, ts = pr.tangent[0]
            th = np.arctan2(ts, tc)
            s_mid = project(lanes[j].pts, lane_mid[j][None], cum=lane_len[j]).s[0]
            # agent -> lane, in the lane frame at the foot point
            add(j, L + a, agent_key(a), "agent_lane", [(pr.s[0] - s_mid), pr.offset[0]], ah - th,
                _rot(tc, ts, vel[a]))
            # lane -> agent, in the agent frame
            add(L + a, j, lane_key(j), "lane_agent", fr.to_local(pr.foot)[0], th - ah)
    for a in range(A):
        fa = frames[a]
        ah = np.arctan2(fa.sin, fa.cos)
        for b in range(A):
            if a == b or np.hypot(*(pos[a] - pos[b])) > AGENT_RADIUS:
                continue
            fb = frames[b]
            rel = fa.to_local(pos[b][None])[0]
            # time the receiver needs to cover the longitudinal offset, averaged over the history
            d = fa.vec_to_local(agents[b].obs[1:] - agents[a].obs[1:])
            gap = np.clip(d[:, 0] / np.maximum(speed[a], MIN_SPEED), -GAP_CLIP, GAP_CLIP).mean()
            # share of the history where b sits ahead inside a's lane
            lead = np.mean((d[:, 0] > 0.0) & (np.abs(d[:, 1]) < half[a]))
            add(L + a, L + b, agent_key(b), "agent_agent", rel, np.arctan2(fb.sin, fb.cos) - ah,
                fa.vec_to_local(vel[b] - vel[a]), gap, lead)

    edges.sort(key=lambda e: (e[0], e[1]))
    graph = Graph(L, A,
                  np.array([e[2] for e in edges], dtype=np.int64),
                  np.array([e[0] for e in edges], dtype=np.int64),
                  np.array([e[3] for e in edges], dtype=np.int64),
                  np.array([e[4] for e in edges]).reshape(len(edges), EDGE_FEATS))
    return graph, flag


def _agent_frame(scenario: Scenario, agent) -> Frame:
    lane = scenario.graph[agent.lane]
    fallback = project(lane.pts, agent.obs[-1][None]).tangent[0]
    return frame_of(agent.obs, fallback)


def prepare(scenario: Scenario, with_labels_from_geometry: bool = False) -> Prepared:
    agents = scenario.agents
    frames = [_agent_frame(scenario, a) for a in agents]
    hist = np.zeros((len(agents), OBS_LEN, 2))
    fut = np.zeros((len(agents), agents[0].horizon, 2))
    for a, agent in enumerate(agents):
        local = frames[a].to_local(agent.obs)
        hist[a, 1:] = np.diff(local, axis=0)
        fut[a] = frames[a].to_local(agent.fut)
    graph, flag = graph_build(scenario, frames)
    n_succ = [len(l.succ) for l in scenario.lanes]
    n_pred = [len(l.pred) for l in scenario.lanes]
    lane_feats = np.array([_lane_features(l, ns, npd) for l, ns, npd in zip(scenario.lanes, n_succ, n_pred)])

    def intent_idx(x):
        return -1 if x is None else INTENTS.index(x)

    label_intent = np.array([intent_idx(a.label.intent) for a in agents])
    label_headway = np.array([np.nan if a.label.headway is None else a.label.headway for a in agents])
    hidden_intent = np.array([intent_idx(a.hidden.intent) if a.hidden else -1 for a in agents])
    hidden_headway = np.array([a.hidden.headway if a.hidden else np.nan for a in agents])
    return Prepared(scenario.id, [a.id for a in agents], np.array([a.ego for a in agents]), hist, flag,
                    lane_feats, graph, frames, fut, label_intent, label_headway, hidden_intent, hidden_headway)


@dataclass
class Batch:
    items: list[Prepared]
    hist: np.ndarray
    flag: np.ndarray
    lane_feats: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_feats: np.ndarray
    n_nodes: int
    lane_nodes: np.ndarray    # node index of every lane
    agent_nodes: np.ndarray   # node index of every agent
    agent_edges: np.ndarray   # edge indices whose dst is an agent
    agent_edge_dst: np.ndarray  # agent row (0..N-1) of those edges
    inv_deg: np.ndarray       # (n_nodes, 1)
    fut: np.ndarray
    label_intent: np.ndarray
    label_headway: np.ndarray
    hidden_intent: np.ndarray
    hidden_headway: np.ndarray
    agent_slices: list[slice]

    @property
    def n_agents(self) -> int:
        return len(self.hist)


def collate(items: list[Prepared]) -> Batch:
    """Stack scenarios into one block-diagonal graph.

    Node order: all nodes of scenario 0 (lanes then agents), then scenario 1...
    """
    src, dst, feats, lane_nodes, agent_nodes, slices = [], [], [], [], [], []
    node_off = agent_off = 0
    for it in items:
        L, A = it.graph.n_lanes, it.graph.n_agents
        src.append(it.graph.src + node_off)
        dst.append(it.graph.dst + node_off)
        feats.append(it.graph.feats)
        lane_nodes.append(node_off + np.arange(L))
        agent_nodes.append(node_off + L + np.arange(A))
        slices.append(slice(agent_off, agent_off + A))
        node_off += L + A
        agent_off += A
    src, dst = np.concatenate(src), np.concatenate(dst)
    agent_nodes = np.concatenate(agent_nodes)
    node_to_agent = np.full(node_off, -1)
    node_to_agent[agent_nodes] = np.arange(len(agent_nodes))
    agent_edges = np.flatnonzero(node_to_agent[dst] >= 0)
    deg = np.bincount(dst, minlength=node_off).astype(float)
    cat = np.concatenate
    return Batch(items, cat([it.hist for it in items]), cat([it.flag for it in items]),
                 cat([it.lane_feats for it in items]), src, dst, cat(feats), node_off,
                 cat(lane_nodes), agent_nodes, agent_edges, node_to_agent[dst[agent_edges]],
                 (1.0 / np.maximum(deg, 1.0))[:, None],
                 cat([it.fut for it in items]), cat([it.label_intent for it in items]),
                 cat([it.label_headway for it in items]), cat([it.hidden_intent for it in items]),
                 cat([it.hidden_headway for it in items]), slices)


# --------------------------------------------------------------------------
# parameters and network


def init_params(rng, width: int = 32, hidden: int = 32) -> dict[str, np.ndarray]:
    def lin(fan_in, fan_out):
        bound = np.sqrt(6.0 / fan_in) * 0.5
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)

    h = hidden
    p = {}
    c_in = 2
    for i, d in enumerate(DILATIONS):
        bound = np.sqrt(6.0 / (KERNEL * c_in)) * 0.5
        p[f"ext/conv{i}/w"] = rng.uniform(-bound, bound, size=(KERNEL, c_in, h)).astype(np.float32)
        p[f"ext/conv{i}/b"] = np.zeros(h, np.float32)
        c_in = h
    p["ext/agent_in/w"] = lin(h + 1, h)
    p["ext/agent_in/b"] = np.zeros(h, np.float32)
    p["ext/lane_in/w"] = lin(LANE_FEATS, h)
    p["ext/lane_in/b"] = np.zeros(h, np.float32)
    for r in range(2):
        p[f"ext/mp{r}/msg/w"] = lin(h + EDGE_FEATS, h)
        p[f"ext/mp{r}/msg/b"] = np.zeros(h, np.float32)
        p[f"ext/mp{r}/self/w"] = lin(h, h)
        p[f"ext/mp{r}/agg/w"] = lin(h, h)
        p[f"ext/mp{r}/b"] = np.zeros(h, np.float32)
    p["ext/att/q"] = lin(h, h)
    p["ext/att/k"] = lin(h + EDGE_FEATS, h)
    p["ext/att/v"] = lin(h + EDGE_FEATS, h)
    p["ext/out/w"] = lin(3 * h, width)
    p["ext/out/b"] = np.zeros(width, np.float32)
    return p


class Params:
    """Registers named arrays on a tape, as params or frozen constants."""

    def __init__(self, tape: ad.Tape, values: dict[str, np.ndarray], frozen=()):
        self.tape = tape
        self.values = values
        self.frozen = tuple(frozen)

    def __call__(self, name: str) -> ad.Var:
        if any(name.startswith(f) for f in self.frozen):
            return self.tape.const(self.values[name])
        return self.tape.param(name, self.values[name])


def extract(P: Params, batch: Batch) -> ad.Var:
    """Features (n_agents, width) for every agent in the batch."""
    tape = P.tape
    x = tape.const(batch.hist)
    for i, d in enumerate(DILATIONS):
        x = ad.relu(ad.conv1d(x, P(f"ext/conv{i}/w"), d) + P(f"ext/conv{i}/b"))
    hist = x[:, -1, :]
    agent_h = ad.relu(ad.dense(ad.concat([hist, tape.const(batch.flag)], axis=1),
                               P("ext/agent_in/w"), P("ext/agent_in/b")))
    lane_h = ad.relu(ad.dense(tape.const(batch.lane_feats), P("ext/lane_in/w"), P("ext/lane_in/b")))

    # scatter both node kinds into one node table
    n_lane, n_agent = len(batch.lane_nodes), len(batch.agent_nodes)
    order = np.empty(batch.n_nodes, dtype=np.int64)
    order[batch.lane_nodes] = np.arange(n_lane)
    order[batch.agent_nodes] = n_lane + np.arange(n_agent)
    h = ad.gather(ad.concat([lane_h, agent_h], axis=0), order)

    ef = tape.const(batch.edge_feats)
    for r in range(2):
        msg = ad.relu(ad.dense(ad.concat([ad.gather(h, batch.src), ef], axis=1),
                               P(f"ext/mp{r}/msg/w"), P(f"ext/mp{r}/msg/b")))
        agg = ad.segment_sum(msg, batch.dst, batch.n_nodes) * tape.const(batch.inv_deg)
        h = ad.relu(h @ P(f"ext/mp{r}/self/w") + agg @ P(f"ext/mp{r}/agg/w") + P(f"ext/mp{r}/b"))

    gnn = ad.gather(h, batch.agent_nodes)
    e_idx = batch.agent_edges
    kv_in = ad.concat([ad.gather(h, batch.src[e_idx]), tape.const(batch.edge_feats[e_idx])], axis=1)
    q = agent_h @ P("ext/att/q")
    k = kv_in @ P("ext/att/k")
    v = kv_in @ P("ext/att/v")
    score = ad.vsum(ad.gather(q, batch.agent_edge_dst) * k, axis=1) * (1.0 / np.sqrt(q.shape[1]))
    alpha = ad.segment_softmax(score, batch.agent_edge_dst, n_agent)
    att = ad.segment_sum(v * ad.reshape(alpha, (-1, 1)), batch.agent_edge_dst, n_agent)
    fused = ad.concat([agent_h, gnn, att], axis=1)
    return ad.dense(fused, P("ext/out/w"), P("ext/out/b"))


def extract_values(scenario_or_batch, params: dict[str, np.ndarray]) -> np.ndarray:
    batch = scenario_or_batch
    if isinstance(batch, Scenario):
        batch = collate([prepare(batch)])
    tape = ad.Tape()
    return extract(Params(tape, params), batch).value
