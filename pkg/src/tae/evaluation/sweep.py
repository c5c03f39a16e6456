"""Safety-critical sweep over the aggressiveness code and forced intents.

The ego replays its reference future; every other agent is re-generated from
its own (modified) code. A scenario is risky when some agent comes closer
than the threshold to the ego at any future step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import model as M
from .inference import Inference, decode_codes, infer

OFFSETS = (-3.0, -2.0, -1.0, 0.5, 1.0, 1.5)
FORCED_INTENTS = ("left", "right")
RISK_DISTANCE = 0.5


@dataclass
class SweepRow:
    name: str
    offset: float
    intent: str | None
    risky: int
    percent_change: float | None

    def to_dict(self):
        return dict(self.__dict__)


def min_ego_distance(inf: Inference, params: dict, agg_delta: float = 0.0, intent: str | None = None) -> np.ndarray:
    """Per-scenario minimum ego-to-agent distance over the horizon (inf if no ego)."""
    codes = inf.codes
    ego = inf.ego
    if agg_delta != 0.0 or intent is not None:
        mod = M.modify_codes(codes, agg_delta, intent)
        keep = ego
        codes = M.LatentCode(np.where(keep[:, None], codes.intent, mod.intent), np.where(keep, codes.agg, mod.agg),
                             codes.gauss.copy())
    local = decode_codes(params, codes)
    out = np.full(len(inf.items), np.inf)
    for s, (it, sl) in enumerate(zip(inf.items, inf.slices)):
        if not it.ego.any():
            continue
        e = int(np.flatnonzero(it.ego)[0])
        ego_path = it.frames[e].to_world(it.fut[e])
        for a in range(it.n_agents):
            if a == e:
                continue
            path = it.frames[a].to_world(local[sl][a])
            out[s] = min(out[s], float(np.min(np.hypot(*(path - ego_path).T))))
    return out


def percent_change(count: int, base: int) -> float | None:
    if base == 0:
        return 0.0 if count == 0 else None
    return 100.0 * (count - base) / base


def sweep_behavior(params: dict, data, offsets=OFFSETS, intents=FORCED_INTENTS, threshold: float = RISK_DISTANCE,
                   inference: Inference | None = None) -> list[SweepRow]:
    """Baseline row, one row per offset, one row per forced intent."""
    inf = inference if inference is not None else infer(params, data)
    base = int(np.sum(min_ego_distance(inf, params) < threshold))
    rows = [SweepRow("baseline", 0.0, None, base, 0.0)]
    for d in offsets:
        n = int(np.sum(min_ego_distance(inf, params, float(d)) < threshold))
        rows.append(SweepRow(f"agg{d:+g}", float(d), None, n, percent_change(n, base)))
    for name in intents or ():
        n = int(np.sum(min_ego_distance(inf, params, 0.0, name) < threshold))
        rows.append(SweepRow(f"intent:{name}", 0.0, name, n, percent_change(n, base)))
    return rows
