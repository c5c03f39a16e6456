"""Versioned JSON persistence for scenarios.

Layout::

    {"version": 1, "scenarios": [{"id", "lanes": [...], "agents": [...]}]}

Floats are written with Python's shortest round-trip repr, so save/load is
lossless.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .types import (HEADWAY_BOUNDS, INTENTS, MAX_POINT_SPACING, MAX_SPEED, OBS_LEN, DT, AgentTrack,
                    BehaviorLabel, Lane, Scenario, ScenarioError)

FORMAT_VERSION = 1


def _pts(a: np.ndarray) -> list:
    return [[float(x), float(y)] for x, y in a]


def _label(label: BehaviorLabel) -> dict:
    out = {}
    if label.intent is not None:
        out["intent"] = label.intent
    if label.headway is not None:
        out["headway"] = float(label.headway)
    return out


def scenario_to_dict(sc: Scenario) -> dict:
    lanes = [{"id": l.id, "width": float(l.width), "pts": _pts(l.pts), "succ": list(l.succ),
              "pred": list(l.pred), "left": l.left, "right": l.right} for l in sc.lanes]
    agents = []
    for a in sc.agents:
        d = {"id": a.id, "ego": bool(a.ego), "obs": _pts(a.obs), "fut": _pts(a.fut), "lane": a.lane,
             "label": _label(a.label)}
        if a.hidden is not None:
            d["hidden"] = {"intent": a.hidden.intent, "headway": float(a.hidden.headway)}
        agents.append(d)
    return {"id": sc.id, "lanes": lanes, "agents": agents}


def _array(raw, what: str, sid) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ScenarioError(f"{what}: expected a list of [x, y] points", sid)
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{what}: non-finite coordinate", sid)
    return arr


def _read_label(raw: dict, what: str, sid) -> BehaviorLabel:
    intent = raw.get("intent")
    headway = raw.get("headway")
    if intent is not None and intent not in INTENTS:
        raise ScenarioError(f"{what}: unknown intent {intent!r}", sid)
    if headway is not None:
        headway = float(headway)
        if not HEADWAY_BOUNDS[0] < headway < HEADWAY_BOUNDS[1]:
            raise ScenarioError(f"{what}: headway {headway} outside {HEADWAY_BOUNDS}", sid)
    return BehaviorLabel(intent, headway)


def scenario_from_dict(raw: dict, horizon: int | None = None) -> Scenario:
    sid = raw.get("id")
    try:
        lanes = [Lane(str(l["id"]), float(l["width"]), _array(l["pts"], f"lane {l['id']}", sid),
                      list(l.get("succ", [])), list(l.get("pred", [])), l.get("left"), l.get("right"))
                 for l in raw["lanes"]]
        agents = []
        for a in raw["agents"]:
            agents.append(AgentTrack(
                id=str(a["id"]), obs=_array(a["obs"], f"track {a['id']} obs", sid),
                fut=_array(a["fut"], f"track {a['id']} fut", sid), lane=str(a["lane"]), ego=bool(a.get("ego", False)),
                label=_read_label(a.get("label", {}), f"track {a['id']} label", sid),
                hidden=None if a.get("hidden") is None else _read_label(a["hidden"], f"track {a['id']} hidden", sid)))
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed record: {exc!r}", sid) from exc
    sc = Scenario(str(sid), lanes, agents)
    validate_scenario(sc, horizon)
    return sc


def validate_scenario(sc: Scenario, horizon: int | None = None):
    sid = sc.id
    ids = {l.id for l in sc.lanes}
    if len(ids) != len(sc.lanes):
        raise ScenarioError("duplicate lane id", sid)
    for l in sc.lanes:
        if len(l.pts) < 2:
            raise ScenarioError(f"lane {l.id}: needs at least 2 points", sid)
        if np.max(np.hypot(*np.diff(l.pts, axis=0).T)) > MAX_POINT_SPACING + 1e-9:
            raise ScenarioError(f"lane {l.id}: centerline points more than {MAX_POINT_SPACING} m apart", sid)
        for ref in list(l.succ) + list(l.pred) + [l.left, l.right]:
            if ref is not None and ref not in ids:
                raise ScenarioError(f"lane {l.id}: unknown neighbor {ref!r}", sid)
    by_id = {l.id: l for l in sc.lanes}
    for l in sc.lanes:
        if l.left is not None and by_id[l.left].right != l.id:
            raise ScenarioError(f"lane {l.id}: left neighbor {l.left} is not mutual", sid)
        if l.right is not None and by_id[l.right].left != l.id:
            raise ScenarioError(f"lane {l.id}: right neighbor {l.right} is not mutual", sid)
    if len(sc.agents) < 2:
        raise ScenarioError("at least 2 agents required", sid)
    if len({a.id for a in sc.agents}) != len(sc.agents):
        raise ScenarioError("duplicate agent id", sid)
    horizons = {a.horizon for a in sc.agents}
    for a in sc.agents:
        if len(a.obs) != OBS_LEN:
            raise ScenarioError(f"track {a.id}: {len(a.obs)} observed waypoints, expected {OBS_LEN}", sid)
        if horizon is not None and a.horizon != horizon:
            raise ScenarioError(f"track {a.id}: {a.horizon} future waypoints, expected {horizon}", sid)
        if len(horizons) != 1:
            raise ScenarioError(f"track {a.id}: inconsistent future length", sid)
        if a.lane not in ids:
            raise ScenarioError(f"track {a.id}: unknown lane {a.lane!r}", sid)
        steps = np.hypot(*np.diff(a.full, axis=0).T)
        if steps.size and steps.max() / DT > MAX_SPEED + 1e-9:
            raise ScenarioError(f"track {a.id}: speed above {MAX_SPEED} m/s", sid)


def save_scenarios(path, scenarios: list[Scenario]):
    doc = {"version": FORMAT_VERSION, "scenarios": [scenario_to_dict(s) for s in scenarios]}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
    os.replace(tmp, path)


def load_scenarios(path, horizon: int | None = None) -> list[Scenario]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise ScenarioError(f"{path}: missing format version")
    if doc["version"] != FORMAT_VERSION:
        raise ScenarioError(f"{path}: unsupported format version {doc['version']!r} (expected {FORMAT_VERSION})")
    return [scenario_from_dict(raw, horizon) for raw in doc.get("scenarios", [])]
