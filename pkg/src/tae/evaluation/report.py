"""Full evaluation pass and its JSON / CSV serialization."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..scenario.labels import compute_headway, label_intention
from ..scenario.types import Scenario
from .dpgmm import THRESHOLDS, dpgmm_cluster
from .inference import decode_modes, infer, mode_scores
from .metrics import behavior_metrics, constant_velocity, displacement_metrics, min_displacement
from .sweep import OFFSETS, sweep_behavior


@dataclass
class EvalReport:
    metrics: dict = field(default_factory=dict)
    clusters: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.config, sort_keys=True).encode()).hexdigest()[:12]

    def to_dict(self):
        return {"metrics": self.metrics, "clusters": self.clusters, "sweep": self.sweep, "config": self.config}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def rows(self):
        """Flat (name, value) pairs."""
        out = sorted(self.metrics.items())
        for kind, counts in sorted(self.clusters.items()):
            out += [(f"clusters/{kind}/{t}", c) for t, c in sorted(counts.items())]
        for row in self.sweep:
            out.append((f"sweep/{row['name']}/risky", row["risky"]))
            out.append((f"sweep/{row['name']}/percent_change", row["percent_change"]))
        return out

    def to_csv(self, path):
        h = self.config_hash()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "value", "config_hash"])
            for name, value in self.rows():
                w.writerow([name, "" if value is None else repr(value), h])


def eligibility(scenarios: list[Scenario]) -> tuple[np.ndarray, np.ndarray]:
    """Agents whose intent / headway label is computable from geometry."""
    im, hm = [], []
    for sc in scenarios:
        for a in sc.agents:
            im.append(label_intention(a, sc.graph) is not None)
            hm.append(compute_headway(sc, a.id) is not None)
    return np.array(im, bool), np.array(hm, bool)


def evaluate(params: dict, scenarios: list[Scenario], agg_offset: float = 1.0, k: int = 6,
             offsets=OFFSETS, with_clusters: bool = True, with_sweep: bool = True, config: dict | None = None) -> EvalReport:
    inf = infer(params, scenarios)
    fut = inf.fut
    cands = decode_modes(params, inf.codes, agg_offset, k)
    ade, fde = displacement_metrics(cands[:, 0], fut)
    min_ade, min_fde = min_displacement(cands, fut)
    frames = inf.frames()
    cv = np.stack([fr.to_local(constant_velocity(a)) for fr, a in zip(frames, (a for s in scenarios for a in s.agents))])
    cv_ade, cv_fde = displacement_metrics(cv, fut)
    scores = mode_scores(params, inf.feats, cands)
    top = cands[np.arange(len(cands)), np.argmax(scores, axis=1)]
    top_ade, top_fde = displacement_metrics(top, fut)
    im, hm = eligibility(scenarios)
    hidden_i = np.concatenate([it.hidden_intent for it in inf.items])
    hidden_h = np.concatenate([it.hidden_headway for it in inf.items])
    beh = behavior_metrics(inf.codes.intent, inf.codes.agg, hidden_i, hidden_h, im, hm)
    metrics = {"ade": ade, "fde": fde, "min_ade": float(min_ade.mean()), "min_fde": float(min_fde.mean()),
               "cv_ade": cv_ade, "cv_fde": cv_fde, "classifier_ade": top_ade, "classifier_fde": top_fde,
               "n_agents": int(len(fut)), "n_scenarios": len(scenarios), **beh}
    report = EvalReport(metrics, config=dict(config or {}, agg_offset=agg_offset, k=k))
    if with_clusters:
        non_ego = ~inf.ego
        ml = dpgmm_cluster(cands[non_ego, 0])
        six = dpgmm_cluster(cands[non_ego].reshape(-1, *cands.shape[2:]))
        report.clusters = {"most_likely": {str(t): ml["counts"][t] for t in THRESHOLDS},
                           "six_mode": {str(t): six["counts"][t] for t in THRESHOLDS}}
        metrics["dpgmm_converged"] = bool(ml["converged"] and six["converged"])
    if with_sweep:
        report.sweep = [r.to_dict() for r in sweep_behavior(params, None, offsets, inference=inf)]
    return report
