"""Minimal SVG scene rendering: lanes, histories, reference and generated futures."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .scenario.types import Scenario

STYLE = """
.lane { stroke: #bbbbbb; stroke-width: 0.3; fill: none; }
.history { stroke: #3060c0; stroke-width: 0.5; fill: none; }
.reference { stroke: #d02020; stroke-width: 0.5; fill: none; }
.generated { stroke: #20a040; stroke-width: 0.4; fill: none; stroke-opacity: 0.8; }
.ego { stroke-width: 0.9; }
"""


def _path(pts, cls, title=None) -> str:
    d = " ".join(f"{x:.2f},{-y:.2f}" for x, y in pts)
    t = f"<title>{escape(title)}</title>" if title else ""
    return f'<polyline class="{cls}" points="{d}">{t}</polyline>'


def scenario_svg(scenario: Scenario, generated: dict[str, np.ndarray] | None = None, margin: float = 10.0) -> str:
    """SVG text. ``generated`` maps agent id -> (K, H, 2) world trajectories."""
    generated = generated or {}
    pts = [a.full for a in scenario.agents] + [g.reshape(-1, 2) for g in generated.values()]
    allp = np.concatenate(pts)
    lo, hi = allp.min(0) - margin, allp.max(0) + margin
    w, h = hi - lo
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{lo[0]:.2f} {-hi[1]:.2f} {w:.2f} {h:.2f}" '
             f'width="{max(200, int(w * 4))}" height="{max(200, int(h * 4))}">', f"<style>{STYLE}</style>"]
    box = (lo - 50, hi + 50)
    for lane in scenario.lanes:
        if np.any(np.all((lane.pts > box[0]) & (lane.pts < box[1]), axis=1)):
            parts.append(_path(lane.pts, "lane", lane.id))
    for a in scenario.agents:
        extra = " ego" if a.ego else ""
        parts.append(_path(a.obs, "history" + extra, f"{a.id} observed"))
        parts.append(_path(np.concatenate([a.obs[-1:], a.fut]), "reference" + extra, f"{a.id} reference"))
        for k, traj in enumerate(generated.get(a.id, [])):
            parts.append(_path(np.concatenate([a.obs[-1:], traj]), "generated", f"{a.id} mode {k}"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, scenario: Scenario, generated=None):
    Path(path).write_text(scenario_svg(scenario, generated))
