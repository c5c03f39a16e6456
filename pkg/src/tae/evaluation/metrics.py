"""Displacement and behavior metrics, plus the constant-velocity baseline."""

from __future__ import annotations

import numpy as np

from ..scenario.types import INTENTS, AgentTrack, Scenario


def displacement_metrics(pred, truth) -> tuple[float, float]:
    """ADE and FDE of (..., H, 2) arrays; leading axes are averaged."""
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.ndim < 2 or pred.shape[-2] == 0:
        raise ValueError("empty trajectory")
    err = np.hypot(pred[..., 0] - truth[..., 0], pred[..., 1] - truth[..., 1])
    return float(err.mean()), float(err[..., -1].mean())


def min_displacement(cands, truth) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample minADE and minFDE over K candidates.

    ``cands`` is (N, K, H, 2), ``truth`` (N, H, 2).
    """
    cands, truth = np.asarray(cands, dtype=float), np.asarray(truth, dtype=float)
    if cands.shape[-2] == 0:
        raise ValueError("empty trajectory")
    err = np.linalg.norm(cands - truth[:, None], axis=-1)
    return err.mean(axis=2).min(axis=1), err[:, :, -1].min(axis=1)


def constant_velocity(track: AgentTrack, horizon: int | None = None) -> np.ndarray:
    obs = np.asarray(track.obs, dtype=float)
    if len(obs) < 2:
        raise ValueError("need at least 2 observed points")
    h = track.horizon if horizon is None else horizon
    step = obs[-1] - obs[-2]
    return obs[-1] + step * np.arange(1, h + 1)[:, None]


def constant_velocity_baseline(scenario: Scenario, horizon: int | None = None) -> dict[str, np.ndarray]:
    return {a.id: constant_velocity(a, horizon) for a in scenario.agents}


def behavior_metrics(intent_probs, agg, hidden_intent, hidden_headway, intent_mask=None, headway_mask=None) -> dict:
    """Intent accuracy and headway MSE against hidden truth.

    ``hidden_intent`` holds class indices or names; masks select the
    eligible agents (default: every agent with a finite truth value).
    The predict-the-mean baseline MSE equals the truth variance.
    """
    intent_probs = np.asarray(intent_probs, dtype=float)
    hi = np.asarray([INTENTS.index(x) if isinstance(x, str) else int(x) for x in hidden_intent])
    hh = np.asarray(hidden_headway, dtype=float)
    agg = np.asarray(agg, dtype=float).reshape(-1)
    im = (hi >= 0) if intent_mask is None else np.asarray(intent_mask, bool) & (hi >= 0)
    hm = np.isfinite(hh) if headway_mask is None else np.asarray(headway_mask, bool) & np.isfinite(hh)
    out = {"n_intent": int(im.sum()), "n_headway": int(hm.sum())}
    out["intent_accuracy"] = float(np.mean(np.argmax(intent_probs[im], axis=1) == hi[im])) if im.any() else float("nan")
    if hm.any():
        truth = hh[hm]
        out["agg_mse"] = float(np.mean((agg[hm] - truth) ** 2))
        out["agg_baseline_mse"] = float(np.var(truth))
    else:
        out["agg_mse"] = out["agg_baseline_mse"] = float("nan")
    return out

