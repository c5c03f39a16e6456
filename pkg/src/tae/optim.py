"""Adam with float32 state so checkpoints are bit-exact."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              learning_rate: float, clip_norm: float | None = None):
    """One bias-corrected Adam update over the parameters present in ``grads``.

    Returns ``(new_params, new_state)``; inputs are not modified. Parameters
    missing from ``grads`` are carried over untouched.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")

    scale = 1.0
    if clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
        if total > clip_norm:
            scale = clip_norm / total

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_params = dict(params)
    new_m = dict(state.m)
    new_v = dict(state.v)
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64) * scale
        m = np.asarray(state.m.get(name, np.zeros(g.shape, np.float32)), dtype=np.float64)
        v = np.asarray(state.v.get(name, np.zeros(g.shape, np.float32)), dtype=np.float64)
        m = (b1 * m + (1.0 - b1) * g).astype(np.float32)
        v = (b2 * v + (1.0 - b2) * g * g).astype(np.float32)
        m_hat = m.astype(np.float64) / corr1
        v_hat = v.astype(np.float64) / corr2
        p = params[name].astype(np.float64) - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        new_params[name] = p.astype(np.float32)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(b1, b2, state.eps, t, new_m, new_v)
