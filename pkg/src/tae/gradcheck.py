from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var


@dataclass
class GradReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def rel_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(tape: Tape, output: Var | None = None, tolerance: float = 1e-4,
                      eps: float = 1e-6, names=None, max_elements: int = 24,
                      analytic: dict[str, np.ndarray] | None = None, seed: int = 0,
                      node_budget: int = 5000) -> GradReport:
    """Compare backward() against central differences on a scalar output.

    At most ``max_elements`` entries per leaf are probed (chosen with a fixed
    seed). ``analytic`` overrides the tape's own gradients, which is how a
    corrupted gradient is fed in as a negative control.
    """
    if len(tape) > node_budget:
        raise ValueError(f"tape has {len(tape)} nodes, budget is {node_budget}")
    out_idx = tape._index(output)
    if tape.values[out_idx].size != 1:
        raise ValueError("finite_diff_check needs a scalar output")
    leaves = {**tape.params, **tape.inputs}
    names = sorted(leaves) if names is None else list(names)
    base = {n: tape.values[leaves[n]].copy() for n in leaves}
    if analytic is None:
        analytic = tape.backward(out_idx)
    rng = np.random.default_rng(seed)
    errors = {}
    try:
        for name in names:
            x0 = base[name]
            flat = np.arange(x0.size)
            if x0.size > max_elements:
                flat = np.sort(rng.choice(x0.size, max_elements, replace=False))
            worst = 0.0
            for k in flat:
                xp = x0.copy().reshape(-1)
                xp[k] += eps
                fp = float(tape.forward({name: xp.reshape(x0.shape)}, out_idx))
                xp[k] -= 2 * eps
                fm = float(tape.forward({name: xp.reshape(x0.shape)}, out_idx))
                num = (fp - fm) / (2 * eps)
                worst = max(worst, rel_error(float(analytic[name].reshape(-1)[k]), num))
            tape.forward({name: x0}, out_idx)
            errors[name] = worst
    finally:
        tape.forward(base, out_idx)
    return GradReport(errors, tolerance)
