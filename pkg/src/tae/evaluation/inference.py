"""Batched inference: codes, decoded modes and classifier scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import model as M
from ..features import Params, Prepared, collate, extract, prepare
from ..scenario.types import Scenario


@dataclass
class Inference:
    items: list[Prepared]
    feats: np.ndarray       # (N, D) over all agents of all items
    codes: M.LatentCode
    slices: list[slice]     # rows of each item

    def frames(self):
        return [f for it in self.items for f in it.frames]

    @property
    def fut(self) -> np.ndarray:
        return np.concatenate([it.fut for it in self.items])

    @property
    def ego(self) -> np.ndarray:
        return np.concatenate([it.ego for it in self.items])


def as_items(data) -> list[Prepared]:
    return [prepare(d) if isinstance(d, Scenario) else d for d in data]


def infer(params: dict, data, batch_size: int = 64) -> Inference:
    items = as_items(data)
    feats, codes, slices, off = [], [], [], 0
    for i in range(0, len(items), batch_size):
        batch = collate(items[i:i + batch_size])
        tape = ad.Tape()
        P = Params(tape, params)
        f = extract(P, batch)
        feats.append(f.value)
        codes.append(M.encode(P, f).numpy())
    for it in items:
        slices.append(slice(off, off + it.n_agents))
        off += it.n_agents
    code = M.LatentCode(np.concatenate([c.intent for c in codes]), np.concatenate([c.agg for c in codes]),
                        np.concatenate([c.gauss for c in codes]))
    return Inference(items, np.concatenate(feats), code, slices)


def decode_codes(params: dict, codes: M.LatentCode | np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Canonical-frame trajectories (N, H, 2)."""
    z = codes.stacked() if isinstance(codes, M.LatentCode) else np.asarray(codes, dtype=float)
    out = []
    for i in range(0, len(z), chunk):
        tape = ad.Tape()
        out.append(M.decode(Params(tape, params), tape.const(z[i:i + chunk])).value)
    return np.concatenate(out) if out else np.zeros((0, 0, 2))


def mode_codes(codes: M.LatentCode, agg_offset: float = 1.0, k: int = 6) -> list[M.LatentCode]:
    """Numeric twin of :func:`tae.model.mode_latents`."""
    out = [codes, M.modify_codes(codes, -agg_offset), M.modify_codes(codes, agg_offset)]
    out += [M.modify_codes(codes, 0.0, name) for name in ("left", "right", "forward")]
    return out[:k]


def decode_modes(params: dict, codes: M.LatentCode, agg_offset: float = 1.0, k: int = 6) -> np.ndarray:
    """(N, K, H, 2) canonical candidates, mode order as in ``model.MODE_NAMES``."""
    return np.stack([decode_codes(params, c) for c in mode_codes(codes, agg_offset, k)], axis=1)


def mode_scores(params: dict, feats: np.ndarray, cands: np.ndarray) -> np.ndarray:
    tape = ad.Tape()
    return M.classify_modes(Params(tape, params), tape.const(feats), tape.const(cands)).value


def to_world(frames, local: np.ndarray) -> np.ndarray:
    """Map (N, ..., 2) canonical arrays to world coordinates row by row."""
    return np.stack([fr.to_world(x) for fr, x in zip(frames, local)])
