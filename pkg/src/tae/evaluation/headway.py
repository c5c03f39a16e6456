"""Candidate distribution fits for headway samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

FAMILIES = ("lognormal", "normal", "gamma")
N_BINS = 50
RANGE = (0.0, 10.0)
MIN_SAMPLES = 100


@dataclass
class DistributionFit:
    family: str
    params: dict
    kl: float
    sse: float

    def dist(self):
        return _frozen(self.family, self.params)


def _frozen(family, p):
    if family == "lognormal":
        return stats.lognorm(s=p["sigma"], scale=np.exp(p["mu"]))
    if family == "normal":
        return stats.norm(loc=p["mu"], scale=p["sigma"])
    return stats.gamma(a=p["shape"], scale=p["scale"])


def _estimate(family, x):
    if family == "lognormal":
        lx = np.log(x)
        return {"mu": float(lx.mean()), "sigma": float(lx.std())}
    if family == "normal":
        return {"mu": float(x.mean()), "sigma": float(x.std())}
    m, v = float(x.mean()), float(x.var())
    return {"shape": m * m / v, "scale": v / m}


def fit_headway(samples) -> tuple[dict[str, DistributionFit], str]:
    """MLE for log-normal and normal, moments for gamma; best = lowest KL.

    KL is between histogram masses on ``N_BINS`` bins over ``RANGE`` and the
    fitted masses on the same bins (renormalized to the range). SSE compares
    the histogram density with the fitted pdf at the bin centers.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("headway samples must be finite and positive")
    edges = np.linspace(*RANGE, N_BINS + 1)
    width = edges[1] - edges[0]
    counts, _ = np.histogram(x, bins=edges)
    p = counts / counts.sum()
    density = p / width
    centers = 0.5 * (edges[1:] + edges[:-1])
    fits = {}
    for fam in FAMILIES:
        params = _estimate(fam, x)
        d = _frozen(fam, params)
        q = np.diff(d.cdf(edges))
        q = np.maximum(q / max(q.sum(), 1e-300), 1e-12)
        nz = p > 0
        kl = float(np.sum(p[nz] * np.log(p[nz] / q[nz])))
        sse = float(np.sum((density - d.pdf(centers)) ** 2))
        fits[fam] = DistributionFit(fam, params, max(kl, 0.0), sse)
    best = min(FAMILIES, key=lambda f: fits[f].kl)
    return fits, best
