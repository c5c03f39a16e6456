"""Truncated stick-breaking variational Dirichlet-process Gaussian mixture.

Diagonal covariances with a per-dimension Normal-Gamma prior (mean at the
data mean, mean precision ``beta0``, Gamma shape ``D/2`` and rate
``D/2 * var``, i.e. the prior expects clusters to have the data's spread
divided by ``D``). Coordinate ascent on the ELBO until its per-point change
falls under ``tol`` or ``max_iter`` is hit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, digamma, gammaln, logsumexp

TRUNCATION = 40
THRESHOLDS = (0.05, 0.03, 0.01)
N_WAYPOINTS = 10


@dataclass
class DPGMMResult:
    weights: np.ndarray   # responsibility mass fraction per component
    resp: np.ndarray      # (n, T)
    means: np.ndarray     # (T, D)
    elbo: list[float]
    converged: bool

    @property
    def n_iter(self) -> int:
        return len(self.elbo)

    def count(self, threshold: float) -> int:
        return int(np.sum(self.weights >= threshold))


def vectorize(trajs, n_points: int = N_WAYPOINTS) -> np.ndarray:
    """(M, H, 2) canonical trajectories -> (M, 2*n_points) by even subsampling."""
    trajs = np.asarray(trajs, dtype=float)
    idx = np.round(np.linspace(0, trajs.shape[1] - 1, n_points)).astype(int)
    return trajs[:, idx, :].reshape(len(trajs), -1)


def _init_centers(x: np.ndarray, t: int) -> np.ndarray:
    """Farthest-point seeding starting from the point nearest the mean.

    Stops early when every point coincides with a chosen center, so a
    degenerate data set starts (and stays) with a single component.
    """
    first = int(np.argmin(np.sum((x - x.mean(0)) ** 2, axis=1)))
    centers = [first]
    d = np.sum((x - x[first]) ** 2, axis=1)
    while len(centers) < t:
        nxt = int(np.argmax(d))
        if d[nxt] <= 1e-12:
            break
        centers.append(nxt)
        d = np.minimum(d, np.sum((x - x[nxt]) ** 2, axis=1))
    return x[centers]


class _Posterior:
    def __init__(self, x, resp, prior):
        m0, beta0, a0, b0, alpha = prior
        nk = resp.sum(0) + 1e-10
        xbar = resp.T @ x / nk[:, None]
        sk = resp.T @ (x * x) / nk[:, None] - xbar ** 2
        sk = np.maximum(sk, 0.0)
        self.nk = nk
        self.beta = beta0 + nk
        self.m = (beta0 * m0 + nk[:, None] * xbar) / self.beta[:, None]
        self.a = a0 + 0.5 * nk
        self.b = b0 + 0.5 * (nk[:, None] * sk + (beta0 * nk / (beta0 + nk))[:, None] * (xbar - m0) ** 2)
        tail = np.concatenate([np.cumsum(nk[::-1])[::-1][1:], [0.0]])
        self.g1 = 1.0 + nk
        self.g2 = alpha + tail

    def log_pi(self):
        dsum = digamma(self.g1 + self.g2)
        elog_v = digamma(self.g1) - dsum
        elog_1v = digamma(self.g2) - dsum
        return elog_v + np.concatenate([[0.0], np.cumsum(elog_1v)[:-1]]), elog_v, elog_1v

    def log_lik(self, x):
        elog_lam = digamma(self.a)[:, None] - np.log(self.b)          # (T, D)
        e_lam = self.a[:, None] / self.b
        d = x.shape[1]
        quad = (x * x) @ e_lam.T - 2 * x @ (e_lam * self.m).T + np.sum(e_lam * self.m ** 2, axis=1)
        return 0.5 * (elog_lam.sum(1) - d * np.log(2 * np.pi) - d / self.beta) - 0.5 * quad


def _elbo(x, resp, post: _Posterior, prior) -> float:
    m0, beta0, a0, b0, alpha = prior
    log_pi, elog_v, elog_1v = post.log_pi()
    ll = np.sum(resp * (post.log_lik(x) + log_pi))
    ent = -np.sum(resp * np.log(np.maximum(resp, 1e-300)))
    # KL(Beta(g1, g2) || Beta(1, alpha))
    kl_v = np.sum((post.g1 - 1) * elog_v + (post.g2 - alpha) * elog_1v - betaln(post.g1, post.g2) + betaln(1.0, alpha))
    # KL of the Normal-Gamma factors
    a, b, beta, m = post.a[:, None], post.b, post.beta[:, None], post.m
    kl_g = (a - a0) * digamma(a) - gammaln(a) + gammaln(a0) + a0 * (np.log(b) - np.log(b0)) + a * (b0 - b) / b
    kl_n = 0.5 * (beta0 / beta + beta0 * (a / b) * (m - m0) ** 2 - 1.0 - np.log(beta0 / beta))
    return float(ll + ent - kl_v - np.sum(kl_g) - np.sum(kl_n))


def fit_dpgmm(x, truncation: int = TRUNCATION, alpha: float = 1.0, max_iter: int = 200, tol: float = 1e-4,
              beta0: float = 1.0, reg: float = 1e-6) -> DPGMMResult:
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    var = x.var(axis=0) + reg
    a0 = 0.5 * d
    prior = (x.mean(0), beta0, a0, a0 * var, alpha)
    centers = _init_centers(x, truncation)
    dist = np.sum((x[:, None, :] - centers[None]) ** 2, axis=2)
    resp = np.zeros((n, truncation))
    resp[np.arange(n), np.argmin(dist, axis=1)] = 1.0
    elbo, converged = [], False
    for _ in range(max_iter):
        post = _Posterior(x, resp, prior)
        log_pi, _, _ = post.log_pi()
        logits = post.log_lik(x) + log_pi
        resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        post = _Posterior(x, resp, prior)
        elbo.append(_elbo(x, resp, post, prior))
        if len(elbo) > 1 and abs(elbo[-1] - elbo[-2]) / n < tol:
            converged = True
            break
    weights = resp.sum(0) / n
    return DPGMMResult(weights, resp, post.m, elbo, converged)


def dpgmm_cluster(trajectories, thresholds=THRESHOLDS, **kw) -> dict:
    """Cluster counts at each mass threshold for canonical (M, H, 2) trajectories.

    Returns ``{"counts": {threshold: count}, "converged": bool, "n_iter": int}``;
    ``converged`` False is the warning flag for hitting the iteration cap.
    """
    trajs = np.asarray(trajectories, dtype=float)
    if len(trajs) < 2:
        raise ValueError("need at least 2 trajectories")
    res = fit_dpgmm(vectorize(trajs), **kw)
    return {"counts": {float(t): res.count(t) for t in thresholds}, "converged": res.converged, "n_iter": res.n_iter}
