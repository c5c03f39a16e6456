"""Behavior-aware adversarial autoencoder.

Latent layout (10 dims): ``[z_intent (3, simplex) | z_agg (1, seconds) | z_gauss (6)]``.

Every network function takes a :class:`~tae.features.Params` view so the
same code builds graphs with trainable or frozen weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import features
from .features import Params
from .rng import stream
from .scenario.types import INTENTS

PROB_CLAMP = 1e-7
LATENT = 10
N_GAUSS = 6
OUT_SCALE = 10.0
# pre-exp range of the aggressiveness head; keeps exp() finite
AGG_LOGIT = (-8.0, 4.0)
STATS_EPS = 1e-4  # variance floor inside batch_stats
HEADS = ("intent", "agg", "gauss")


@dataclass
class PriorConfig:
    probs: tuple = (1 / 3, 1 / 3, 1 / 3)
    agg_mu: float = 0.3
    agg_sigma: float = 0.55
    sigma_d: float = 10.0
    K: int = 6

    def validate(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (3,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"intent prior must be 3 probabilities summing to 1, got {self.probs}")
        if self.agg_sigma <= 0 or self.sigma_d <= 0:
            raise ValueError("agg_sigma and sigma_d must be positive")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        return self

    def to_dict(self):
        d = asdict(self)
        d["probs"] = list(self.probs)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["probs"] = tuple(d["probs"])
        return cls(**d)


@dataclass
class ModelConfig:
    width: int = 32
    hidden: int = 32
    trunk: int = 64
    head: int = 32
    horizon: int = 30
    dec_hidden: int = 128
    disc_hidden: int = 64
    cls_hidden: int = 64
    disc_stats: bool = False  # discriminators also see batch mean and log-std

    def to_dict(self):
        return asdict(self)


@dataclass
class Latent:
    """Differentiable latent code for a batch."""

    intent: ad.Var  # (N, 3)
    agg: ad.Var     # (N, 1)
    gauss: ad.Var   # (N, 6)

    def stacked(self) -> ad.Var:
        return ad.concat([self.intent, self.agg, self.gauss], axis=1)

    def numpy(self) -> "LatentCode":
        return LatentCode(self.intent.value.copy(), self.agg.value[:, 0].copy(), self.gauss.value.copy())


@dataclass
class LatentCode:
    intent: np.ndarray  # (N, 3)
    agg: np.ndarray     # (N,)
    gauss: np.ndarray   # (N, 6)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.intent, self.agg[:, None], self.gauss], axis=1)

    @classmethod
    def from_stacked(cls, z):
        z = np.asarray(z, dtype=float)
        return cls(z[:, :3].copy(), z[:, 3].copy(), z[:, 4:].copy())


# --------------------------------------------------------------------------
# parameters


def _lin(rng, fan_in, fan_out, gain=1.0):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    p = features.init_params(stream(seed, "init", "ext"), cfg.width, cfg.hidden)
    rng = stream(seed, "init", "model")
    z = np.zeros

    def layer(name, n_in, n_out, gain=np.sqrt(2.0)):
        p[name + "/w"] = _lin(rng, n_in, n_out, gain)
        p[name + "/b"] = z(n_out, np.float32)

    layer("enc/trunk", cfg.width, cfg.trunk)
    for head, n_out in zip(HEADS, (3, 1, N_GAUSS)):
        layer(f"enc/{head}/0", cfg.trunk, cfg.head)
        layer(f"enc/{head}/1", cfg.head, n_out, gain=1.0)
    p["enc/agg/1/b"][:] = 0.3
    layer("dec/0", LATENT, cfg.dec_hidden)
    layer("dec/1", cfg.dec_hidden, cfg.dec_hidden)
    layer("dec/2", cfg.dec_hidden, cfg.horizon * 2, gain=1.0)
    for head, n_in in zip(HEADS, (3, 1, N_GAUSS)):
        layer(f"disc/{head}/0", n_in * (3 if cfg.disc_stats else 1), cfg.disc_hidden)
        layer(f"disc/{head}/1", cfg.disc_hidden, 1, gain=1.0)
    layer("cls/0", cfg.width + cfg.horizon * 2, cfg.cls_hidden)
    layer("cls/1", cfg.cls_hidden, 1, gain=1.0)
    return p


def check_params(params: dict[str, np.ndarray], reference: dict[str, np.ndarray]):
    missing = sorted(set(reference) - set(params))
    if missing:
        raise KeyError(f"missing parameter arrays: {missing[:5]}")
    for k, v in reference.items():
        if params[k].shape != v.shape:
            raise ValueError(f"{k}: shape {params[k].shape}, expected {v.shape}")


# --------------------------------------------------------------------------
# networks


def encode(P: Params, feat: ad.Var) -> Latent:
    trunk = ad.relu(ad.dense(feat, P("enc/trunk/w"), P("enc/trunk/b")))

    def head(name):
        h = ad.relu(ad.dense(trunk, P(f"enc/{name}/0/w"), P(f"enc/{name}/0/b")))
        return ad.dense(h, P(f"enc/{name}/1/w"), P(f"enc/{name}/1/b"))

    intent = ad.softmax(head("intent"), axis=1)
    agg = ad.exp(ad.clip(head("agg"), *AGG_LOGIT))
    gauss = head("gauss")
    return Latent(intent, agg, gauss)


def decode(P: Params, z: ad.Var) -> ad.Var:
    """(N, 10) latent -> (N, H, 2) canonical-frame waypoints."""
    h = ad.relu(ad.dense(z, P("dec/0/w"), P("dec/0/b")))
    h = ad.relu(ad.dense(h, P("dec/1/w"), P("dec/1/b")))
    out = ad.dense(h, P("dec/2/w"), P("dec/2/b")) * OUT_SCALE
    n_out = out.shape[1]
    return ad.reshape(out, (out.shape[0], n_out // 2, 2))


def _disc_input(head: str, x: ad.Var) -> ad.Var:
    # aggressiveness is judged on the log scale, where the prior is normal
    return ad.log(x) if head == "agg" else x


def batch_stats(x: ad.Var) -> ad.Var:
    """Append the batch mean and log-std of every column to each row."""
    tile = np.zeros(x.shape[0], dtype=np.int64)
    mu = ad.mean(x, axis=0, keepdims=True)
    c = x - ad.gather(mu, tile)
    log_sd = ad.log(ad.mean(c * c, axis=0, keepdims=True) + STATS_EPS) * 0.5
    return ad.concat([x, ad.gather(mu, tile), ad.gather(log_sd, tile)], axis=1)


def discriminate(P: Params, head: str, x: ad.Var) -> ad.Var:
    """Probability (N,) that ``x`` came from the prior.

    When the first layer is three times the code width the discriminator
    judges each row together with its batch's moments (``batch_stats``).
    """
    w = P(f"disc/{head}/0/w")
    x_in = _disc_input(head, x)
    if w.shape[0] != x_in.shape[1]:
        x_in = batch_stats(x_in)
    h = ad.relu(ad.dense(x_in, w, P(f"disc/{head}/0/b")))
    logit = ad.dense(h, P(f"disc/{head}/1/w"), P(f"disc/{head}/1/b"))
    return ad.reshape(ad.sigmoid(logit), (x.shape[0],))


def classify_modes(P: Params, feat: ad.Var, cands: ad.Var) -> ad.Var:
    """Softmax scores (N, K) over candidate trajectories (N, K, H, 2)."""
    n, k = cands.shape[0], cands.shape[1]
    rep = ad.gather(feat, np.repeat(np.arange(n), k))
    flat = ad.reshape(cands, (n * k, -1)) * (1.0 / OUT_SCALE)
    h = ad.relu(ad.dense(ad.concat([rep, flat], axis=1), P("cls/0/w"), P("cls/0/b")))
    s = ad.dense(h, P("cls/1/w"), P("cls/1/b"))
    return ad.softmax(ad.reshape(s, (n, k)), axis=1)


# --------------------------------------------------------------------------
# prior


def sample_prior(kind: str, prior: PriorConfig, seed_or_rng, n: int = 1) -> np.ndarray:
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else stream(int(seed_or_rng), "prior", kind)
    if kind == "intent":
        cls = rng.choice(3, size=n, p=np.asarray(prior.probs, dtype=float))
        return np.eye(3)[cls]
    if kind == "agg":
        return np.exp(prior.agg_mu + prior.agg_sigma * rng.standard_normal((n, 1)))
    if kind == "gauss":
        return rng.standard_normal((n, N_GAUSS))
    raise ValueError(f"unknown prior kind {kind!r}")


# --------------------------------------------------------------------------
# losses


def _pclamp(p: ad.Var) -> ad.Var:
    return ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def loss_pred(generated: ad.Var, reference) -> ad.Var:
    """Smooth L1, mean over every coordinate."""
    ref = reference if isinstance(reference, ad.Var) else generated.tape.const(reference)
    if generated.shape != ref.shape:
        raise ValueError(f"loss_pred: shape {generated.shape} vs {ref.shape}")
    d = generated - ref
    a = ad.abs_(d)
    # 0.5 min(a,1)^2 + max(a-1, 0)
    m = a - ad.relu(a - 1.0)
    return ad.mean(m * m * 0.5 + ad.relu(a - 1.0))


def loss_adv(d_fake: list[ad.Var]) -> ad.Var:
    """Mean over heads of batch-mean log(1 - D(G(x)))."""
    terms = [ad.mean(ad.log(1.0 - _pclamp(d))) for d in d_fake]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def loss_disc(d_real: ad.Var, d_fake: ad.Var) -> ad.Var:
    """-[log D(real) + log(1 - D(fake))], batch-averaged, for one head."""
    return -(ad.mean(ad.log(_pclamp(d_real))) + ad.mean(ad.log(1.0 - _pclamp(d_fake))))


def loss_semi(latent: Latent, intent_label, headway_label, w_intent: float = 1.0, w_agg: float = 1.0) -> ad.Var:
    """Cross entropy on labeled intents plus squared error on labeled headways.

    ``intent_label`` holds class indices (-1 = unlabeled); ``headway_label``
    holds seconds (nan = unlabeled). Each term is normalized by its own count.
    """
    tape = latent.intent.tape
    intent_label = np.asarray(intent_label)
    headway_label = np.asarray(headway_label, dtype=float)
    total = None
    li = np.flatnonzero(intent_label >= 0)
    if li.size:
        onehot = np.eye(3)[intent_label[li]]
        z = ad.log(ad.clip(ad.gather(latent.intent, li), PROB_CLAMP, 1.0))
        total = -ad.vsum(z * tape.const(onehot)) * (w_intent / li.size)
    la = np.flatnonzero(np.isfinite(headway_label))
    if la.size:
        term = ad.sq_err(ad.reshape(ad.gather(latent.agg, la), (la.size,)), tape.const(headway_label[la]))
        term = term * (w_agg / la.size)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("loss_semi: no labeled element")
    return total


def loss_diversity(trajs: ad.Var, sigma_d: float) -> ad.Var:
    """Pairwise exp(-D^2 / sigma_d) averaged over ordered pairs.

    ``trajs`` is (K, H, 2) or batched (N, K, H, 2); batches are averaged.
    """
    if len(trajs.shape) == 3:
        trajs = ad.reshape(trajs, (1,) + trajs.shape)
    n, k = trajs.shape[0], trajs.shape[1]
    if k < 2:
        raise ValueError("loss_diversity needs K >= 2")
    flat = ad.reshape(trajs, (n * k, -1))
    i, j = np.nonzero(~np.eye(k, dtype=bool))
    base = (np.arange(n) * k)[:, None]
    a = ad.gather(flat, (base + i).ravel())
    b = ad.gather(flat, (base + j).ravel())
    diff = a - b
    d2 = ad.vsum(diff * diff, axis=1)
    return ad.mean(ad.exp(d2 * (-1.0 / sigma_d)))


# --------------------------------------------------------------------------
# behavior-conditioned candidate sets


MODE_NAMES = ("most_likely", "aggressive", "conservative", "left", "right", "forward")


def mode_latents(z: ad.Var, agg_offset: float = 1.0, k: int = 6) -> list[ad.Var]:
    """Latent variants for the six modes, built on the tape from the base code.

    Aggressive lowers the headway code by ``agg_offset`` seconds (floored at
    0.05), conservative raises it; the intent modes replace the intent part
    with a one-hot.
    """
    tape = z.tape
    n = z.shape[0]
    intent, agg, rest = z[:, :3], z[:, 3:4], z[:, 4:]
    out = [z]

    def with_agg(delta):
        new = ad.relu(agg + (delta - 0.05)) + 0.05
        return ad.concat([intent, new, rest], axis=1)

    out.append(with_agg(-agg_offset))
    out.append(with_agg(agg_offset))
    for name in ("left", "right", "forward"):
        onehot = tape.const(np.tile(np.eye(3)[INTENTS.index(name)], (n, 1)))
        out.append(ad.concat([onehot, agg, rest], axis=1))
    return out[:k]


def modify_codes(codes: LatentCode, agg_delta: float = 0.0, intent: str | None = None) -> LatentCode:
    agg = np.maximum(codes.agg + agg_delta, 0.05) if agg_delta != 0.0 else codes.agg.copy()
    it = codes.intent.copy()
    if intent is not None:
        it = np.tile(np.eye(3)[INTENTS.index(intent)], (len(it), 1))
    return LatentCode(it, agg, codes.gauss.copy())
