"""Multi-phase training, the diversity stage, and checkpoints.

Per batch the main loop runs four updates in a fixed order:

1. ``adv``  extractor+encoder, adversarial loss (discriminators frozen)
2. ``disc`` discriminators on prior samples vs the codes from step 1
3. ``semi`` extractor+encoder on the labeled agents of the batch
4. ``pred`` extractor+encoder+decoder, smooth L1 reconstruction

Each phase has its own Adam state. All randomness is drawn from counter-based
streams addressed by (seed, epoch, batch), so a run resumed from a
checkpoint replays exactly.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as M
from .features import Params, Prepared, collate, extract, prepare
from .optim import AdamState, adam_step
from .rng import stream
from .scenario.types import Scenario

log = logging.getLogger(__name__)

MAGIC = b"TAECKPT\x00"
CKPT_VERSION = 1
PHASES = ("adv", "disc", "semi", "pred")
DIV_PHASES = ("div", "cls")
DIV_SCOPES = {  # frozen prefixes per diversity scope
    "decoder": ("ext/", "enc/"),
    "all": (),
}


class TrainingError(RuntimeError):
    """Numeric failure during an update; names the phase and batch."""


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch: int = 32
    lr_pred: float = 1e-4
    lr_adv: float = 1e-5
    lr_disc: float = 1e-5
    lr_semi: float = 5e-5
    div_epochs: int = 5
    lambda_d: float = 0.1
    label_frac: float = 0.3
    seed: int = 0
    w_intent: float = 1.0
    w_agg: float = 1.0
    agg_offset: float = 1.0
    clip_norm: float | None = None
    oversample_labels: bool = False
    div_every: int = 0  # >0: also run a diversity step every k main batches
    gan_beta1: float = 0.9  # Adam beta1 of the adv and disc phases
    div_scope: str = "decoder"  # diversity stage trains "decoder" only, or "all" of ext/enc/dec
    decay_epochs: int = 0  # >0: main-stage rates fall linearly to lr_floor over this many epochs
    lr_floor: float = 0.1

    def lr_scale(self, epoch: int) -> float:
        if self.decay_epochs <= 0:
            return 1.0
        return self.lr_floor + (1.0 - self.lr_floor) * max(0.0, 1.0 - epoch / self.decay_epochs)

    def validate(self):
        for name in ("lr_pred", "lr_adv", "lr_disc", "lr_semi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 0 or self.div_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.lambda_d < 0:
            raise ValueError("lambda_d must be >= 0")
        if not 0.0 <= self.gan_beta1 < 1.0:
            raise ValueError("gan_beta1 must be in [0, 1)")
        if self.div_scope not in DIV_SCOPES:
            raise ValueError(f"div_scope must be one of {DIV_SCOPES}")
        if self.decay_epochs < 0 or not 0.0 < self.lr_floor <= 1.0:
            raise ValueError("decay_epochs must be >= 0 and lr_floor in (0, 1]")
        return self


@dataclass
class Checkpoint:
    train: TrainConfig
    prior: M.PriorConfig
    model: M.ModelConfig
    params: dict[str, np.ndarray]
    adam: dict[str, AdamState] = field(default_factory=dict)
    epoch: int = 0
    div_epoch: int = 0
    history: list[dict] = field(default_factory=list)
    version: int = CKPT_VERSION

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if (self.version, self.epoch, self.div_epoch) != (other.version, other.epoch, other.div_epoch):
            return False
        if self.train != other.train or self.prior != other.prior or self.model != other.model:
            return False
        if self.history != other.history:
            return False
        if not _same_arrays(self.params, other.params) or set(self.adam) != set(other.adam):
            return False
        for k, a in self.adam.items():
            b = other.adam[k]
            if (a.beta1, a.beta2, a.eps, a.step) != (b.beta1, b.beta2, b.eps, b.step):
                return False
            if not (_same_arrays(a.m, b.m) and _same_arrays(a.v, b.v)):
                return False
        return True


def _same_arrays(a: dict, b: dict) -> bool:
    return set(a) == set(b) and all(a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]) for k in a)


def new_checkpoint(train: TrainConfig, prior: M.PriorConfig | None = None,
                   model_cfg: M.ModelConfig | None = None) -> Checkpoint:
    prior = (prior or M.PriorConfig()).validate()
    model_cfg = model_cfg or M.ModelConfig()
    params = M.init_params(model_cfg, train.seed)
    adam = {k: AdamState(beta1=train.gan_beta1) if k in ("adv", "disc") else AdamState()
            for k in PHASES + DIV_PHASES}
    return Checkpoint(train.validate(), prior, model_cfg, params, adam)


# --------------------------------------------------------------------------
# per-phase losses (each on its own tape)


def _finite(value: float, phase: str, where: str):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {phase} loss at {where}")


def adv_tape(params, batch):
    tape = ad.Tape()
    P = Params(tape, params, frozen=("disc/",))
    lat = M.encode(P, extract(P, batch))
    d_fake = [M.discriminate(P, h, x) for h, x in zip(M.HEADS, (lat.intent, lat.agg, lat.gauss))]
    loss = M.loss_adv(d_fake)
    return tape, loss, lat


def disc_tape(params, codes: M.LatentCode, real: dict[str, np.ndarray]):
    tape = ad.Tape()
    P = Params(tape, params)
    per_head = {}
    total = None
    fakes = {"intent": codes.intent, "agg": codes.agg[:, None], "gauss": codes.gauss}
    for h in M.HEADS:
        loss = M.loss_disc(M.discriminate(P, h, tape.const(real[h])), M.discriminate(P, h, tape.const(fakes[h])))
        per_head[h] = loss
        total = loss if total is None else total + loss
    return tape, total, per_head


def semi_tape(params, batch, cfg: TrainConfig):
    tape = ad.Tape()
    P = Params(tape, params)
    lat = M.encode(P, extract(P, batch))
    loss = M.loss_semi(lat, batch.label_intent, batch.label_headway, cfg.w_intent, cfg.w_agg)
    return tape, loss


def pred_tape(params, batch):
    tape = ad.Tape()
    P = Params(tape, params)
    lat = M.encode(P, extract(P, batch))
    loss = M.loss_pred(M.decode(P, lat.stacked()), batch.fut)
    return tape, loss


def div_tape(params, batch, cfg: TrainConfig, prior: M.PriorConfig):
    tape = ad.Tape()
    # a frozen encoder keeps the behavior codes learned in the main stage
    P = Params(tape, params, frozen=DIV_SCOPES[cfg.div_scope])
    feat = extract(P, batch)
    lat = M.encode(P, feat)
    zs = M.mode_latents(lat.stacked(), cfg.agg_offset, prior.K)
    trajs = [M.decode(P, z) for z in zs]
    n, h = batch.n_agents, trajs[0].shape[1]
    stack = ad.concat([ad.reshape(t, (n, 1, h, 2)) for t in trajs], axis=1)
    pred = M.loss_pred(trajs[0], batch.fut)
    div = M.loss_diversity(stack, prior.sigma_d)
    loss = pred + div * cfg.lambda_d
    return tape, loss, pred, div, feat, stack


def best_candidate(cands: np.ndarray, fut: np.ndarray) -> np.ndarray:
    """Index of the min-FDE candidate per agent; ties go to the lowest index."""
    fde = np.hypot(*(cands[:, :, -1, :] - fut[:, None, -1, :]).transpose(2, 0, 1))
    return np.argmin(fde, axis=1)


def cls_tape(params, feat: np.ndarray, cands: np.ndarray, fut: np.ndarray):
    tape = ad.Tape()
    P = Params(tape, params)
    scores = M.classify_modes(P, tape.const(feat), tape.const(cands))
    target = best_candidate(cands, fut)
    picked = ad.gather(ad.reshape(scores, (-1,)), np.arange(len(target)) * cands.shape[1] + target)
    loss = -ad.mean(ad.log(ad.clip(picked, M.PROB_CLAMP, 1.0)))
    return tape, loss


# --------------------------------------------------------------------------
# loop


def _update(ckpt: Checkpoint, phase: str, tape: ad.Tape, loss: ad.Var, lr: float, where: str):
    value = float(loss.value)
    _finite(value, phase, where)
    grads = tape.backward(loss)
    try:
        ckpt.params, ckpt.adam[phase] = adam_step(ckpt.params, grads, ckpt.adam[phase], lr, ckpt.train.clip_norm)
    except FloatingPointError as exc:
        raise TrainingError(f"{phase} update at {where}: {exc}") from exc
    return value


def _log(ckpt, stage, epoch, b, phase, value):
    ckpt.history.append({"stage": stage, "epoch": epoch, "batch": b, "phase": phase, "loss": value})


def train_batch(ckpt: Checkpoint, batch, epoch: int, b: int, labeled_pool=None):
    cfg, prior = ckpt.train, ckpt.prior
    where = f"epoch {epoch} batch {b}"
    rng = stream(cfg.seed, "train", epoch, b)
    n = batch.n_agents
    k = cfg.lr_scale(epoch)

    tape, loss, lat = adv_tape(ckpt.params, batch)
    codes = lat.numpy()
    _log(ckpt, "main", epoch, b, "adv", _update(ckpt, "adv", tape, loss, k * cfg.lr_adv, where))

    real = {h: M.sample_prior(h, prior, rng, n) for h in M.HEADS}
    tape, loss, _ = disc_tape(ckpt.params, codes, real)
    _log(ckpt, "main", epoch, b, "disc", _update(ckpt, "disc", tape, loss, k * cfg.lr_disc, where))

    semi_batch = batch
    if labeled_pool is not None:
        pick = rng.choice(len(labeled_pool), size=min(len(batch.items), len(labeled_pool)), replace=False)
        semi_batch = collate([labeled_pool[i] for i in sorted(pick)])
    if np.any(semi_batch.label_intent >= 0) or np.any(np.isfinite(semi_batch.label_headway)):
        tape, loss = semi_tape(ckpt.params, semi_batch, cfg)
        value = _update(ckpt, "semi", tape, loss, k * cfg.lr_semi, where)
    else:
        value = 0.0
    _log(ckpt, "main", epoch, b, "semi", value)

    tape, loss = pred_tape(ckpt.params, batch)
    _log(ckpt, "main", epoch, b, "pred", _update(ckpt, "pred", tape, loss, k * cfg.lr_pred, where))


def div_batch(ckpt: Checkpoint, batch, epoch: int, b: int, stage: str = "div", lr_scale: float = 1.0):
    cfg = ckpt.train
    lr = lr_scale * cfg.lr_pred
    where = f"{stage} epoch {epoch} batch {b}"
    tape, loss, pred, div, feat, stack = div_tape(ckpt.params, batch, cfg, ckpt.prior)
    feat_v, cands = feat.value.copy(), stack.value.copy()
    _log(ckpt, stage, epoch, b, "div_total", _update(ckpt, "div", tape, loss, lr, where))
    _log(ckpt, stage, epoch, b, "div_term", float(div.value))
    tape, loss = cls_tape(ckpt.params, feat_v, cands, batch.fut)
    _log(ckpt, stage, epoch, b, "cls", _update(ckpt, "cls", tape, loss, lr, where))


def _as_prepared(dataset) -> list[Prepared]:
    if not dataset:
        raise ValueError("empty dataset")
    return [prepare(d) if isinstance(d, Scenario) else d for d in dataset]


def _batches(n: int, size: int, seed: int, *path):
    order = stream(seed, "perm", *path).permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def train(dataset, cfg: TrainConfig, resume: Checkpoint | None = None, prior: M.PriorConfig | None = None,
          model_cfg: M.ModelConfig | None = None, diversity: bool = True) -> tuple[Checkpoint, list[dict]]:
    """Main epochs then (optionally) the diversity stage.

    With ``resume`` the run continues from the checkpoint's counters to
    ``cfg.epochs`` / ``cfg.div_epochs``.
    """
    cfg.validate()
    items = _as_prepared(dataset)
    horizon = items[0].fut.shape[1]
    if resume is not None:
        ckpt = resume
        ckpt.train = cfg
    else:
        model_cfg = model_cfg or M.ModelConfig(horizon=horizon)
        ckpt = new_checkpoint(cfg, prior, model_cfg)
    if ckpt.model.horizon != horizon:
        raise ValueError(f"dataset horizon {horizon} != model horizon {ckpt.model.horizon}")
    pool = None
    if cfg.oversample_labels:
        pool = [it for it in items if np.any(it.label_intent >= 0) or np.any(np.isfinite(it.label_headway))]
        pool = pool or None
    while ckpt.epoch < cfg.epochs:
        e = ckpt.epoch
        for b, idx in enumerate(_batches(len(items), cfg.batch, cfg.seed, "main", e)):
            batch = collate([items[i] for i in idx])
            train_batch(ckpt, batch, e, b, pool)
            if cfg.div_every and (b + 1) % cfg.div_every == 0:
                div_batch(ckpt, batch, e, b, stage="interleaved", lr_scale=cfg.lr_scale(e))
        ckpt.epoch += 1
        log.info("epoch %d: %s", e, epoch_means(ckpt.history, "main", e))
    if diversity:
        diversity_stage(ckpt, items)
    return ckpt, report(ckpt.history)


def diversity_stage(ckpt: Checkpoint, dataset) -> Checkpoint:
    items = _as_prepared(dataset)
    cfg = ckpt.train
    while ckpt.div_epoch < cfg.div_epochs:
        e = ckpt.div_epoch
        for b, idx in enumerate(_batches(len(items), cfg.batch, cfg.seed, "div", e)):
            # the stage continues at the rate the main schedule ended on
            div_batch(ckpt, collate([items[i] for i in idx]), e, b, lr_scale=cfg.lr_scale(cfg.epochs))
        ckpt.div_epoch += 1
        log.info("diversity epoch %d: %s", e, epoch_means(ckpt.history, "div", e))
    return ckpt


def epoch_means(history, stage, epoch) -> dict[str, float]:
    acc: dict[str, list] = {}
    for row in history:
        if row["stage"] == stage and row["epoch"] == epoch:
            acc.setdefault(row["phase"], []).append(row["loss"])
    return {k: float(np.mean(v)) for k, v in acc.items()}


def report(history) -> list[dict]:
    """Per-(stage, epoch) mean loss of every phase."""
    keys = sorted({(r["stage"], r["epoch"]) for r in history}, key=lambda k: (k[0] != "main", k))
    return [{"stage": s, "epoch": e, **epoch_means(history, s, e)} for s, e in keys]


# --------------------------------------------------------------------------
# checkpoint container
#
#   MAGIC | u32 version | u64 header length | header JSON | raw float32 LE arrays


def _arrays(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = {f"param/{k}": v for k, v in ckpt.params.items()}
    for phase, st in ckpt.adam.items():
        out.update({f"adam/{phase}/m/{k}": v for k, v in st.m.items()})
        out.update({f"adam/{phase}/v/{k}": v for k, v in st.v.items()})
    return out


def dumps_checkpoint(ckpt: Checkpoint) -> bytes:
    arrays = _arrays(ckpt)
    index, offset = [], 0
    for name in sorted(arrays):
        a = arrays[name]
        nbytes = a.size * 4
        index.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "train": asdict(ckpt.train), "prior": ckpt.prior.to_dict(), "model": ckpt.model.to_dict(),
        "rng": {"seed": ckpt.train.seed, "epoch": ckpt.epoch, "div_epoch": ckpt.div_epoch},
        "adam": {k: {"beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "step": s.step} for k, s in ckpt.adam.items()},
        "history": ckpt.history, "arrays": index,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC + struct.pack("<IQ", ckpt.version, len(blob)) + blob]
    parts += [np.ascontiguousarray(arrays[item["name"]], dtype="<f4").tobytes() for item in index]
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint):
    """Atomic write (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps_checkpoint(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read ({exc})") from exc
    return loads_checkpoint(data, str(path))


def loads_checkpoint(data: bytes, path: str = "<bytes>") -> Checkpoint:
    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + 12:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads {CKPT_VERSION}")
    start = len(MAGIC) + 12
    try:
        header = json.loads(data[start:start + hlen])
        body = memoryview(data)[start + hlen:]
        arrays = {}
        for item in header["arrays"]:
            lo, n = item["offset"], item["nbytes"]
            if lo + n > len(body):
                raise CheckpointError(f"{path}: truncated array {item['name']}")
            arrays[item["name"]] = np.frombuffer(body[lo:lo + n], dtype="<f4").astype(np.float32).reshape(item["shape"])
        train_cfg = TrainConfig(**header["train"])
        prior = M.PriorConfig.from_dict(header["prior"])
        model_cfg = M.ModelConfig(**header["model"])
        adam = {}
        for phase, h in header["adam"].items():
            pre_m, pre_v = f"adam/{phase}/m/", f"adam/{phase}/v/"
            adam[phase] = AdamState(h["beta1"], h["beta2"], h["eps"], h["step"],
                                    {k[len(pre_m):]: v for k, v in arrays.items() if k.startswith(pre_m)},
                                    {k[len(pre_v):]: v for k, v in arrays.items() if k.startswith(pre_v)})
        params = {k[6:]: v for k, v in arrays.items() if k.startswith("param/")}
        ckpt = Checkpoint(train_cfg, prior, model_cfg, params, adam, header["rng"]["epoch"],
                          header["rng"]["div_epoch"], header["history"], version)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc!r})") from exc
    try:
        M.check_params(ckpt.params, M.init_params(model_cfg, 0))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return ckpt
