"""Command line: gen-data, train, generate, eval, sweep, predict.

Exit codes: 0 ok, 2 usage, 3 data (bad input files), 4 numeric failure.
Every output directory gets a ``manifest.json`` describing the run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import model as M
from .evaluation import (EvalReport, decode_codes, decode_modes, displacement_metrics, evaluate, infer,
                         min_displacement, mode_scores, sweep_behavior)
from .evaluation.inference import mode_codes
from .evaluation.sweep import OFFSETS, RISK_DISTANCE
from .plotting import write_svg
from .scenario import ScenarioError, SynthConfig, load_scenarios, save_scenarios, synth_generate
from .training import CheckpointError, TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SCENARIO_FILE = "scenarios.json"

log = logging.getLogger("tae")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, args: argparse.Namespace, inputs=(), outputs=(), started=None):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    config = json.loads(json.dumps(config, default=str))
    doc = {
        "command": command, "version": __version__, "config": config, "seed": config.get("seed"),
        "inputs": [{"path": str(p), "sha256": _sha256(Path(p))} for p in inputs],
        "outputs": sorted(str(p) for p in outputs),
        "started": started, "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_file(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / SCENARIO_FILE
    if not p.is_file():
        raise DataError(f"no scenario file at {path}")
    return p


def _load_data(path, horizon=None):
    p = _data_file(path)
    try:
        scs = load_scenarios(p, horizon)
    except ScenarioError as exc:
        raise DataError(str(exc)) from exc
    if not scs:
        raise DataError(f"{p}: no scenarios")
    return p, scs


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc


def _horizon_check(ckpt, scenarios):
    h = scenarios[0].agents[0].horizon
    if h != ckpt.model.horizon:
        raise DataError(f"data horizon {h} does not match checkpoint horizon {ckpt.model.horizon}")


def _pts(a) -> list:
    return [[float(x), float(y)] for x, y in a]


def _parse_range(text: str) -> tuple[int, int]:
    try:
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise UsageError(f"--agents: expected N or LO-HI, got {text!r}") from None
    return lo, hi


def _parse_floats(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    lo, hi = _parse_range(args.agents)
    mix = _parse_floats(args.intent_mix, "--intent-mix")
    cfg = SynthConfig(n=args.n, agents=(lo, hi), intent_mix=mix, label_frac=args.label_frac,
                      horizon=args.horizon, intersection_frac=args.intersection_frac, seed=args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    scs = synth_generate(cfg)
    out = _out_dir(args.out)
    save_scenarios(out / SCENARIO_FILE, scs)
    return out, [], [out / SCENARIO_FILE]


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(epochs=args.epochs, batch=args.batch, lr_pred=args.lr_pred, lr_adv=args.lr_adv,
                      lr_disc=args.lr_disc, lr_semi=args.lr_semi, div_epochs=args.div_epochs,
                      lambda_d=args.lambda_d, seed=args.seed, agg_offset=args.agg_offset,
                      gan_beta1=args.gan_beta1, div_scope=args.div_scope, decay_epochs=args.decay_epochs, lr_floor=args.lr_floor)
    try:
        return cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args):
    cfg = _train_config(args)
    data, scs = _load_data(args.data)
    inputs = [data]
    resume = None
    if args.resume:
        resume = _load_ckpt(args.resume)
        _horizon_check(resume, scs)
        inputs.append(Path(args.resume))
    model_cfg = M.ModelConfig(width=args.width, horizon=scs[0].agents[0].horizon, disc_stats=args.disc_stats)
    try:
        prior = M.PriorConfig(sigma_d=args.sigma_d).validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ckpt, _ = train(scs, cfg, resume=resume, prior=prior, model_cfg=model_cfg)
    out = _out_dir(args.out)
    save_checkpoint(out / "checkpoint.bin", ckpt)
    with open(out / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "epoch", "batch", "phase", "loss"])
        for r in ckpt.history:
            w.writerow([r["stage"], r["epoch"], r["batch"], r["phase"], repr(r["loss"])])
    return out, inputs, [out / "checkpoint.bin", out / "losses.csv"]


def cmd_generate(args):
    ckpt = _load_ckpt(args.ckpt)
    data, scs = _load_data(args.data)
    _horizon_check(ckpt, scs)
    if not 1 <= args.modes <= len(M.MODE_NAMES):
        raise UsageError(f"--modes must be in 1..{len(M.MODE_NAMES)}")
    inf = infer(ckpt.params, scs)
    codes = inf.codes
    if args.intent != "none":
        codes = M.modify_codes(codes, 0.0, args.intent)
    variants = mode_codes(codes, args.agg_offset, args.modes)
    if args.intent != "none":
        # a forced intent overrides the intent modes too
        variants = [M.modify_codes(c, 0.0, args.intent) for c in variants]
    local = np.stack([decode_codes(ckpt.params, c) for c in variants], axis=1)
    out = _out_dir(args.out)
    outputs = [out / "trajectories.json"]
    doc = {"version": 1, "modes": list(M.MODE_NAMES[:args.modes]), "scenarios": []}
    if args.svg:
        (out / "svg").mkdir(exist_ok=True)
    for sc, it, sl in zip(scs, inf.items, inf.slices):
        agents, gen = [], {}
        for a, (agent, fr) in enumerate(zip(sc.agents, it.frames)):
            if agent.ego:
                continue
            world = np.stack([fr.to_world(t) for t in local[sl][a]])
            gen[agent.id] = world
            agents.append({"id": agent.id, "modes": {m: _pts(t) for m, t in zip(doc["modes"], world)}})
        doc["scenarios"].append({"id": sc.id, "agents": agents})
        if args.svg:
            write_svg(out / "svg" / f"{sc.id}.svg", sc, gen)
            outputs.append(out / "svg" / f"{sc.id}.svg")
    (out / "trajectories.json").write_text(json.dumps(doc, separators=(",", ":")))
    return out, [Path(args.ckpt), data], outputs


def _eval_predictions(args, scs):
    """Score a trajectories file (world frame) against the reference futures."""
    try:
        doc = json.loads(Path(args.predictions).read_text())
        by_id = {(s["id"], a["id"]): a["modes"] for s in doc["scenarios"] for a in s["agents"]}
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{args.predictions}: unreadable predictions ({exc})") from exc
    preds, truth, cands = [], [], []
    for sc in scs:
        for a in sc.agents:
            modes = by_id.get((sc.id, a.id))
            if modes is None:
                continue
            arr = np.asarray(list(modes.values()), dtype=float)
            if arr.shape[1:] != a.fut.shape:
                raise DataError(f"scenario {sc.id} agent {a.id}: prediction shape {arr.shape[1:]} != {a.fut.shape}")
            preds.append(arr[0])
            cands.append(arr)
            truth.append(a.fut)
    if not preds:
        raise DataError("predictions match no agent in the data")
    ade, fde = displacement_metrics(np.array(preds), np.array(truth))
    k = min(len(c) for c in cands)
    mn_ade, mn_fde = min_displacement(np.array([c[:k] for c in cands]), np.array(truth))
    return EvalReport({"ade": ade, "fde": fde, "min_ade": float(mn_ade.mean()), "min_fde": float(mn_fde.mean()),
                       "n_agents": len(preds)}, config={"predictions": str(args.predictions)})


def cmd_eval(args):
    data, scs = _load_data(args.data)
    inputs = [data]
    if args.predictions:
        report = _eval_predictions(args, scs)
        inputs.append(Path(args.predictions))
    else:
        if not args.ckpt:
            raise UsageError("eval needs --ckpt or --predictions")
        ckpt = _load_ckpt(args.ckpt)
        _horizon_check(ckpt, scs)
        inputs.append(Path(args.ckpt))
        report = evaluate(ckpt.params, scs, agg_offset=args.agg_offset, with_clusters=not args.no_clusters,
                          with_sweep=not args.no_sweep, config={"ckpt": str(args.ckpt), "data": str(data)})
    out = _out_dir(args.out)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    return out, inputs, [out / "report.json", out / "report.csv"]


def cmd_sweep(args):
    ckpt = _load_ckpt(args.ckpt)
    data, scs = _load_data(args.data)
    _horizon_check(ckpt, scs)
    offsets = _parse_floats(args.offsets, "--offsets")
    intents = tuple(x for x in args.intents.split(",") if x)
    for x in intents:
        if x not in ("forward", "left", "right"):
            raise UsageError(f"--intents: unknown intent {x!r}")
    rows = [r.to_dict() for r in sweep_behavior(ckpt.params, scs, offsets, intents, args.threshold)]
    out = _out_dir(args.out)
    (out / "sweep.json").write_text(json.dumps(rows, indent=2) + "\n")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return out, [Path(args.ckpt), data], [out / "sweep.json", out / "sweep.csv"]


def cmd_predict(args):
    ckpt = _load_ckpt(args.ckpt)
    data, scs = _load_data(args.data)
    _horizon_check(ckpt, scs)
    inf = infer(ckpt.params, scs)
    cands = decode_modes(ckpt.params, inf.codes, args.agg_offset, ckpt.prior.K)
    scores = mode_scores(ckpt.params, inf.feats, cands)
    doc = {"version": 1, "modes": list(M.MODE_NAMES[:ckpt.prior.K]), "scenarios": []}
    row = 0
    for sc, it in zip(scs, inf.items):
        agents = []
        for a, (agent, fr) in enumerate(zip(sc.agents, it.frames)):
            agents.append({
                "id": agent.id,
                "candidates": [_pts(fr.to_world(t)) for t in cands[row]],
                "scores": [float(s) for s in scores[row]],
                "intent": [float(v) for v in inf.codes.intent[row]],
                "headway": float(inf.codes.agg[row]),
                "residual": [float(v) for v in inf.codes.gauss[row]],
            })
            row += 1
        doc["scenarios"].append({"id": sc.id, "agents": agents})
    out = _out_dir(args.out)
    (out / "predictions.json").write_text(json.dumps(doc, separators=(",", ":")))
    return out, [Path(args.ckpt), data], [out / "predictions.json"]


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    d = TrainConfig()
    p = argparse.ArgumentParser(prog="tae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic scenarios")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--agents", default="3-6", help="agents per scenario, N or LO-HI")
    g.add_argument("--intent-mix", default="0.3333333333333333,0.3333333333333333,0.3333333333333334",
                   help="forward,left,right probabilities")
    g.add_argument("--label-frac", type=float, default=0.3)
    g.add_argument("--horizon", type=int, default=30)
    g.add_argument("--intersection-frac", type=float, default=0.4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train and run the diversity stage")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=d.epochs)
    t.add_argument("--batch", type=int, default=d.batch)
    t.add_argument("--lr-pred", type=float, default=d.lr_pred)
    t.add_argument("--lr-adv", type=float, default=d.lr_adv)
    t.add_argument("--lr-disc", type=float, default=d.lr_disc)
    t.add_argument("--lr-semi", type=float, default=d.lr_semi)
    t.add_argument("--div-epochs", type=int, default=d.div_epochs)
    t.add_argument("--lambda-d", type=float, default=d.lambda_d)
    t.add_argument("--agg-offset", type=float, default=d.agg_offset)
    t.add_argument("--gan-beta1", type=float, default=d.gan_beta1, help="Adam beta1 of the adv and disc phases")
    t.add_argument("--decay-epochs", type=int, default=d.decay_epochs,
                   help="linear decay of the main-stage rates over this many epochs (0 = constant)")
    t.add_argument("--lr-floor", type=float, default=d.lr_floor, help="rate multiplier reached at --decay-epochs")
    t.add_argument("--sigma-d", type=float, default=M.PriorConfig().sigma_d,
                   help="distance scale (m^2) of the diversity term")
    t.add_argument("--div-scope", choices=("decoder", "all"), default=d.div_scope,
                   help="parameters trained by the diversity stage")
    t.add_argument("--disc-stats", action="store_true", help="discriminators also see batch mean and log-std")
    t.add_argument("--width", type=int, default=32, help="feature width D")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    gen = sub.add_parser("generate", help="behavior-controlled futures (+ SVG)")
    gen.add_argument("--ckpt", required=True)
    gen.add_argument("--data", required=True)
    gen.add_argument("--modes", type=int, default=6)
    gen.add_argument("--agg-offset", type=float, default=1.0)
    gen.add_argument("--intent", choices=("none", "forward", "left", "right"), default="none")
    gen.add_argument("--svg", action="store_true")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="metrics report")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt")
    e.add_argument("--predictions", help="trajectories JSON to score instead of a checkpoint")
    e.add_argument("--agg-offset", type=float, default=1.0)
    e.add_argument("--no-clusters", action="store_true")
    e.add_argument("--no-sweep", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="safety-critical aggressiveness / intent sweep")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--offsets", default=",".join(f"{o:g}" for o in OFFSETS))
    s.add_argument("--intents", default="left,right")
    s.add_argument("--threshold", type=float, default=RISK_DISTANCE)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    pr = sub.add_parser("predict", help="K candidates, classifier scores and codes per agent")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--agg-offset", type=float, default=1.0)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        out, inputs, outputs = args.func(args)
        write_manifest(out, args.command, args, inputs, outputs, started)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tae {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ScenarioError, CheckpointError, FileNotFoundError) as exc:
        print(f"tae {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as exc:
        print(f"tae {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
