"""Command-line entry point.

    mpcl [--config FILE] [--seed N] [--out DIR] [--quiet] COMMAND [options]

Configuration is one flat JSON object with dotted keys (``pretrain.lr``,
``encoder.kind`` ...). Precedence: built-in defaults, then the config file,
then ``--set key=value``, then dedicated command flags. The effective
configuration is written to ``<out>/effective_config.json``; re-running with
``--config`` pointing at that file reproduces the run.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .contrastive import LossConfig
from .data.folds import FoldPlan, make_folds
from .data.io import load_manifest
from .data.synth import SyntheticSpec, synth_generate
from .downstream.crossval import PipelineConfig, crossval
from .downstream.features import extract_batch, fuse_concat, write_feature_dump
from .downstream.metrics import compute_metrics, summarize_folds
from .downstream.probe import ProbeConfig, default_probe_train, predict, train_probe
from .encoders import EncoderConfig, ProjectionConfig
from .exceptions import ConfigError, DataError, MPCLError, NumericalError
from .gradcheck import run_gradcheck
from .numcore import derive_seed, make_rng
from .train import TrainConfig, load_checkpoint, pretrain, save_checkpoint, write_log

log = logging.getLogger("mpcl")

EFFECTIVE_CONFIG = "effective_config.json"


# ---------------------------------------------------------------------------
# configuration


def _flat(prefix, d, skip=()):
    out = {}
    for k, v in d.items():
        if k in skip:
            continue
        out[f"{prefix}.{k}"] = list(v) if isinstance(v, tuple) else v
    return out


def default_config() -> dict:
    synth = SyntheticSpec()
    cfg = {"seed": 0}
    cfg.update(_flat("synth", synth.to_dict(), skip=("modalities",)))
    cfg["synth.modalities"] = len(synth.modalities)
    cfg["synth.dim"] = synth.modalities[0][1]
    cfg.update(_flat("encoder", EncoderConfig().to_dict(), skip=("input_dim",)))
    cfg.update(_flat("projection", ProjectionConfig().to_dict(), skip=("in_dim",)))
    cfg.update(_flat("loss", LossConfig().to_dict()))
    cfg.update(_flat("pretrain", TrainConfig().to_dict(), skip=("seed",)))
    probe = ProbeConfig()
    cfg.update(_flat("probe", {k: v for k, v in asdict(probe).items() if k != "train"}))
    cfg.update(_flat("probe.train", default_probe_train().to_dict(), skip=("seed",)))
    cfg.update({"folds.k": 10, "folds.mode": "actor_split", "split.test_fraction": 0.25})
    return cfg


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path) -> dict:
    try:
        raw = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object of dotted keys")
    return doc


def merge_config(base: dict, updates: dict, source: str) -> dict:
    unknown = sorted(set(updates) - set(base))
    if unknown:
        raise ConfigError(f"{source}: unknown config keys {unknown}")
    out = dict(base)
    out.update(updates)
    return out


def _section(cfg: dict, prefix: str) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p) and "." not in k[len(p):]}


def _build(kind, kwargs, what):
    try:
        return kind(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def synth_spec(cfg) -> SyntheticSpec:
    s = _section(cfg, "synth")
    count, dim = int(s.pop("modalities")), int(s.pop("dim"))
    return _build(lambda **kw: SyntheticSpec.with_modalities(count, dim, **kw), s, "synth")


def pipeline_config(cfg, seed: int) -> PipelineConfig:
    encoder = _build(EncoderConfig, dict(_section(cfg, "encoder"), input_dim=1), "encoder")
    projection = _build(ProjectionConfig, dict(_section(cfg, "projection"), in_dim=encoder.embed_dim), "projection")
    loss = _build(LossConfig, _section(cfg, "loss"), "loss")
    train = _build(TrainConfig, dict(_section(cfg, "pretrain"), seed=derive_seed(seed, "pretrain")), "pretrain")
    probe_train = _build(TrainConfig, dict(_section(cfg, "probe.train"), seed=derive_seed(seed, "probe")),
                         "probe.train")
    probe = _build(ProbeConfig, dict(_section(cfg, "probe"), train=probe_train), "probe")
    return PipelineConfig(encoder, projection, loss, train, probe)


# ---------------------------------------------------------------------------
# commands


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_synth(args, cfg):
    out = _out_dir(args)
    spec = synth_spec(cfg)
    manifest = synth_generate(spec, make_rng(cfg["seed"], "synth"), out)
    plan = make_folds(manifest, cfg["folds.k"], cfg["folds.mode"], derive_seed(cfg["seed"], "folds"))
    plan.save(out / "folds.json")
    log.info("wrote %d samples, %d modalities to %s", len(manifest.samples), len(manifest.modalities), out)
    return {"manifest": str(out / "manifest.json"), "samples": len(manifest.samples),
            "folds": str(out / "folds.json")}


def _train_ids(args, manifest):
    if args.fold_plan is None:
        return manifest.sample_ids
    plan = FoldPlan.load(args.fold_plan)
    return [s for s in manifest.sample_ids if plan.assignment.get(s, args.fold) != args.fold]


def cmd_pretrain(args, cfg):
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    pc = pipeline_config(cfg, cfg["seed"])
    ids = _train_ids(args, manifest)
    if args.fold_plan and FoldPlan.load(args.fold_plan).mode == "actor_split":
        pc = replace(pc, pretrain=replace(pc.pretrain, val_by_group=True))
    data = manifest.select(ids).strip_labels()
    progress = None if args.quiet else (lambda r: log.info("epoch %d lr %.6g train %.4f val %s", r["epoch"], r["lr"],
                                                            r["train_loss"], r["val_loss"]))
    result = pretrain(data, pc.encoders_for(manifest.modalities), pc.loss, pc.pretrain, pc.projection_config(),
                      timing=args.timing, progress=progress)
    save_checkpoint(out / "checkpoint.mpck", result.model, pc.pretrain, pc.loss,
                    extra={"best_epoch": result.best_epoch, "epochs_run": result.epochs_run,
                           "dataset": manifest.dataset, "samples": len(ids), "master_seed": cfg["seed"]})
    write_log(result.log, out / "train_log.jsonl")
    return {"checkpoint": str(out / "checkpoint.mpck"), "log": str(out / "train_log.jsonl"),
            "epochs_run": result.epochs_run, "best_epoch": result.best_epoch,
            "checksum": result.model.store.checksum()}


def _fused(model, manifest, ids):
    samples = manifest.load_samples(ids)
    names = manifest.modality_names
    missing = [n for n in names if n not in model.names]
    if missing:
        raise DataError(f"checkpoint has no encoder for modalities {missing}")
    return fuse_concat(extract_batch(model, samples, names), order=names)


def cmd_extract(args, cfg):
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    model, _ = load_checkpoint(args.checkpoint)
    fused = _fused(model, manifest, manifest.sample_ids)
    write_feature_dump(out / "features.mpft", fused)
    _write_json(out / "feature_ids.json", manifest.sample_ids)
    return {"features": str(out / "features.mpft"), "rows": int(fused.shape[0]), "dim": int(fused.shape[1])}


def _holdout(manifest, fraction, seed):
    ids = manifest.sample_ids
    n_test = int(round(fraction * len(ids)))
    if not 1 <= n_test < len(ids) - 1:
        raise ConfigError(f"split.test_fraction {fraction} leaves no usable train/test split")
    perm = make_rng(seed, "holdout").permutation(len(ids))
    test = set(perm[:n_test].tolist())
    return [s for i, s in enumerate(ids) if i not in test], [s for i, s in enumerate(ids) if i in test]


def _metrics_doc(reports):
    mean, std = summarize_folds(reports)
    first = reports[0].to_dict()
    per_class = {name: {k: v for k, v in m.items() if k in ("wacc", "f1", "acc")}
                 for name, m in first["per_class"].items()}
    if first["task"] == "multilabel":
        for m in per_class.values():
            m.pop("acc", None)
    return {"task": first["task"], "per_class": per_class, "overall": first["overall"],
            "folds": [r.to_dict() for r in reports], "mean": mean, "std": std}


def cmd_probe(args, cfg):
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    if args.task and args.task != manifest.task:
        raise ConfigError(f"--task {args.task} but the manifest declares a {manifest.task} task")
    model, _ = load_checkpoint(args.checkpoint)
    pc = pipeline_config(cfg, cfg["seed"])
    if args.fold_plan:
        plan = FoldPlan.load(args.fold_plan)
        test_ids = [s for s in manifest.sample_ids if plan.assignment.get(s) == args.fold]
        train_ids = [s for s in manifest.sample_ids if plan.assignment.get(s) != args.fold]
    else:
        train_ids, test_ids = _holdout(manifest, cfg["split.test_fraction"], cfg["seed"])
    probe = train_probe(_fused(model, manifest, train_ids), manifest.label_array(train_ids), pc.probe,
                        n_classes=len(manifest.classes))
    report = compute_metrics(predict(probe, _fused(model, manifest, test_ids)), manifest.label_array(test_ids),
                             manifest.task, manifest.classes)
    doc = _metrics_doc([report])
    _write_json(out / "metrics.json", doc)
    if not args.quiet:
        _print_report(doc, report.accuracy)
    return {"metrics": str(out / "metrics.json"), "overall": doc["overall"], "acc": report.accuracy}


def _print_report(doc, accuracy):
    for name, m in doc["per_class"].items():
        wacc = "n/a" if m["wacc"] is None else f"{m['wacc']:.4f}"
        f1 = "n/a" if m["f1"] is None else f"{m['f1']:.4f}"
        print(f"{name:>16}  w-ACC {wacc}  F1 {f1}", file=sys.stderr)
    o = doc["overall"]
    print(f"{'overall':>16}  w-ACC {o['wacc']}  F1 {o['f1']}", file=sys.stderr)
    if accuracy is not None:
        print(f"{'ACC':>16}  {accuracy:.4f}", file=sys.stderr)


def cmd_crossval(args, cfg):
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    if args.fold_plan:
        plan = FoldPlan.load(args.fold_plan)
    else:
        plan = make_folds(manifest, cfg["folds.k"], cfg["folds.mode"], derive_seed(cfg["seed"], "folds"))
        plan.save(out / "folds.json")
    result = crossval(manifest, plan, pipeline_config(cfg, cfg["seed"]), seed=cfg["seed"], workers=args.parallel)
    doc = _metrics_doc([f.report for f in result.folds])
    doc["folds"] = result.to_dict()["folds"]
    _write_json(out / "metrics.json", doc)
    return {"metrics": str(out / "metrics.json"), "k": plan.k, "mean": result.mean, "std": result.std}


def cmd_gradcheck(args, cfg):
    out = _out_dir(args)
    report = run_gradcheck(configs=args.configs, seed=cfg["seed"], fault=args.inject_fault)
    _write_json(out / "gradcheck.json", report)
    if not report["passed"]:
        raise NumericalError(f"gradient check failed: max relative error {report['max_rel_error']:.3e} "
                             f">= {report['tolerance']:g}")
    return {"passed": True, "max_rel_error": report["max_rel_error"], "report": str(out / "gradcheck.json")}


# ---------------------------------------------------------------------------
# argument parsing


# dedicated flags: dest -> dotted config key
FLAG_KEYS = {
    "classes": "synth.classes", "per_class": "synth.per_class", "modalities": "synth.modalities",
    "dim": "synth.dim", "latent_dim": "synth.latent_dim", "sigma_obs": "synth.sigma_obs",
    "sigma_class": "synth.sigma_class", "synth_task": "synth.task", "groups": "synth.groups",
    "k": "folds.k", "fold_mode": "folds.mode",
    "encoder": "encoder.kind", "lr": "pretrain.lr", "epochs": "pretrain.max_epochs",
    "batch_size": "pretrain.batch_size", "window": "pretrain.window_len", "patience": "pretrain.patience",
    "temperature": "loss.temperature", "probe_epochs": "probe.train.max_epochs",
}


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="JSON file of dotted config keys")
    parser.add_argument("--seed", type=int, default=default, help="master seed (default 0)")
    parser.add_argument("--out", default=default if suppress else ".", help="output directory")
    parser.add_argument("--quiet", action="store_true", default=default if suppress else False)
    parser.add_argument("--set", dest="overrides", action="append", default=default if suppress else [],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpcl", description="Multimodal pairwise contrastive learning.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--modalities", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--sigma-obs", dest="sigma_obs", type=float)
    p.add_argument("--sigma-class", dest="sigma_class", type=float)
    p.add_argument("--task", dest="synth_task", choices=("multiclass", "multilabel"))
    p.add_argument("--groups", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--fold-mode", dest="fold_mode", choices=("actor_split", "standard"))

    def model_flags(p):
        p.add_argument("--manifest", required=True)
        p.add_argument("--encoder", choices=("mlp", "tcn", "attn"))
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--window", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--temperature", type=float)

    p = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining")
    model_flags(p)
    p.add_argument("--fold-plan", dest="fold_plan")
    p.add_argument("--fold", type=int, default=0, help="with --fold-plan: train on every other fold")
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds in the log")

    p = sub.add_parser("extract", parents=[common], help="dump fused frozen features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("probe", parents=[common], help="train and score the prediction head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("multiclass", "multilabel"))
    p.add_argument("--fold-plan", dest="fold_plan")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--probe-epochs", dest="probe_epochs", type=int)

    p = sub.add_parser("crossval", parents=[common], help="k-fold pretrain + probe")
    model_flags(p)
    p.add_argument("--fold-plan", dest="fold_plan")
    p.add_argument("--k", type=int)
    p.add_argument("--fold-mode", dest="fold_mode", choices=("actor_split", "standard"))
    p.add_argument("--probe-epochs", dest="probe_epochs", type=int)
    p.add_argument("--parallel", type=int, default=1, help="worker processes for folds")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--inject-fault", dest="inject_fault", help=argparse.SUPPRESS)
    return parser


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "extract": cmd_extract, "probe": cmd_probe,
            "crossval": cmd_crossval, "gradcheck": cmd_gradcheck}


def effective_config(args) -> dict:
    cfg = default_config()
    if args.config:
        # an echoed effective config is a valid input; "command" is informational
        doc = load_config(args.config)
        doc.pop("command", None)
        cfg = merge_config(cfg, doc, args.config)
    sets = {}
    for item in args.overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        sets[key.strip()] = parse_value(value)
    cfg = merge_config(cfg, sets, "--set")
    flags = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items() if getattr(args, dest, None) is not None}
    cfg = merge_config(cfg, flags, "flags")
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    if args.quiet:
        warnings.simplefilter("ignore")
    try:
        cfg = effective_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / EFFECTIVE_CONFIG, dict(cfg, command=args.command))
        summary = COMMANDS[args.command](args, cfg)
    except MPCLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    print(json.dumps(summary, sort_keys=True, default=_jsonable))
    return 0


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not JSON serialisable: {type(x).__name__}")


if __name__ == "__main__":
    sys.exit(main())
