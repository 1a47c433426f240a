"""Command-line entry point.

Subcommands: generate, pretrain, finetune, train, evaluate, ablate, sweep,
gradcheck. Configuration comes from a JSON file plus repeatable
``--set key=value`` overrides; every run writes a manifest with the resolved
config and artifact hashes.

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from .evaluation import (ablation_csv_rows, heatmap_csv_rows, metrics,
                         per_step_table, run_ablation, sensitivity_sweep)
from .model import ModelState
from .training import (RunConfig, curve_to_csv_rows, predict_windows,
                       run_two_stage)


class ConfigError(ValueError):
    pass


_CONFIG_ALIASES = {"lambda": "lam", "L": "patch_length", "p": "walk_p", "q": "walk_q"}


def load_config(path=None, overrides=()):
    """RunConfig from an optional JSON file plus key=value overrides."""
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    merged = {}

    def absorb(key, value):
        key = _CONFIG_ALIASES.get(key, key)
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = value

    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        for key, value in raw.items():
            absorb(key, value)

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        absorb(key, value)

    try:
        cfg = RunConfig(**merged)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    return cfg


def dump_config(cfg):
    return cfg.to_dict()


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _write_manifest(out_dir, cfg, artifacts):
    manifest = {
        "config": dump_config(cfg),
        "seed": cfg.seed,
        "artifacts": {os.path.basename(p): _sha256(p) for p in artifacts},
    }
    path = os.path.join(out_dir, "manifest.json")
    _write_json(path, manifest)
    return path


def _load_dataset(data_dir, cfg):
    values, edges, meta = data_mod.dataset_paths(data_dir)
    dataset = data_mod.load_csv(values, edges, meta)
    splits = data_mod.prepare_splits(dataset, cfg.history, cfg.horizon)
    return dataset, splits


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset = data_mod.synthesize(args.nodes, args.steps, cfg.seed)
    paths = data_mod.dataset_paths(args.out)
    data_mod.save_csv(dataset, *paths)
    _write_manifest(args.out, cfg, paths)
    print(f"wrote synthetic dataset ({args.nodes} nodes, {args.steps} steps) to {args.out}")
    return 0


def cmd_train(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset, splits = _load_dataset(args.data, cfg)
    result = run_two_stage(cfg, splits, dataset.graph, log=print if args.verbose else None)

    ckpt = os.path.join(args.out, "checkpoint.json")
    manifest_path = os.path.join(args.out, "model.json")
    result.state.save(ckpt, manifest_path)
    curve_path = os.path.join(args.out, "curves.csv")
    _write_csv(curve_path, curve_to_csv_rows(result.curve))
    report_path = os.path.join(args.out, "metrics.json")
    _write_json(report_path, result.report)
    steps_path = os.path.join(args.out, "per_step.csv")
    _write_csv(steps_path, per_step_table(result.report))
    _write_manifest(args.out, cfg, [ckpt, manifest_path, curve_path, report_path, steps_path])
    print(f"test MAE {result.report['overall']['mae']:.6f} "
          f"(best val MAE {result.best_val_mae:.6f})")
    return 0


def cmd_pretrain(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    cfg = dataclasses.replace(cfg, finetune_epochs=0)
    dataset, splits = _load_dataset(args.data, cfg)
    result = run_two_stage(cfg, splits, dataset.graph, log=print if args.verbose else None)
    ckpt = os.path.join(args.out, "checkpoint.json")
    manifest_path = os.path.join(args.out, "model.json")
    result.state.save(ckpt, manifest_path)
    curve_path = os.path.join(args.out, "curves.csv")
    _write_csv(curve_path, curve_to_csv_rows(result.curve))
    _write_manifest(args.out, cfg, [ckpt, manifest_path, curve_path])
    last = [p for p in result.curve if p.stage == "pretrain"]
    if last:
        print(f"final pretrain loss {last[-1].train_loss:.6f}")
    return 0


def cmd_finetune(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset, splits = _load_dataset(args.data, cfg)
    initial = ad.load_checkpoint(args.checkpoint)
    result = run_two_stage(cfg, splits, dataset.graph, initial_values=initial,
                           skip_pretrain=True, log=print if args.verbose else None)
    ckpt = os.path.join(args.out, "checkpoint.json")
    manifest_path = os.path.join(args.out, "model.json")
    result.state.save(ckpt, manifest_path)
    curve_path = os.path.join(args.out, "curves.csv")
    _write_csv(curve_path, curve_to_csv_rows(result.curve))
    report_path = os.path.join(args.out, "metrics.json")
    _write_json(report_path, result.report)
    _write_manifest(args.out, cfg, [ckpt, manifest_path, curve_path, report_path])
    print(f"test MAE {result.report['overall']['mae']:.6f}")
    return 0


def cmd_evaluate(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset, splits = _load_dataset(args.data, cfg)
    state = ModelState.load(args.checkpoint, args.model_manifest)
    _, ys = data_mod.stack_windows(splits.test)
    preds = predict_windows(splits.test, dataset.graph, state)
    report = metrics(preds, ys, denorm=splits.denormalize)
    report["variant"] = cfg.variant
    report["seed"] = cfg.seed
    report_path = os.path.join(args.out, "metrics.json")
    _write_json(report_path, report)
    steps_path = os.path.join(args.out, "per_step.csv")
    _write_csv(steps_path, per_step_table(report))
    _write_manifest(args.out, cfg, [report_path, steps_path])
    print(f"test MAE {report['overall']['mae']:.6f}")
    return 0


def cmd_ablate(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset, splits = _load_dataset(args.data, cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    ablation = run_ablation(splits, dataset.graph, cfg, seeds,
                            log=print if args.verbose else None)
    table_path = os.path.join(args.out, "ablation.csv")
    _write_csv(table_path, ablation_csv_rows(ablation))
    summary_path = os.path.join(args.out, "ablation_summary.json")
    _write_json(summary_path, ablation["summary"])
    _write_manifest(args.out, cfg, [table_path, summary_path])
    for variant, stats in ablation["summary"].items():
        print(f"{variant}: MAE {stats['mae']:.6f} +/- {stats['mae_std']:.6f}")
    return 0


def cmd_sweep(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset, splits = _load_dataset(args.data, cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    ps_grid = [float(v) for v in args.ps_grid.split(",")]
    pt_grid = [float(v) for v in args.pt_grid.split(",")]
    sweep = sensitivity_sweep(splits, dataset.graph, cfg, ps_grid, pt_grid, seeds,
                              log=print if args.verbose else None)
    heat_path = os.path.join(args.out, "heatmap.csv")
    _write_csv(heat_path, heatmap_csv_rows(sweep))
    argmin_path = os.path.join(args.out, "argmin.json")
    _write_json(argmin_path, sweep["argmin"])
    _write_manifest(args.out, cfg, [heat_path, argmin_path])
    print(f"best cell p_s={sweep['argmin']['p_s']} p_t={sweep['argmin']['p_t']} "
          f"val MAE {sweep['argmin']['val_mae']:.6f}")
    return 0


def cmd_gradcheck(args, cfg):
    from .gradcheck import reference_gradcheck
    errors = reference_gradcheck(seed=cfg.seed)
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name}: max relative error {err:.3e}")
    print(f"overall max relative error {worst:.3e}")
    return 0 if worst < 1e-4 else 2


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="maskcast",
                                     description="Masked-reconstruction pretraining for graph time series forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="config override (repeatable)")
        p.add_argument("--verbose", action="store_true")
        if data:
            p.add_argument("--data", required=True, help="dataset directory (values/edges/meta triplet)")

    p = sub.add_parser("generate", help="write a synthetic dataset triplet")
    common(p, data=False)
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--steps", type=int, default=3000)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining only")
    common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune from a pretraining checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("train", help="full two-stage run")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-manifest", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the masking-variant ablation table")
    common(p)
    p.add_argument("--seeds", default="0")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep", help="masking-ratio sensitivity heatmap")
    common(p)
    p.add_argument("--seeds", default="0")
    p.add_argument("--ps-grid", default="0.2,0.5,0.8")
    p.add_argument("--pt-grid", default="0.2,0.5,0.8")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p, data=False)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.fn(args, cfg)
    except (OSError, ValueError, ad.ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
