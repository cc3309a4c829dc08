"""Command-line entry point: synth, preprocess, pretrain, evaluate, sweep, report.

Every subcommand accepts ``--config`` (YAML or JSON), ``--seed`` and
``--out``; flags override config-file values and the merged config is what
gets recorded in the output directory's ``run.json``. Relative data paths
are resolved against ``$NCL_DATA_ROOT`` when they do not exist as given.

Errors exit with 2 (config), 3 (data) or 4 (numerical) after printing one
line of the form ``ncl-error kind=<kind> code=<n> message=<json string>``.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from .data import (
    SynthConfig,
    fit_scaler,
    preprocess,
    read_dataset,
    synth_generate,
    synth_schema,
    to_raw,
    write_dataset,
)
from .encoder import load_checkpoint, save_checkpoint
from .evaluation import ProbeConfig, Protocol, evaluate_representations, report_csv, report_json
from .exceptions import ConfigError, DataError, NCLError
from .reporting import aggregate, aggregate_csv, alpha_curve_svg, load_report
from .runs import MANIFEST_NAME, RunManifest, tree_hash, write_rows_csv
from .training import CONTRASTIVE_METHODS, TrainConfig, pretrain, train_seq2seq, train_supervised

logger = logging.getLogger("ncl")

DATA_ROOT_ENV = "NCL_DATA_ROOT"
SECTIONS = ("synth", "train", "protocol", "grid")


# config handling


def load_config(path, section=None) -> dict:
    """Read a YAML/JSON mapping; with ``section``, return that block of a sectioned file."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        cfg = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({str(exc).splitlines()[0]})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if section is not None and any(k in cfg for k in SECTIONS):
        block = cfg.get(section) or {}
        if not isinstance(block, dict):
            raise ConfigError(f"{path}: section {section!r} must be a mapping")
        return dict(block)
    return cfg


def merge(base: dict, overrides: dict) -> dict:
    out = dict(base)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def resolve_data(path) -> Path:
    root = os.environ.get(DATA_ROOT_ENV)
    if path is None:
        if not root:
            raise DataError(f"no dataset given; pass --data or set {DATA_ROOT_ENV}")
        return Path(root)
    p = Path(path)
    if not p.exists() and root and not p.is_absolute():
        p = Path(root) / p
    if not p.exists():
        raise DataError(f"dataset path {path} does not exist")
    return p


def _out_dir(args, default=None) -> Path:
    out = args.out or default
    if out is None:
        raise ConfigError("--out is required")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# commands


def cmd_synth(args):
    cfg = merge(load_config(args.config, "synth"), {"seed": args.seed, "n_patients": args.n_patients,
                                                    "prevalence": args.prevalence})
    try:
        scfg = SynthConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(f"synth config: {exc}") from None
    out = _out_dir(args)
    raw = to_raw(synth_generate(scfg))
    schema = synth_schema(scfg)
    if args.preprocess:
        stats = fit_scaler(raw, schema)
        write_dataset(out, preprocess(raw, stats, schema), schema, stats)
    else:
        write_dataset(out, raw, schema, channels=[v.name for v in schema.series])
    man = RunManifest("synth", {**asdict(scfg), "preprocess": args.preprocess}, scfg.seed)
    man.add_artifact("dataset", out / "manifest.json", out)
    man.write(out)
    return out


def cmd_preprocess(args):
    src = resolve_data(args.input)
    stays, schema, _ = read_dataset(src)
    out = _out_dir(args)
    if out.resolve() == src.resolve():
        raise ConfigError("preprocess output must differ from its input")
    stats = None if _processed(src) else fit_scaler(stays, schema)
    processed = preprocess(stays, stats, schema)
    write_dataset(out, processed, schema, stats)
    man = RunManifest("preprocess", {"input": str(src)}, None, inputs={"data": tree_hash(src)})
    man.add_artifact("dataset", out / "manifest.json", out)
    man.write(out)
    return out


def _processed(path):
    return json.loads((Path(path) / "manifest.json").read_text()).get("processed", False)


def _load_processed(path):
    stays, _, _ = read_dataset(path)
    if not _processed(path):
        raise DataError(f"{path}: dataset is not preprocessed; run `ncl preprocess` first")
    return stays


def train_config_from(args) -> TrainConfig:
    cfg = load_config(args.config, "train")
    flags = {
        "method": args.method, "alpha": args.alpha, "w": args.w, "preset": args.preset, "steps": args.steps,
        "batch_size": args.batch_size, "queue_size": args.queue_size, "tau": args.tau, "seed": args.seed,
        "task": args.task, "momentum": args.momentum,
        "freeze_projector": True if args.freeze_projector else None,
        "neighbor_sampling": True if args.neighbor_sampling else None,
    }
    merged = merge(cfg, flags)
    try:
        return TrainConfig.from_dict(merged)
    except TypeError as exc:
        raise ConfigError(f"train config: {exc}") from None


def cmd_pretrain(args):
    cfg = train_config_from(args)
    data = resolve_data(args.data)
    stays = _load_processed(data)
    out = _out_dir(args)
    logger.info("pretraining %s (alpha=%s, w=%s) for %d steps", cfg.method, cfg.alpha, cfg.w, cfg.steps)
    if cfg.method in CONTRASTIVE_METHODS:
        params, header, history = pretrain(stays, cfg)
    elif cfg.method == "e2e":
        init = load_checkpoint(args.init)[0] if args.init else None
        params, header, history = train_supervised(stays, cfg, init=init)
    else:
        params, header, history = train_seq2seq(stays, cfg, forecast=cfg.method == "ae_forecast")
    header = {**header, "data": str(data)}
    save_checkpoint(out / "checkpoint.json", params, header)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    write_rows_csv(out / "metrics.csv", history)
    inputs = {"data": tree_hash(data)}
    if args.init:
        inputs["init"] = tree_hash(args.init)
    man = RunManifest("pretrain", cfg.to_dict(), cfg.seed, inputs=inputs)
    for name, f in (("checkpoint", "checkpoint.json"), ("config", "config.yaml"), ("metrics", "metrics.csv")):
        man.add_artifact(name, out / f, out)
    man.write(out)
    return out


def protocol_from(args) -> Protocol:
    cfg = load_config(args.config, "protocol")
    probe = dict(cfg.pop("probe", {}) or {})
    probe = merge(probe, {"lr": args.probe_lr, "max_epochs": args.max_epochs})
    flags = {
        "tasks": args.tasks, "heads": args.heads, "seeds": args.seeds, "label_fractions": args.label_fractions,
    }
    merged = merge(cfg, flags)
    merged["probe"] = probe
    known = {f.name for f in fields(Protocol)}
    if set(merged) - known:
        raise ConfigError(f"unknown protocol keys: {sorted(set(merged) - known)}")
    bad = (set(probe) - {f.name for f in fields(ProbeConfig)}) | ({"head", "seed"} & set(probe))
    if bad:
        raise ConfigError(f"unknown or reserved probe keys: {sorted(bad)}")
    return Protocol.from_dict(merged)


def cmd_evaluate(args):
    run_dir = Path(args.run_dir)
    ckpt = run_dir / "checkpoint.json"
    if not ckpt.exists():
        raise DataError(f"{run_dir}: no checkpoint.json")
    params, header = load_checkpoint(ckpt)
    data = resolve_data(args.data or header.get("data"))
    stays = _load_processed(data)
    protocol = protocol_from(args)
    out = _out_dir(args, run_dir / "eval")
    report = evaluate_representations(stays, params, header, protocol)
    (out / "report.json").write_text(report_json(report))
    (out / "report.csv").write_text(report_csv(report))
    man = RunManifest("evaluate", protocol.to_dict(), None,
                      inputs={"checkpoint": tree_hash(ckpt), "data": tree_hash(data)})
    man.add_artifact("report_json", out / "report.json", out)
    man.add_artifact("report_csv", out / "report.csv", out)
    man.write(out)
    return out


def _report_dir(run_dir):
    run_dir = Path(run_dir)
    for cand in (run_dir, run_dir / "eval"):
        if (cand / "report.json").exists():
            return cand
    raise DataError(f"{run_dir}: no report.json (looked in the directory and its eval/ subdirectory)")


def cmd_report(args):
    out = _out_dir(args)
    reports = [(str(Path(r)), load_report(_report_dir(r))) for r in args.run_dirs]
    rows = aggregate(reports)
    (out / "aggregate.csv").write_text(aggregate_csv(rows))
    (out / "aggregate.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    alpha_curve_svg(rows, out / "alpha_curve.svg", args.metric, args.head, args.label_fraction)
    inputs = {str(r): tree_hash(_report_dir(r) / "report.json") for r in args.run_dirs}
    man = RunManifest("report", {"metric": args.metric, "head": args.head, "label_fraction": args.label_fraction},
                      None, inputs=inputs)
    for name in ("aggregate.csv", "aggregate.json", "alpha_curve.svg"):
        man.add_artifact(name, out / name, out)
    man.write(out)
    return out


def _cell_name(values):
    return "_".join(f"{k}{v}" for k, v in values.items()) or "base"


def cmd_sweep(args):
    if args.config is None:
        raise ConfigError("sweep needs --config with `train` and `grid` sections")
    full = load_config(args.config)
    base = dict(full.get("train") or {})
    grid = full.get("grid") or {}
    if not isinstance(grid, dict) or not all(isinstance(v, list) and v for v in grid.values()):
        raise ConfigError("grid must map config keys to non-empty lists")
    protocol = full.get("protocol") or {}
    if args.seed is not None:
        base["seed"] = args.seed
    data = resolve_data(args.data)
    out = _out_dir(args)
    keys = sorted(grid)
    cells = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    jobs = []
    for values in cells:
        cell = out / _cell_name(values)
        cell.mkdir(exist_ok=True)
        cfg_path = cell / "cell.yaml"
        cfg_path.write_text(yaml.safe_dump({"train": {**base, **values}, "protocol": protocol}, sort_keys=True))
        jobs.append((cell, cfg_path))

    def run_cell(job):
        cell, cfg_path = job
        for cmd in (["pretrain", "--config", str(cfg_path), "--data", str(data), "--out", str(cell)],
                    ["evaluate", str(cell), "--config", str(cfg_path), "--data", str(data)]):
            proc = subprocess.run([sys.executable, "-m", "ncl.cli", *cmd], capture_output=True, text=True)
            if proc.returncode:
                return cell, proc.returncode, proc.stderr.strip().splitlines()[-1:] or [""]
        return cell, 0, None

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(run_cell, jobs))
    failed = [(c, code, msg) for c, code, msg in results if code]
    for c, code, msg in failed:
        logger.error("cell %s failed with exit %d: %s", c.name, code, msg[0])
    ok = [c for c, code, _ in results if not code]
    if ok:
        ns = argparse.Namespace(out=str(out / "report"), run_dirs=[str(c) for c in ok], metric=args.metric,
                                head=args.head, label_fraction=args.label_fraction)
        cmd_report(ns)
    man = RunManifest("sweep", {"train": base, "grid": grid, "protocol": protocol}, base.get("seed"),
                      inputs={"data": tree_hash(data)})
    man.artifacts = {c.name: c.name for c in ok}
    man.write(out)
    if failed:
        c, code, msg = failed[0]
        err = {2: ConfigError, 3: DataError}.get(code, NCLError)
        raise err(f"{len(failed)} of {len(cells)} sweep cells failed; first {c.name}: {msg[0]}")
    return out


# argument parsing


def _common(p):
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def _csv_list(cast):
    def parse(s):
        try:
            return [cast(x) for x in s.split(",") if x]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {s!r}") from None
    return parse


def _float_or_inf(s):
    return float("inf") if s.lower() in ("inf", "+inf", "infinity") else float(s)


def _report_flags(p):
    p.add_argument("--metric", default="auroc")
    p.add_argument("--head", default="linear")
    p.add_argument("--label-fraction", type=float, default=1.0)


def build_parser():
    parser = argparse.ArgumentParser(prog="ncl", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic ICU cohort")
    _common(p)
    p.add_argument("--n-patients", type=int)
    p.add_argument("--prevalence", type=float)
    p.add_argument("--preprocess", action="store_true", help="also fit scaling and write the processed form")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="forward-fill, scale, one-hot and impute a raw dataset")
    _common(p)
    p.add_argument("input")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", help="train an encoder (contrastive, supervised or seq2seq)")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--method")
    p.add_argument("--preset", choices=["mimic", "physionet"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--w", type=_float_or_inf)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--queue-size", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--task")
    p.add_argument("--freeze-projector", action="store_true")
    p.add_argument("--neighbor-sampling", action="store_true")
    p.add_argument("--init", help="checkpoint to fine-tune from (method e2e)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("evaluate", help="probe a frozen encoder and write report.json/report.csv")
    _common(p)
    p.add_argument("run_dir")
    p.add_argument("--data")
    p.add_argument("--tasks", type=_csv_list(str))
    p.add_argument("--heads", type=_csv_list(str))
    p.add_argument("--seeds", type=int)
    p.add_argument("--label-fractions", type=_csv_list(float))
    p.add_argument("--probe-lr", type=float)
    p.add_argument("--max-epochs", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="pretrain + evaluate every cell of a grid, one process per cell")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--jobs", type=int, default=1)
    _report_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate run reports and draw the alpha curve")
    _common(p)
    p.add_argument("run_dirs", nargs="+")
    _report_flags(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        out = args.func(args)
    except NCLError as exc:
        print(f"ncl-error kind={exc.kind} code={exc.exit_code} message={json.dumps(str(exc))}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"ncl-error kind=data code=3 message={json.dumps(str(exc))}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
