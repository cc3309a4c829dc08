"""Frozen-representation probes and the evaluation report."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .data import check_patient_disjoint, stratified_label_fraction_split
from .encoder import EncoderConfig, load_checkpoint, subset
from .exceptions import ConfigError, DataError
from .metrics import auprc, auroc, linear_weighted_kappa
from .training import cross_entropy, head_logits, init_head, representations, stay_labels

REPORT_VERSION = 1


@dataclass
class ProbeConfig:
    head: str = "linear"
    lr: float = 1e-4
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.head not in ("linear", "mlp"):
            raise ConfigError(f"unknown probe head {self.head!r}")


@dataclass
class Probe:
    params: dict
    n_classes: int
    best_val_loss: float
    epochs: int

    def logits(self, Z):
        with ag.no_grad():
            return head_logits(np.asarray(Z, float), self.params).data

    def predict_proba(self, Z):
        lg = self.logits(Z)
        lg = lg - lg.max(axis=1, keepdims=True)
        e = np.exp(lg)
        return e / e.sum(axis=1, keepdims=True)


def fit_probe(Z, y, Z_val=None, y_val=None, cfg: ProbeConfig | None = None, n_classes=None) -> Probe:
    """Train a linear or one-hidden-layer head on fixed representations.

    Mini-batch Adam on softmax cross-entropy; after each epoch the validation
    loss is measured and the best epoch's weights are kept. Training stops
    after ``patience`` epochs without improvement.
    """
    cfg = ProbeConfig() if cfg is None else cfg
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if len(np.unique(y)) < 2:
        raise DataError("probe training labels contain a single class")
    if Z_val is None:
        Z_val, y_val = Z, y
    Z_val = np.asarray(Z_val, dtype=np.float64)
    y_val = np.asarray(y_val).astype(np.int64)
    n_classes = int(max(y.max(), y_val.max()) + 1) if n_classes is None else n_classes
    rng = np.random.default_rng(cfg.seed)
    params = init_head(cfg.head, Z.shape[1], n_classes, rng)
    opt = ag.Adam(params, cfg.lr)

    def val_loss():
        with ag.no_grad():
            return cross_entropy(head_logits(Z_val, params), y_val, n_classes).item()

    best, best_params, bad, epoch = val_loss(), {k: v.data.copy() for k, v in params.items()}, 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(Z))
        for start in range(0, len(Z), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            cross_entropy(head_logits(Z[idx], params), y[idx], n_classes).backward()
            opt.step()
        vl = val_loss()
        if vl < best:
            best, bad = vl, 0
            best_params = {k: v.data.copy() for k, v in params.items()}
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    final = {k: ag.Tensor(v) for k, v in best_params.items()}
    return Probe(final, n_classes, best, epoch)


def task_metrics(probe: Probe, Z, y, n_classes):
    """AUROC/AUPRC for binary tasks, linear-weighted kappa for multi-class ones."""
    prob = probe.predict_proba(Z)
    y = np.asarray(y)
    if n_classes == 2:
        if y.min() == y.max():
            return {"auroc": float("nan"), "auprc": float("nan"), "undefined": True}
        return {"auroc": auroc(prob[:, 1], y), "auprc": auprc(prob[:, 1], y)}
    return {"kappa": linear_weighted_kappa(prob.argmax(axis=1), y, n_classes)}


def neighborhood_cosine(Z, pairs, w) -> float:
    """Mean cosine between representations of the same stay less than ``w`` hours apart.

    ``Z`` rows are unit norm and ``pairs`` holds (stay index, hour) per row, as
    returned by ``representations``. Stays are averaged with equal weight.
    """
    Z = np.asarray(Z, dtype=np.float64)
    pairs = np.asarray(pairs)
    sims = []
    for i in np.unique(pairs[:, 0]):
        rows = pairs[:, 0] == i
        z, t = Z[rows], pairs[rows, 1]
        close = (np.abs(t[:, None] - t[None, :]) < w) & ~np.eye(len(t), dtype=bool)
        if close.any():
            sims.append((z @ z.T)[close].mean())
    if not sims:
        raise DataError("no stay has two hours inside the window")
    return float(np.mean(sims))


@dataclass
class Protocol:
    tasks: list = field(default_factory=lambda: ["decompensation"])
    heads: list = field(default_factory=lambda: ["linear", "mlp"])
    seeds: int = 3
    label_fractions: list = field(default_factory=lambda: [1.0])
    probe: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def _mean_std(values):
    arr = np.asarray(values, float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def evaluate_representations(stays, params, header, protocol: Protocol):
    """Probe a frozen encoder on every task/head/fraction/seed -> report dict."""
    check_patient_disjoint(stays)
    enc_cfg = EncoderConfig(**header["config"]["encoder"])
    enc = subset(params, "enc")
    before = {k: v.data.copy() for k, v in enc.items()}
    by_split = {name: [s for s in stays if s.split == name] for name in ("train", "val", "test")}
    if not by_split["train"] or not by_split["test"]:
        raise DataError("evaluation needs train and test stays")
    if not by_split["val"]:
        by_split["val"] = by_split["train"]
    reps = {name: representations(ss, enc, header, enc_cfg) for name, ss in by_split.items()}
    n_tasks = {t: (2 if t == "decompensation" else 10) for t in protocol.tasks}
    pretrain_task = header.get("pretrain_task") or "none"
    rows = []
    for task in protocol.tasks:
        if task not in by_split["train"][0].labels:
            raise DataError(f"dataset has no labels for task {task!r}")
        ys = {name: stay_labels(by_split[name], reps[name][1], task) for name in by_split}
        n_classes = n_tasks[task]
        for fraction in protocol.label_fractions:
            for head in protocol.heads:
                per_seed = []
                for seed in range(protocol.seeds):
                    if fraction < 1.0:
                        sub = stratified_label_fraction_split(by_split["train"], fraction, seed, task)
                        keep = {s.stay_id for s in sub}
                        mask = np.array([by_split["train"][i].stay_id in keep for i in reps["train"][1][:, 0]])
                    else:
                        mask = np.ones(len(ys["train"]), dtype=bool)
                    cfg = ProbeConfig(head=head, seed=seed, **protocol.probe)
                    probe = fit_probe(reps["train"][0][mask], ys["train"][mask], reps["val"][0], ys["val"],
                                      cfg, n_classes=n_classes)
                    per_seed.append(task_metrics(probe, reps["test"][0], ys["test"], n_classes))
                for metric in sorted(k for k in per_seed[0] if k != "undefined"):
                    m, s = _mean_std([r[metric] for r in per_seed])
                    rows.append({
                        "pretrain_task": pretrain_task, "eval_task": task, "label_fraction": fraction,
                        "head": head, "metric": metric, "mean": m, "std": s, "n_seeds": len(per_seed),
                        "values": [r[metric] for r in per_seed],
                        "undefined": any(r.get("undefined", False) for r in per_seed),
                    })
    for k, v in enc.items():
        if not np.array_equal(v.data, before[k]):
            raise RuntimeError(f"encoder tensor {k} changed during probing")
    return {
        "report_version": REPORT_VERSION,
        "method": header.get("config", {}).get("method"),
        "alpha": header.get("config", {}).get("alpha"),
        "w": header.get("config", {}).get("w"),
        "kind": header.get("kind"),
        "protocol": protocol.to_dict(),
        "results": rows,
    }


def evaluate_run(checkpoint_path, stays, protocol: Protocol):
    params, header = load_checkpoint(checkpoint_path)
    return evaluate_representations(stays, params, header, protocol)


def format_mean_std(mean, std, scale=100.0):
    if not math.isfinite(mean):
        return "n/a"
    return f"{mean * scale:.1f} $\\pm$ {std * scale:.1f}"


def report_json(report) -> str:
    return json.dumps(report, indent=1, sort_keys=True, allow_nan=True) + "\n"


def report_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pretrain_task", "eval_task", "label_fraction", "head", "metric", "mean", "std", "n_seeds", "formatted"])
    for r in report["results"]:
        w.writerow([r["pretrain_task"], r["eval_task"], r["label_fraction"], r["head"], r["metric"],
                    repr(r["mean"]), repr(r["std"]), r["n_seeds"], format_mean_std(r["mean"], r["std"])])
    return buf.getvalue()
