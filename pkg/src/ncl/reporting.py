"""Aggregate evaluation reports across runs and draw the alpha-sweep curve."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .evaluation import format_mean_std
from .exceptions import DataError

KEY_FIELDS = ("method", "alpha", "w", "pretrain_task", "eval_task", "label_fraction", "head", "metric")


def load_report(run_dir):
    path = Path(run_dir) / "report.json"
    if not path.exists():
        raise DataError(f"{run_dir}: no report.json; run evaluate first")
    return json.loads(path.read_text())


def aggregate(reports):
    """Flatten run reports into one row per run x result, sorted for stable output."""
    rows = []
    for name, rep in reports:
        for r in rep["results"]:
            rows.append({
                "run": name, "method": rep.get("method"), "alpha": rep.get("alpha"), "w": rep.get("w"),
                **{k: r[k] for k in KEY_FIELDS[3:]},
                "mean": r["mean"], "std": r["std"], "n_seeds": r["n_seeds"],
            })

    def key(r):
        return tuple(str(r[k]) for k in KEY_FIELDS) + (r["run"],)

    return sorted(rows, key=key)


def aggregate_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["run", *KEY_FIELDS, "mean", "std", "n_seeds", "formatted"]
    w.writerow(cols)
    for r in rows:
        w.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in cols[:-1]]
                   + [format_mean_std(r["mean"], r["std"])])
    return buf.getvalue()


def alpha_curves(rows, metric="auroc", head="linear", label_fraction=1.0):
    """Series keyed by (method, w, eval_task): sorted lists of (alpha, mean, std)."""
    series = {}
    for r in rows:
        if r["metric"] != metric or r["head"] != head or r["label_fraction"] != label_fraction:
            continue
        if r["alpha"] is None or not math.isfinite(r["mean"]):
            continue
        series.setdefault((r["method"], str(r["w"]), r["eval_task"]), []).append((r["alpha"], r["mean"], r["std"]))
    return {k: sorted(v) for k, v in sorted(series.items())}


def alpha_curve_svg(rows, path, metric="auroc", head="linear", label_fraction=1.0):
    """Probe metric against alpha, one line per (method, w, task); written as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = alpha_curves(rows, metric, head, label_fraction)
    with matplotlib.rc_context({"svg.hashsalt": "ncl-report", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (method, w, task), pts in series.items():
            a, m, s = zip(*pts)
            ax.errorbar(a, [100 * x for x in m], yerr=[100 * x for x in s], marker="o", capsize=3,
                        label=f"{method} w={w} ({task})")
        ax.set_xlabel(r"$\alpha$")
        ax.set_ylabel(f"{metric.upper()} ({head} probe)")
        ax.set_xlim(-0.05, 1.05)
        if series:
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
