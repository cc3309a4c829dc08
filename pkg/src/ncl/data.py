"""Patient stays, preprocessing, windowing, synthetic cohorts and on-disk format.

A dataset directory holds one CSV per stay (``hour``, channel columns,
``label_<task>`` columns) and a ``manifest.json`` with the schema, splits,
static vectors and, once preprocessed, the scaler statistics.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
FORMAT_VERSION = 1
DEFAULT_HISTORY = 48
# remaining-stay bins in hours, 10 classes
LOS_BIN_EDGES = (24, 48, 72, 96, 120, 144, 168, 192, 336)


@dataclass
class Variable:
    name: str
    kind: str = "continuous"  # continuous | categorical
    categories: list | None = None

    def width(self):
        return len(self.categories) if self.kind == "categorical" else 1


@dataclass
class Schema:
    series: list[Variable]
    static: list[Variable] = field(default_factory=list)
    tasks: dict = field(default_factory=dict)  # name -> n_classes

    def encoded_channels(self):
        names = []
        for v in self.series:
            if v.kind == "categorical":
                names.extend(f"{v.name}={c}" for c in v.categories)
            else:
                names.append(v.name)
        return names

    def to_dict(self):
        def enc(vs):
            return [{"name": v.name, "kind": v.kind, "categories": v.categories} for v in vs]

        return {"series": enc(self.series), "static": enc(self.static), "tasks": dict(self.tasks)}

    @classmethod
    def from_dict(cls, d):
        def dec(vs):
            return [Variable(v["name"], v.get("kind", "continuous"), v.get("categories")) for v in vs]

        return cls(dec(d["series"]), dec(d.get("static", [])), dict(d.get("tasks", {})))


def mimic_like_schema() -> Schema:
    """Seventeen hourly measurements plus time since admission, height static.

    Categorical vocabularies follow the Glasgow-coma-scale style codes; after
    one-hot encoding there are 42 series channels.
    """
    cont = [
        "time_since_admission", "diastolic_bp", "fio2", "glucose", "heart_rate", "map",
        "spo2", "respiratory_rate", "systolic_bp", "temperature", "weight", "ph",
    ]
    cats = [
        Variable("capillary_refill", "categorical", [0, 1]),
        Variable("gcs_eye", "categorical", [1, 2, 3, 4]),
        Variable("gcs_motor", "categorical", [1, 2, 3, 4, 5, 6]),
        Variable("gcs_verbal", "categorical", [1, 2, 3, 4, 5]),
        Variable("gcs_total", "categorical", list(range(3, 16))),
    ]
    return Schema(
        [Variable(n) for n in cont] + cats,
        [Variable("height")],
        {"decompensation": 2, "length_of_stay": 10},
    )


@dataclass
class RawStay:
    """Hourly raw values; NaN marks a missing measurement."""

    stay_id: str
    patient_id: str
    static: np.ndarray
    series: np.ndarray  # (T, n_series_variables)
    labels: dict
    split: str = "train"


@dataclass
class PatientStay:
    stay_id: str
    patient_id: str
    static: np.ndarray
    series: np.ndarray  # (T, C) encoded, no NaN
    labels: dict  # task -> (T,) array
    split: str = "train"

    def __post_init__(self):
        for task, y in self.labels.items():
            if len(y) != len(self.series):
                raise DataError(f"{self.stay_id}: label {task!r} has {len(y)} rows, series has {len(self.series)}")

    @property
    def length(self):
        return len(self.series)


@dataclass
class WindowedSample:
    stay_id: str
    t: int
    window: np.ndarray  # (t_h, C)
    static: np.ndarray
    label: dict


@dataclass
class ScalerStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool, per series variable
    static_mean: np.ndarray
    static_std: np.ndarray
    static_constant: np.ndarray
    vocab: dict  # variable name -> categories
    unknown_categories: int = 0

    def to_dict(self):
        return {
            "mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist(),
            "static_mean": self.static_mean.tolist(), "static_std": self.static_std.tolist(),
            "static_constant": self.static_constant.tolist(), "vocab": self.vocab,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["mean"], float), np.array(d["std"], float), np.array(d["constant"], bool),
            np.array(d["static_mean"], float), np.array(d["static_std"], float),
            np.array(d["static_constant"], bool), {k: list(v) for k, v in d["vocab"].items()},
        )


def forward_fill(x: np.ndarray) -> np.ndarray:
    """Forward-fill NaNs down each column; leading NaNs stay NaN."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return forward_fill(x[:, None])[:, 0]
    valid = ~np.isnan(x)
    idx = np.where(valid, np.arange(len(x))[:, None], 0)
    np.maximum.accumulate(idx, axis=0, out=idx)
    out = x[idx, np.arange(x.shape[1])]
    seen = np.logical_or.accumulate(valid, axis=0)
    out[~seen] = np.nan
    return out


def _moments(columns):
    mean = np.array([np.nanmean(c) if np.isfinite(c).any() else 0.0 for c in columns])
    std = np.array([np.nanstd(c) if np.isfinite(c).any() else 0.0 for c in columns])
    constant = ~(std > 0)
    return mean, np.where(constant, 1.0, std), constant


def fit_scaler(stays: list[RawStay], schema: Schema) -> ScalerStats:
    """Training-split statistics: per continuous channel mean/std, categorical vocabularies."""
    train = [s for s in stays if s.split == "train"]
    if not train:
        raise DataError("no training stays to fit scaler statistics on")
    series = np.concatenate([forward_fill(s.series) for s in train])
    mean, std, constant = _moments([series[:, j] for j in range(series.shape[1])])
    static = np.stack([np.asarray(s.static, float) for s in train])
    smean, sstd, sconst = _moments([static[:, j] for j in range(static.shape[1])])
    vocab = {}
    for j, v in enumerate(schema.series):
        if v.kind == "categorical":
            if v.categories is not None:
                vocab[v.name] = list(v.categories)
            else:
                col = series[:, j]
                vocab[v.name] = sorted({float(c) for c in col[np.isfinite(col)]})
    return ScalerStats(mean, std, constant, smean, sstd, sconst, vocab)


def _encode_series(series, schema, stats):
    filled = forward_fill(series)
    cols = []
    for j, v in enumerate(schema.series):
        col = filled[:, j]
        if v.kind == "categorical":
            cats = np.asarray(stats.vocab[v.name], dtype=np.float64)
            onehot = (col[:, None] == cats[None, :]).astype(np.float64)
            unknown = np.isfinite(col) & ~onehot.any(axis=1)
            if unknown.any():
                stats.unknown_categories += int(unknown.sum())
            cols.append(onehot)
        else:
            scaled = np.zeros_like(col) if stats.constant[j] else (col - stats.mean[j]) / stats.std[j]
            scaled = np.where(np.isnan(col), np.nan, scaled)
            cols.append(scaled[:, None])
    out = np.concatenate(cols, axis=1)
    return np.nan_to_num(out, nan=0.0)


def preprocess(stays, stats: ScalerStats | None = None, schema: Schema | None = None) -> list[PatientStay]:
    """Forward-fill, standard-scale, one-hot encode and zero-impute leading gaps.

    Already-encoded ``PatientStay`` inputs only get the fill/impute pass, so
    applying this twice is the same as applying it once. Categorical values
    missing from the training vocabulary encode as all zeros and are counted
    in ``stats.unknown_categories``.
    """
    out = []
    before = stats.unknown_categories if stats is not None else 0
    for s in stays:
        if isinstance(s, PatientStay):
            series = np.nan_to_num(forward_fill(s.series), nan=0.0)
            out.append(PatientStay(s.stay_id, s.patient_id, np.asarray(s.static, float).copy(), series,
                                   {k: np.asarray(v).copy() for k, v in s.labels.items()}, s.split))
            continue
        if stats is None or schema is None:
            raise DataError("raw stays need scaler statistics and a schema")
        series = _encode_series(np.asarray(s.series, float), schema, stats)
        static = np.asarray(s.static, float)
        static = np.where(stats.static_constant, 0.0, (static - stats.static_mean) / stats.static_std)
        static = np.nan_to_num(static, nan=0.0)
        labels = {k: np.asarray(v).copy() for k, v in s.labels.items()}
        out.append(PatientStay(s.stay_id, s.patient_id, static, series, labels, s.split))
    if stats is not None and stats.unknown_categories > before:
        logger.warning("%d unknown categorical values encoded as zeros", stats.unknown_categories - before)
    return out


def window(stay: PatientStay, t: int, t_h: int = DEFAULT_HISTORY) -> WindowedSample:
    """History ending at hour ``t`` (inclusive), pre-padded with zeros."""
    if not 0 <= t < stay.length:
        raise DataError(f"{stay.stay_id}: t={t} outside [0, {stay.length})")
    return WindowedSample(
        stay.stay_id, t, windows(stay, [t], t_h)[0], stay.static.copy(),
        {k: v[t] for k, v in stay.labels.items()},
    )


def windows(stay: PatientStay, ts, t_h: int = DEFAULT_HISTORY) -> np.ndarray:
    """Stacked windows (len(ts), t_h, C) for the hours ``ts`` of one stay."""
    ts = np.asarray(ts, dtype=np.int64)
    if ts.size and (ts.min() < 0 or ts.max() >= stay.length):
        raise DataError(f"{stay.stay_id}: hour index outside [0, {stay.length})")
    padded = np.concatenate([np.zeros((t_h - 1, stay.series.shape[1])), stay.series])
    view = np.lib.stride_tricks.sliding_window_view(padded, t_h, axis=0)  # (T, C, t_h)
    return np.ascontiguousarray(view[ts].transpose(0, 2, 1))


def all_samples(stays):
    """Every (stay index, hour) pair; one sample per hour of each stay."""
    return [(i, t) for i, s in enumerate(stays) for t in range(s.length)]


def los_bins(remaining_hours) -> np.ndarray:
    return np.searchsorted(LOS_BIN_EDGES, np.asarray(remaining_hours), side="right")


@dataclass
class SynthConfig:
    n_patients: int = 200
    mean_stay_len: int = 60
    n_channels: int = 8
    n_static: int = 2
    seed: int = 0
    prevalence: float = 0.02
    horizon: int = 24
    min_stay_len: int = 12
    style_dim: int = 3
    style_scale: float = 1.0
    state_loading: float = 0.6
    state_step: float = 0.15
    noise_scale: float = 0.3
    signal_channels: int | None = None  # channels driven by the hidden state; the rest are pure noise
    missing_rate: float = 0.0
    split_fractions: tuple = (0.7, 0.15, 0.15)


def synth_generate(cfg: SynthConfig | dict) -> list[PatientStay]:
    """Seeded synthetic ICU cohort, one stay per patient.

    Each patient draws a latent style that shifts all channel means and the
    static vector; a slowly drifting hidden state drives the channels over
    time. ``decompensation`` is 1 when the hidden state exceeds a threshold in
    the next ``horizon`` hours, the threshold being the cohort quantile that
    hits ``prevalence``. ``length_of_stay`` bins the remaining hours.
    """
    if isinstance(cfg, dict):
        cfg = SynthConfig(**cfg)
    if cfg.n_patients < 4:
        raise DataError("need at least 4 patients")
    rng = np.random.default_rng(cfg.seed)
    C = cfg.n_channels
    style_map = rng.normal(size=(cfg.style_dim, C)) * cfg.style_scale / math.sqrt(cfg.style_dim)
    static_map = rng.normal(size=(cfg.style_dim, cfg.n_static)) / math.sqrt(cfg.style_dim)
    loading = rng.choice([-1.0, 1.0], size=C) * rng.uniform(0.5, 1.0, size=C) * cfg.state_loading
    # some channels respond to the state only above a soft knee
    knee = rng.random(C) < 0.5
    if cfg.signal_channels is not None:
        if not 1 <= cfg.signal_channels <= C:
            raise DataError(f"signal_channels must lie in 1..{C}")
        loading[cfg.signal_channels:] = 0.0

    paths, raw = [], []
    for p in range(cfg.n_patients):
        style = rng.normal(size=cfg.style_dim)
        T = cfg.min_stay_len + int(rng.exponential(max(cfg.mean_stay_len - cfg.min_stay_len, 1)))
        h0 = rng.normal(0.0, 0.5)
        drift = rng.normal(0.0, 0.02)
        h = h0 + np.cumsum(drift + cfg.state_step * rng.normal(size=T + cfg.horizon))
        resp = np.where(knee, np.logaddexp(0.0, 2.0 * h[:T, None]) / 2.0, h[:T, None])
        series = style @ style_map + resp * loading + cfg.noise_scale * rng.normal(size=(T, C))
        static = style @ static_map + 0.1 * rng.normal(size=cfg.n_static)
        paths.append(h)
        raw.append((style, T, series, static))

    # lookahead maximum of the hidden state over hours t+1 .. t+horizon
    future_max = []
    for h, (_, T, _, _) in zip(paths, raw):
        fm = np.array([h[t + 1 : t + 1 + cfg.horizon].max() for t in range(T)])
        future_max.append(fm)
    threshold = np.quantile(np.concatenate(future_max), 1.0 - cfg.prevalence)

    order = rng.permutation(cfg.n_patients)
    n_train = int(round(cfg.split_fractions[0] * cfg.n_patients))
    n_val = int(round(cfg.split_fractions[1] * cfg.n_patients))
    split_of = {}
    for rank, p in enumerate(order):
        split_of[p] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")

    stays = []
    for p, ((_, T, series, static), fm) in enumerate(zip(raw, future_max)):
        if cfg.missing_rate > 0:
            miss = rng.random(series.shape) < cfg.missing_rate
            series = np.where(miss, np.nan, series)
        labels = {
            "decompensation": (fm > threshold).astype(np.float64),
            "length_of_stay": los_bins(T - 1 - np.arange(T)).astype(np.float64),
        }
        pid = f"p{p:05d}"
        stays.append(PatientStay(f"{pid}_s0", pid, static, series, labels, split_of[p]))
    return stays


def synth_schema(cfg: SynthConfig) -> Schema:
    return Schema(
        [Variable(f"ch{j}") for j in range(cfg.n_channels)],
        [Variable(f"static{j}") for j in range(cfg.n_static)],
        {"decompensation": 2, "length_of_stay": 10},
    )


def split(stays, name):
    return [s for s in stays if s.split == name]


def check_patient_disjoint(stays):
    """Raise if any patient appears in more than one split."""
    seen = {}
    for s in stays:
        if seen.setdefault(s.patient_id, s.split) != s.split:
            raise DataError(f"patient {s.patient_id} appears in splits {seen[s.patient_id]} and {s.split}")


def stratified_label_fraction_split(stays, fraction, seed, task="decompensation"):
    """Patient-level subset of ``stays`` stratified on whether a patient has a positive hour."""
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(stays)
    patients = {}
    for s in stays:
        patients.setdefault(s.patient_id, []).append(s)
    ids = sorted(patients)
    positive = [pid for pid in ids if any(np.any(s.labels[task] > 0) for s in patients[pid])]
    negative = [pid for pid in ids if pid not in set(positive)]
    rng = np.random.default_rng(seed)
    n_pos = int(round(fraction * len(positive)))
    if n_pos == 0:
        raise DataError(f"fraction {fraction} leaves no patient with a positive {task!r} label")
    n_neg = int(round(fraction * len(negative)))
    chosen = set(rng.choice(positive, n_pos, replace=False).tolist())
    if n_neg:
        chosen |= set(rng.choice(negative, n_neg, replace=False).tolist())
    return [s for pid in ids if pid in chosen for s in patients[pid]]


def prevalence(stays, task="decompensation"):
    y = np.concatenate([s.labels[task] for s in stays])
    return float(np.mean(y > 0))


# on-disk format


def _fmt(v):
    return "" if v != v else repr(float(v))


def write_dataset(out_dir, stays, schema: Schema, stats: ScalerStats | None = None, channels=None):
    """Write CSV stay files and ``manifest.json``; output is byte-stable."""
    out_dir = Path(out_dir)
    (out_dir / "stays").mkdir(parents=True, exist_ok=True)
    tasks = sorted(stays[0].labels) if stays else []
    if channels is None:
        channels = [v.name for v in schema.series] if stats is None and isinstance(stays[0], RawStay) else None
    entries = []
    for s in stays:
        n_cols = s.series.shape[1]
        cols = channels if channels is not None and len(channels) == n_cols else [f"c{j}" for j in range(n_cols)]
        rel = f"stays/{s.stay_id}.csv"
        with open(out_dir / rel, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hour", *cols, *(f"label_{t}" for t in tasks)])
            for t in range(len(s.series)):
                w.writerow([t, *(_fmt(v) for v in s.series[t]), *(_fmt(s.labels[k][t]) for k in tasks)])
        entries.append({
            "stay_id": s.stay_id, "patient_id": s.patient_id, "split": s.split,
            "static": [float(v) for v in s.static], "file": rel,
        })
    manifest = {
        "format_version": FORMAT_VERSION,
        "processed": isinstance(stays[0], PatientStay) if stays else False,
        "schema": schema.to_dict(),
        "tasks": tasks,
        "scaler": stats.to_dict() if stats is not None else None,
        "stays": entries,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out_dir / "manifest.json"


def read_manifest(path):
    path = Path(path)
    mpath = path / "manifest.json" if path.is_dir() else path
    if not mpath.exists():
        raise DataError(f"no manifest.json under {path}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported dataset format_version {manifest.get('format_version')!r}")
    return manifest


def read_dataset(path):
    """Load a dataset directory -> (stays, schema, scaler stats or None)."""
    path = Path(path)
    manifest = read_manifest(path)
    root = path if path.is_dir() else path.parent
    schema = Schema.from_dict(manifest["schema"])
    processed = manifest.get("processed", False)
    stays = []
    for e in manifest["stays"]:
        if e["split"] not in SPLITS:
            raise DataError(f"{e['stay_id']}: unknown split {e['split']!r}")
        with open(root / e["file"], newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        label_cols = [j for j, h in enumerate(header) if h.startswith("label_")]
        value_cols = [j for j, h in enumerate(header) if j > 0 and j not in label_cols]
        try:
            arr = np.array([[float(r[j]) if r[j] != "" else np.nan for j in range(len(header))] for r in body])
        except (ValueError, IndexError) as exc:
            raise DataError(f"{e['file']}: malformed row ({exc})") from None
        arr = arr.reshape(len(body), len(header))
        labels = {header[j][len("label_"):]: arr[:, j] for j in label_cols}
        series = arr[:, value_cols]
        cls = PatientStay if processed else RawStay
        stays.append(cls(e["stay_id"], e["patient_id"], np.array(e["static"], float), series, labels, e["split"]))
    stats = ScalerStats.from_dict(manifest["scaler"]) if manifest.get("scaler") else None
    return stays, schema, stats


def to_raw(stays) -> list[RawStay]:
    return [RawStay(s.stay_id, s.patient_id, s.static.copy(), s.series.copy(),
                    {k: v.copy() for k, v in s.labels.items()}, s.split) for s in stays]


def synthetic_dataset(cfg: SynthConfig | dict) -> list[PatientStay]:
    """Generate, fit train-split scaling and preprocess in one call."""
    if isinstance(cfg, dict):
        cfg = SynthConfig(**cfg)
    raw = to_raw(synth_generate(cfg))
    schema = synth_schema(cfg)
    return preprocess(raw, fit_scaler(raw, schema), schema)
