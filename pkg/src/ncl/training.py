"""Contrastive pretraining, supervised end-to-end training and Seq2Seq baselines."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autograd as ag
from .augment import AugmentConfig, make_view_batch
from .data import DEFAULT_HISTORY, PatientStay
from .encoder import (
    EncoderConfig,
    copy_params,
    decode,
    encode,
    init_decoder,
    init_encoder,
    init_projector,
    project,
    subset,
)
from .exceptions import ConfigError, DataError, NumericalError
from .losses import LossSpec, ProjectionSet, contrastive_accuracy, loss_na, loss_nd
from .momentum import NegativeQueue, ema_update, warmup_fill
from .neighborhood import MetaArrays, NeighborhoodSpec, build_masks

logger = logging.getLogger(__name__)

INF = math.inf

# (alpha, w, neighborhood kind); None means "take from the preset"
CONTRASTIVE_METHODS = {
    "cl": (1.0, 0.0, "window"),
    "sacl": (0.0, INF, "window"),
    "clocs": (1.0, INF, "window"),
    "scl": (1.0, 0.0, "label"),
    "ncl_w": (None, None, "window"),
    "ncl_y": (0.9, 0.0, "label"),
    "ncl_wy": (1.0, None, "window_label"),
}
TABLE_ROWS = ("cl", "sacl", "clocs", "scl")
OTHER_METHODS = ("e2e", "ae", "ae_forecast")
METHOD_ALIASES = {"ncl_w∩y": "ncl_wy", "ncl_w_y": "ncl_wy", "end_to_end": "e2e", "seq2seq_ae": "ae"}

# dataset-like presets: ncl_w (alpha, w) and momentum
PRESETS = {
    "mimic": {"alpha": 0.3, "w": 16.0, "momentum": 0.999},
    "physionet": {"alpha": 0.4, "w": 12.0, "momentum": 0.99},
}


@dataclass
class TrainConfig:
    method: str = "ncl_w"
    preset: str = "mimic"
    steps: int = 2000
    batch_size: int = 128
    warmup_steps: int | None = None
    lr_start: float = 1e-5
    lr_peak: float = 1e-3
    tau: float = 0.1
    alpha: float | None = None
    w: float | None = None
    neighborhood: str | None = None
    task: str = "decompensation"
    momentum: float | None = None
    queue_size: int = 4096
    seed: int = 0
    freeze_projector: bool = False
    neighbor_sampling: bool = False
    t_h: int = DEFAULT_HISTORY
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # supervised / seq2seq
    sup_lr: float = 1e-5
    head: str = "linear"
    eval_every: int = 50
    patience: int = 10
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        self.method = METHOD_ALIASES.get(self.method, self.method)
        if self.method not in CONTRASTIVE_METHODS and self.method not in OTHER_METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if isinstance(self.w, str):
            self.w = float(self.w)
        if self.warmup_steps is None:
            self.warmup_steps = self.steps // 10
        if self.steps <= 0 or self.batch_size <= 0:
            raise ConfigError("steps and batch_size must be positive")
        if not 0 <= self.warmup_steps < self.steps:
            raise ConfigError("warmup_steps must lie in [0, steps)")
        if self.method in CONTRASTIVE_METHODS:
            self._resolve_contrastive()
        elif self.momentum is None:
            self.momentum = PRESETS[self.preset]["momentum"]
        if 2 * self.batch_size > self.queue_size and self.method in CONTRASTIVE_METHODS:
            raise ConfigError(f"queue of {self.queue_size} cannot hold a 2N={2 * self.batch_size} batch")

    def _resolve_contrastive(self):
        alpha, w, kind = CONTRASTIVE_METHODS[self.method]
        preset = PRESETS[self.preset]
        if self.method in TABLE_ROWS:
            for name, fixed, given in (("alpha", alpha, self.alpha), ("w", w, self.w), ("neighborhood", kind, self.neighborhood)):
                if given is not None and given != fixed:
                    raise ConfigError(f"method {self.method!r} fixes {name}={fixed}; got {given}")
        self.alpha = (preset["alpha"] if alpha is None else alpha) if self.alpha is None else float(self.alpha)
        self.w = (preset["w"] if w is None else w) if self.w is None else float(self.w)
        self.neighborhood = kind if self.neighborhood is None else self.neighborhood
        if self.momentum is None:
            self.momentum = preset["momentum"]
        # LossSpec and NeighborhoodSpec validate their own fields
        self.loss_spec()

    def loss_spec(self) -> LossSpec:
        return LossSpec(self.tau, self.alpha, NeighborhoodSpec(self.neighborhood, self.w, self.task))

    def to_dict(self):
        d = asdict(self)
        if d.get("w") == INF:
            d["w"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def lr_schedule(step, cfg: TrainConfig) -> float:
    """Linear warm-up from ``lr_start`` to ``lr_peak``, then cosine decay to zero."""
    if step < cfg.warmup_steps:
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * step / cfg.warmup_steps
    frac = (step - cfg.warmup_steps) / (cfg.steps - cfg.warmup_steps)
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * frac))


class _SampleSource:
    """Uniform (stay, hour) sampling and window assembly for one split."""

    def __init__(self, stays, t_h, task=None):
        if not stays:
            raise DataError("no stays to sample from")
        self.stays = stays
        self.t_h = t_h
        self.task = task
        self.padded = [np.concatenate([np.zeros((t_h - 1, s.series.shape[1])), s.series]) for s in stays]
        self.index = np.array([(i, t) for i, s in enumerate(stays) for t in range(s.length)], dtype=np.int64)
        self.stay_codes = {s.stay_id: i for i, s in enumerate(stays)}

    def __len__(self):
        return len(self.index)

    def gather(self, idx):
        pairs = self.index[idx]
        wins = np.stack([self.padded[i][t : t + self.t_h] for i, t in pairs])
        statics = np.stack([self.stays[i].static for i in pairs[:, 0]])
        return pairs, wins, statics

    def labels(self, pairs, task=None):
        task = task or self.task
        if task is None or task not in self.stays[0].labels:
            return np.full(len(pairs), np.nan)
        return np.array([self.stays[i].labels[task][t] for i, t in pairs], dtype=np.float64)


class Pretrainer:
    """Momentum-queue contrastive pretraining with a configurable loss row.

    Views are laid out as ``[first views; second views]`` so view ``i`` pairs
    with ``(i + N) mod 2N``. Each step enqueues the momentum projections first,
    which puts the current batch at the queue front before the loss is built.
    """

    def __init__(self, stays, cfg: TrainConfig):
        if cfg.method not in CONTRASTIVE_METHODS:
            raise ConfigError(f"{cfg.method!r} is not a contrastive method")
        train = [s for s in stays if s.split == "train"]
        self.cfg = cfg
        self.spec = cfg.loss_spec()
        self.source = _SampleSource(train, cfg.t_h, cfg.task)
        if self.spec.neighborhood.uses_label and cfg.task not in train[0].labels:
            raise DataError(f"label neighborhood needs task {cfg.task!r} in the dataset")
        self.rng = np.random.default_rng(cfg.seed)
        init_rng = np.random.default_rng([cfg.seed, 1])
        n_channels = train[0].series.shape[1]
        n_static = len(train[0].static)
        self.n_channels, self.n_static = n_channels, n_static
        self.online = init_encoder(cfg.encoder, n_channels, n_static, init_rng)
        self.online.update(init_projector(cfg.encoder, init_rng))
        if cfg.freeze_projector:
            for v in subset(self.online, "proj").values():
                v.requires_grad = False
        self.momentum = copy_params(self.online, requires_grad=False)
        trainable = {k: v for k, v in self.online.items() if v.requires_grad}
        self.opt = ag.Adam(trainable, cfg.lr_peak, cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.queue = NegativeQueue(cfg.queue_size, cfg.encoder.proj_out)
        self.step_count = 0
        self._next_uid = 0
        self.history = []

    def _draw(self):
        cfg = self.cfg
        N = cfg.batch_size
        if cfg.neighbor_sampling and math.isfinite(self.spec.neighborhood.w) and self.spec.neighborhood.w > 1:
            first = self.rng.integers(len(self.source), size=(N + 1) // 2)
            pairs = self.source.index[first]
            second = []
            w = int(self.spec.neighborhood.w)
            for i, t in pairs:
                T = self.source.stays[i].length
                t2 = int(self.rng.integers(max(0, t - w + 1), min(T, t + w)))
                second.append(np.searchsorted(self.source.index[:, 0], i) + t2)
            idx = np.concatenate([first, second])[:N]
        else:
            idx = self.rng.integers(len(self.source), size=N)
        return idx

    def make_batch(self):
        idx = self._draw()
        pairs, wins, statics = self.source.gather(idx)
        vw, vs = make_view_batch(wins, statics, self.rng, self.cfg.augment)
        n = len(pairs)
        uids = np.arange(self._next_uid, self._next_uid + n)
        self._next_uid += n
        meta = MetaArrays(
            np.tile(pairs[:, 0], 2), np.tile(pairs[:, 1], 2),
            np.tile(self.source.labels(pairs), 2), np.tile(uids, 2),
        )
        return vw, vs, meta

    def momentum_project(self, vw, vs):
        with ag.no_grad():
            z = encode(vw, vs, self.momentum, self.cfg.encoder)
            return project(z, self.momentum).data

    def warmup(self):
        def batches():
            while True:
                vw, vs, meta = self.make_batch()
                yield self.momentum_project(vw, vs), meta

        warmup_fill(self.queue, batches())

    def step(self):
        cfg = self.cfg
        if not self.queue.full:
            self.warmup()
        lr = lr_schedule(self.step_count, cfg)
        vw, vs, meta = self.make_batch()
        self.queue.enqueue(self.momentum_project(vw, vs), meta)
        Q, qmeta = self.queue.vectors, self.queue.meta
        masks = build_masks(meta, qmeta, self.spec.neighborhood)

        self.opt.zero_grad()
        p = project(encode(vw, vs, self.online, cfg.encoder), self.online)
        ps = ProjectionSet(p, Q, masks)
        a = self.spec.alpha
        na = loss_na(ps, self.spec, "mean") if a > 0 else None
        nd = loss_nd(ps, self.spec, "mean") if a < 1 else None
        if na is None:
            loss = nd
        elif nd is None:
            loss = na
        else:
            loss = ag.add(ag.mul(na, a), ag.mul(nd, 1.0 - a))
        with np.errstate(over="ignore"):
            max_logit = float(np.max(p.data @ Q.T) / cfg.tau)
        if not np.isfinite(loss.data):
            raise NumericalError(
                f"non-finite loss at step {self.step_count}: "
                f"na={None if na is None else na.item()} nd={None if nd is None else nd.item()} "
                f"max_logit={max_logit}"
            )
        loss.backward()
        try:
            self.opt.step(lr)
        except NumericalError as exc:
            raise NumericalError(f"step {self.step_count}: {exc}; max_logit={max_logit}") from None
        ema_update(self.online, self.momentum, cfg.momentum)
        row = {
            "step": self.step_count,
            "lr": lr,
            "loss": loss.item(),
            "loss_na": float("nan") if na is None else na.item(),
            "loss_nd": float("nan") if nd is None else nd.item(),
            "contrastive_accuracy": contrastive_accuracy(ps),
        }
        self.history.append(row)
        self.step_count += 1
        return row

    def fit(self, steps=None):
        steps = self.cfg.steps if steps is None else steps
        for _ in range(steps):
            row = self.step()
            if row["step"] % 100 == 0:
                logger.info("step %d loss %.4f acc %.3f", row["step"], row["loss"], row["contrastive_accuracy"])
        return self

    def encoder_params(self):
        return subset(self.online, "enc")

    def header(self):
        label_task = self.cfg.task if self.spec.neighborhood.uses_label else None
        return {
            "kind": "contrastive",
            "normalize": True,
            "n_channels": self.n_channels,
            "n_static": self.n_static,
            "t_h": self.cfg.t_h,
            "pretrain_task": label_task,
            "steps": self.step_count,
            "config": self.cfg.to_dict(),
        }


def pretrain(stays, cfg: TrainConfig):
    """Run contrastive pretraining -> (params, header, step-metrics rows)."""
    trainer = Pretrainer(stays, cfg).fit()
    params = {**subset(trainer.online, "enc"), **subset(trainer.online, "proj")}
    return params, trainer.header(), trainer.history


# supervised


def init_head(kind, dim, n_classes, rng, prefix="head"):
    if kind == "linear":
        return {f"{prefix}.w": ag.Tensor(np.zeros((dim, n_classes)), requires_grad=True),
                f"{prefix}.b": ag.Tensor(np.zeros(n_classes), requires_grad=True)}
    if kind == "mlp":
        lim = np.sqrt(6.0 / dim)
        return {
            f"{prefix}.w1": ag.Tensor(rng.uniform(-lim, lim, (dim, dim)), requires_grad=True),
            f"{prefix}.b1": ag.Tensor(np.zeros(dim), requires_grad=True),
            f"{prefix}.w2": ag.Tensor(np.zeros((dim, n_classes)), requires_grad=True),
            f"{prefix}.b2": ag.Tensor(np.zeros(n_classes), requires_grad=True),
        }
    raise ConfigError(f"unknown head {kind!r}")


def head_logits(z, params, prefix="head"):
    if f"{prefix}.w" in params:
        return ag.add(ag.matmul(z, params[f"{prefix}.w"]), params[f"{prefix}.b"])
    h = ag.relu(ag.add(ag.matmul(z, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ag.add(ag.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def cross_entropy(logits, y, n_classes):
    """Mean softmax cross-entropy against integer labels."""
    y = np.asarray(y, dtype=np.int64)
    onehot = np.zeros((len(y), n_classes))
    onehot[np.arange(len(y)), y] = 1.0
    lse = ag.logsumexp(logits, axis=-1)
    picked = ag.sum(ag.mul(logits, onehot), axis=1)
    return ag.mean(ag.add(lse, ag.mul(picked, -1.0)))


def _labels_int(y, task):
    if np.isnan(y).any():
        raise DataError(f"missing labels for task {task!r}")
    return y.astype(np.int64)


def train_supervised(stays, cfg: TrainConfig, n_classes=None, init=None):
    """Encoder and classification head trained jointly with cross-entropy.

    Early stopping keeps the parameters with the lowest validation loss,
    evaluated every ``eval_every`` steps (the untrained model counts as the
    first evaluation). ``init`` optionally supplies pretrained ``enc.*``
    weights for fine-tuning. Returns (params, header, history).
    """
    train = [s for s in stays if s.split == "train"]
    val = [s for s in stays if s.split == "val"] or train
    if not train or cfg.task not in train[0].labels:
        raise DataError(f"supervised training needs task {cfg.task!r} labels")
    src, vsrc = _SampleSource(train, cfg.t_h, cfg.task), _SampleSource(val, cfg.t_h, cfg.task)
    if n_classes is None:
        ys = np.concatenate([s.labels[cfg.task] for s in train])
        n_classes = max(2, int(np.nanmax(ys)) + 1)
    rng = np.random.default_rng(cfg.seed)
    init_rng = np.random.default_rng([cfg.seed, 1])
    n_channels, n_static = train[0].series.shape[1], len(train[0].static)
    params = init_encoder(cfg.encoder, n_channels, n_static, init_rng)
    if init is not None:
        for k, v in subset(init, "enc").items():
            if k not in params or params[k].shape != v.shape:
                raise DataError(f"checkpoint tensor {k} does not match the encoder config")
            params[k] = ag.Tensor(v.data.copy(), requires_grad=True)
    params.update(init_head(cfg.head, cfg.encoder.embed_dim, n_classes, init_rng))
    opt = ag.Adam(params, cfg.sup_lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    v_idx = np.random.default_rng([cfg.seed, 2]).permutation(len(vsrc))[: max(cfg.batch_size * 4, 256)]
    v_pairs, v_w, v_s = vsrc.gather(v_idx)
    v_y = _labels_int(vsrc.labels(v_pairs), cfg.task)

    def val_loss():
        with ag.no_grad():
            return cross_entropy(head_logits(encode(v_w, v_s, params, cfg.encoder), params), v_y, n_classes).item()

    best = val_loss()
    best_params = copy_params(params)
    history = [{"step": 0, "train_loss": float("nan"), "val_loss": best}]
    bad = 0
    for step in range(cfg.steps):
        pairs, w, s = src.gather(rng.integers(len(src), size=cfg.batch_size))
        y = _labels_int(src.labels(pairs), cfg.task)
        opt.zero_grad()
        loss = cross_entropy(head_logits(encode(w, s, params, cfg.encoder), params), y, n_classes)
        if not np.isfinite(loss.data):
            raise NumericalError(f"non-finite supervised loss at step {step}")
        loss.backward()
        opt.step()
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
            vl = val_loss()
            history.append({"step": step + 1, "train_loss": loss.item(), "val_loss": vl})
            if vl < best:
                best, best_params, bad = vl, copy_params(params), 0
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
    header = {
        "kind": "supervised", "normalize": True, "n_channels": n_channels, "n_static": n_static,
        "t_h": cfg.t_h, "pretrain_task": cfg.task, "n_classes": n_classes, "best_val_loss": best,
        "fine_tuned": init is not None, "config": cfg.to_dict(),
    }
    return best_params, header, history


def train_seq2seq(stays, cfg: TrainConfig, forecast=False):
    """Unnormalised encoder + mirrored decoder trained with MSE.

    Reconstruction targets the input window and static vector; in forecast
    mode the target is the next ``t_h`` hours (rows ``t+1 .. t+t_h``), and
    anchors are drawn only where that segment lies inside the stay.
    """
    train = [s for s in stays if s.split == "train"]
    src = _SampleSource(train, cfg.t_h)
    if forecast:
        valid = np.array([j for j, (i, t) in enumerate(src.index) if t + cfg.t_h < train[i].length])
        if len(valid) == 0:
            raise DataError(f"no stay is longer than {cfg.t_h} hours; forecast targets impossible")
    else:
        valid = np.arange(len(src))
    rng = np.random.default_rng(cfg.seed)
    init_rng = np.random.default_rng([cfg.seed, 1])
    n_channels, n_static = train[0].series.shape[1], len(train[0].static)
    params = init_encoder(cfg.encoder, n_channels, n_static, init_rng)
    params.update(init_decoder(cfg.encoder, n_channels, n_static, cfg.t_h, init_rng))
    opt = ag.Adam(params, cfg.lr_peak, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = []
    for step in range(cfg.steps):
        idx = valid[rng.integers(len(valid), size=cfg.batch_size)]
        pairs, w, s = src.gather(idx)
        opt.zero_grad()
        loss = seq2seq_loss(w, s, params, cfg, forecast, src, pairs)
        if not np.isfinite(loss.data):
            raise NumericalError(f"non-finite reconstruction loss at step {step}")
        loss.backward()
        opt.step(lr_schedule(step, cfg))
        history.append({"step": step, "loss": loss.item()})
    header = {
        "kind": "seq2seq_forecast" if forecast else "seq2seq", "normalize": False,
        "n_channels": n_channels, "n_static": n_static, "t_h": cfg.t_h, "pretrain_task": None,
        "config": cfg.to_dict(),
    }
    return {**subset(params, "enc"), **subset(params, "dec")}, header, history


def seq2seq_loss(w, s, params, cfg, forecast=False, src=None, pairs=None):
    z = encode(w, s, params, cfg.encoder, normalize=False)
    seq, static = decode(z, params, cfg.encoder)
    if forecast:
        target = np.stack([src.padded[i][t + cfg.t_h : t + 2 * cfg.t_h] for i, t in pairs])
        return ag.mse(seq, target)
    flat = ag.concat([ag.reshape(seq, (seq.shape[0], -1)), static], axis=1)
    return ag.mse(flat, np.concatenate([w.reshape(len(w), -1), s], axis=1))


def representations(stays, params, header, enc_cfg: EncoderConfig, batch=512):
    """Frozen encoder outputs for every (stay, hour) -> (Z, pairs)."""
    src = _SampleSource(stays, header["t_h"])
    out = []
    with ag.no_grad():
        for start in range(0, len(src), batch):
            _, w, s = src.gather(np.arange(start, min(start + batch, len(src))))
            out.append(encode(w, s, params, enc_cfg, normalize=header.get("normalize", True)).data)
    return np.concatenate(out), src.index


def stay_labels(stays, pairs, task):
    return np.array([stays[i].labels[task][t] for i, t in pairs], dtype=np.float64)
