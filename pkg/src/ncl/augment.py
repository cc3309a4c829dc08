"""View construction for windowed time series.

The temporal augmentations (history crop and history cutout) never touch the
last row of a window, so two samples that differ at their final hour keep
distinct views. All functions take a ``numpy.random.Generator`` (PCG64 via
``numpy.random.default_rng``) and return new arrays.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError


@dataclass(frozen=True)
class AugmentConfig:
    crop_prob: float = 0.5
    crop_min_frac: float = 0.5
    cutout_len: int = 8
    cutout_prob: float = 0.8
    channel_dropout_p: float = 0.2
    noise_std: float = 0.1
    static_dropout_p: float = 0.2

    def __post_init__(self):
        for name in ("crop_prob", "cutout_prob", "channel_dropout_p", "static_dropout_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.crop_min_frac <= 1.0:
            raise ConfigError(f"crop_min_frac must lie in (0, 1], got {self.crop_min_frac}")
        if self.cutout_len < 0 or self.noise_std < 0:
            raise ConfigError("cutout_len and noise_std must be non-negative")

    @classmethod
    def identity(cls):
        return cls(0.0, 1.0, 0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self):
        return asdict(self)


def history_crop(x, rng, cfg: AugmentConfig):
    """With probability ``crop_prob`` replace the oldest rows by zero padding.

    The kept length is uniform over ``[ceil(crop_min_frac * t_h), t_h]``.
    """
    x = np.array(x, dtype=np.float64)
    if rng.random() >= cfg.crop_prob:
        return x
    t_h = x.shape[0]
    min_len = max(1, math.ceil(cfg.crop_min_frac * t_h))
    kept = int(rng.integers(min_len, t_h + 1))
    x[: t_h - kept] = 0.0
    return x


def history_cutout(x, rng, cfg: AugmentConfig):
    """With probability ``cutout_prob`` zero ``cutout_len`` consecutive rows ending before the last row."""
    x = np.array(x, dtype=np.float64)
    if rng.random() >= cfg.cutout_prob:
        return x
    t_h = x.shape[0]
    if cfg.cutout_len >= t_h:
        raise ConfigError(f"cutout_len {cfg.cutout_len} must be shorter than the window ({t_h})")
    start = int(rng.integers(0, t_h - cfg.cutout_len))
    x[start : start + cfg.cutout_len] = 0.0
    return x


def channel_dropout(x, rng, cfg: AugmentConfig):
    """Zero whole channels independently with probability ``channel_dropout_p``."""
    x = np.array(x, dtype=np.float64)
    keep = rng.random(x.shape[-1]) >= cfg.channel_dropout_p
    return x * keep


def gaussian_noise(x, rng, cfg: AugmentConfig):
    x = np.array(x, dtype=np.float64)
    if cfg.noise_std == 0.0:
        return x
    return x + rng.normal(0.0, cfg.noise_std, size=x.shape)


def static_dropout(static, rng, cfg: AugmentConfig):
    static = np.array(static, dtype=np.float64)
    keep = rng.random(static.shape) >= cfg.static_dropout_p
    return static * keep


def augment(window, static, rng, cfg: AugmentConfig):
    """One draw of crop -> cutout -> channel dropout -> noise, plus static dropout."""
    x = history_crop(window, rng, cfg)
    x = history_cutout(x, rng, cfg)
    x = channel_dropout(x, rng, cfg)
    x = gaussian_noise(x, rng, cfg)
    return x, static_dropout(static, rng, cfg)


def make_views(window, static, rng, cfg: AugmentConfig | None = None):
    """Two independent augmentations of the same sample."""
    cfg = AugmentConfig() if cfg is None else cfg
    return augment(window, static, rng, cfg), augment(window, static, rng, cfg)


def make_view_batch(windows, statics, rng, cfg: AugmentConfig):
    """Views for a batch of N samples -> (2N windows, 2N statics).

    Rows ``0..N-1`` hold the first view of each sample and rows ``N..2N-1``
    the second, so the partner of view ``i`` is ``(i + N) mod 2N``.
    """
    first, second = [], []
    for w, s in zip(windows, statics):
        a, b = make_views(w, s, rng, cfg)
        first.append(a)
        second.append(b)
    views = first + second
    return np.stack([v[0] for v in views]), np.stack([v[1] for v in views])
