"""Binary neighborhood functions and the anchor x queue masks built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DataError

KINDS = ("window", "label", "window_label")
_KIND_ALIASES = {"window∩label": "window_label", "window&label": "window_label", "intersection": "window_label"}


@dataclass(frozen=True)
class SampleMeta:
    stay_id: str
    t: int
    label: float | None = None
    uid: int = -1


@dataclass(frozen=True)
class NeighborhoodSpec:
    kind: str = "window"
    w: float = 0.0
    task: str | None = None

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ConfigError(f"unknown neighborhood kind {self.kind!r}")
        if isinstance(self.w, str):
            object.__setattr__(self, "w", float(self.w))
        if not self.w >= 0:
            raise ConfigError(f"window size must be >= 0, got {self.w}")

    @property
    def uses_window(self):
        return self.kind in ("window", "window_label")

    @property
    def uses_label(self):
        return self.kind in ("label", "window_label")


def is_neighbor(a: SampleMeta, b: SampleMeta, spec: NeighborhoodSpec) -> bool:
    """Whether ``a`` and ``b`` share a neighborhood under ``spec``.

    Two views of the same source (equal uid) always count as neighbors, so a
    zero window still pairs each view with its partner.
    """
    if spec.uses_label and (a.label is None or b.label is None):
        raise DataError("label neighborhood requires labels on both samples")
    same_source = a.uid >= 0 and a.uid == b.uid
    in_window = same_source or (a.stay_id == b.stay_id and abs(a.t - b.t) < spec.w)
    same_label = spec.uses_label and a.label == b.label
    if spec.kind == "window":
        return in_window
    if spec.kind == "label":
        return same_label
    return in_window and same_label


@dataclass
class MetaArrays:
    """Column-wise metadata for a batch of views or the queue.

    ``stay`` holds integer stay codes; ``label`` is NaN where unknown.
    """

    stay: np.ndarray
    t: np.ndarray
    label: np.ndarray
    uid: np.ndarray

    def __len__(self):
        return len(self.uid)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64))

    @classmethod
    def from_meta(cls, metas, stay_codes=None):
        stay_codes = {} if stay_codes is None else stay_codes
        stay = np.array([stay_codes.setdefault(m.stay_id, len(stay_codes)) for m in metas], dtype=np.int64)
        return cls(
            stay,
            np.array([m.t for m in metas], dtype=np.int64),
            np.array([np.nan if m.label is None else m.label for m in metas], dtype=np.float64),
            np.array([m.uid for m in metas], dtype=np.int64),
        )

    def take(self, idx):
        return MetaArrays(self.stay[idx], self.t[idx], self.label[idx], self.uid[idx])

    @staticmethod
    def concat(parts):
        return MetaArrays(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("stay", "t", "label", "uid")))


@dataclass
class Masks:
    neighbors: np.ndarray  # (2N, M) bool, self column excluded
    v_index: np.ndarray  # (2N,) queue position of the paired view
    self_mask: np.ndarray  # (2N, M) bool, True only at k == i


def neighbor_matrix(a: MetaArrays, b: MetaArrays, spec: NeighborhoodSpec) -> np.ndarray:
    """Vectorised ``is_neighbor`` over all pairs of rows of ``a`` and ``b``."""
    if spec.uses_label and (np.isnan(a.label).any() or np.isnan(b.label).any()):
        raise DataError("label neighborhood requires labels on every sample")
    same_source = (a.uid[:, None] == b.uid[None, :]) & (a.uid[:, None] >= 0)
    out = None
    if spec.uses_window:
        out = same_source.copy()
        if spec.w > 0:
            close = np.abs(a.t[:, None] - b.t[None, :]) < spec.w if math.isfinite(spec.w) else True
            out |= (a.stay[:, None] == b.stay[None, :]) & close
    if spec.uses_label:
        same_label = a.label[:, None] == b.label[None, :]
        out = same_label if out is None else out & same_label
    return out


def build_masks(anchors: MetaArrays, queue: MetaArrays, spec: NeighborhoodSpec) -> Masks:
    """Neighbor, self and partner-index masks of anchors against the queue.

    The queue's first ``2N`` entries must be the momentum copies of the
    anchors in the same order; the partner of view ``i`` is ``(i + N) mod 2N``.
    """
    n2 = len(anchors)
    if n2 % 2:
        raise DataError(f"anchor count must be even, got {n2}")
    if len(queue) < n2 or not np.array_equal(queue.uid[:n2], anchors.uid):
        raise DataError("queue front is not aligned with the current batch")
    half = n2 // 2
    v_index = (np.arange(n2) + half) % n2
    if not np.array_equal(anchors.uid[v_index], anchors.uid):
        raise DataError("paired views must share a uid and sit N positions apart")
    self_mask = np.zeros((n2, len(queue)), dtype=bool)
    self_mask[np.arange(n2), np.arange(n2)] = True
    neighbors = neighbor_matrix(anchors, queue, spec) & ~self_mask
    return Masks(neighbors, v_index, self_mask)
