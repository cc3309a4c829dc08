"""Neighborhood contrastive objectives over online projections and a queue.

Scores are ``s[i, k] = p_i . q_k / tau``. All losses are sums over anchors,
matching the per-anchor formulation; pass ``reduction="mean"`` to divide by
the number of anchors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .exceptions import ConfigError, NumericalError
from .neighborhood import Masks, NeighborhoodSpec


@dataclass(frozen=True)
class LossSpec:
    tau: float = 0.1
    alpha: float = 0.3
    neighborhood: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass
class ProjectionSet:
    P: ag.Tensor  # (2N, d) online projections
    Q: np.ndarray  # (M, d) queue, front 2N rows are this batch's momentum projections
    masks: Masks


def _scores(ps: ProjectionSet, tau):
    return ag.mul(ag.matmul(ps.P, np.ascontiguousarray(ps.Q.T)), 1.0 / tau)


def _reduce(per_anchor, reduction):
    total = ag.sum(per_anchor)
    if reduction == "mean":
        return ag.mul(total, 1.0 / per_anchor.shape[0])
    return total


def loss_na(ps: ProjectionSet, spec: LossSpec, reduction="sum") -> ag.Tensor:
    """Pull every neighbor toward the anchor, normalising over all non-self entries."""
    neigh = ps.masks.neighbors
    counts = neigh.sum(axis=1)
    if (counts == 0).any():
        raise NumericalError("empty neighborhood row in loss_na")
    s = _scores(ps, spec.tau)
    lse = ag.logsumexp(s, ~ps.masks.self_mask)
    pos_mean = ag.sum(ag.mul(s, neigh / counts[:, None]), axis=1)
    return _reduce(ag.add(lse, ag.mul(pos_mean, -1.0)), reduction)


def loss_nd(ps: ProjectionSet, spec: LossSpec, reduction="sum") -> ag.Tensor:
    """Pick the paired view out among the anchor's neighbors."""
    neigh = ps.masks.neighbors
    if (neigh.sum(axis=1) == 0).any():
        raise NumericalError("empty neighborhood row in loss_nd")
    s = _scores(ps, spec.tau)
    n2 = s.shape[0]
    onehot = np.zeros(s.shape)
    onehot[np.arange(n2), ps.masks.v_index] = 1.0
    lse = ag.logsumexp(s, neigh)
    pos = ag.sum(ag.mul(s, onehot), axis=1)
    return _reduce(ag.add(lse, ag.mul(pos, -1.0)), reduction)


def loss_ncl(ps: ProjectionSet, spec: LossSpec, reduction="sum") -> ag.Tensor:
    """``alpha * NA + (1 - alpha) * ND``; the unused term is skipped at the endpoints."""
    if spec.alpha == 1.0:
        return loss_na(ps, spec, reduction)
    if spec.alpha == 0.0:
        return loss_nd(ps, spec, reduction)
    na = loss_na(ps, spec, reduction)
    nd = loss_nd(ps, spec, reduction)
    return ag.add(ag.mul(na, spec.alpha), ag.mul(nd, 1.0 - spec.alpha))


def contrastive_accuracy(ps: ProjectionSet) -> float:
    """Fraction of anchors whose paired-view score strictly beats every other candidate."""
    P = ps.P.data if isinstance(ps.P, ag.Tensor) else np.asarray(ps.P)
    s = P @ ps.Q.T
    n2 = s.shape[0]
    rows = np.arange(n2)
    pos = s[rows, ps.masks.v_index]
    others = np.where(ps.masks.self_mask, -np.inf, s)
    others[rows, ps.masks.v_index] = -np.inf
    return float(np.mean(pos > others.max(axis=1)))
