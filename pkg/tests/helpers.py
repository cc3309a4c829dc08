"""Glue between the plain-list oracles and the package's array types."""

import numpy as np

from ncl import autograd as ag
from ncl.losses import LossSpec, ProjectionSet
from ncl.neighborhood import MetaArrays, NeighborhoodSpec, build_masks
from ncl.training import CONTRASTIVE_METHODS


def meta_arrays(meta, labels):
    stay, t, uid = zip(*meta)
    return MetaArrays(np.array(stay), np.array(t), np.array(labels, float), np.array(uid))


def projection_set(inst, spec: NeighborhoodSpec, requires_grad=False):
    anchors = meta_arrays(inst["anchor"], inst["anchor_labels"])
    queue = meta_arrays(inst["queue"], inst["queue_labels"])
    masks = build_masks(anchors, queue, spec)
    P = ag.Tensor(np.array(inst["P"]), requires_grad=requires_grad)
    return ProjectionSet(P, np.array(inst["Q"]), masks)


def row_spec(method, tau=0.1):
    alpha, w, kind = CONTRASTIVE_METHODS[method]
    return LossSpec(tau, alpha, NeighborhoodSpec(kind, w))

# pass/fail lines from tests/test_acceptance.py, printed in the terminal summary
ACCEPTANCE: list[str] = []
