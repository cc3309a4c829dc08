"""Momentum (EMA) parameter copies and the FIFO negative queue."""

from __future__ import annotations

import logging

import numpy as np

from .exceptions import ConfigError, DataError, ShapeError
from .neighborhood import MetaArrays

logger = logging.getLogger(__name__)


def ema_update(online: dict, momentum: dict, rho: float) -> dict:
    """In place: ``momentum <- (1 - rho) * online + rho * momentum`` for every tensor."""
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"momentum coefficient must lie in (0, 1), got {rho}")
    if online.keys() != momentum.keys():
        raise ShapeError("ema_update", (len(online),), (len(momentum),))
    for k, m in momentum.items():
        o = online[k].data
        if o.shape != m.data.shape:
            raise ShapeError(f"ema_update[{k}]", o.shape, m.data.shape)
        m.data[...] = (1.0 - rho) * o + rho * m.data
    return momentum


class NegativeQueue:
    """Capacity-bounded queue of unit projections, newest batch first.

    ``vectors[k]`` / ``meta`` row ``k`` are in logical order: after an
    enqueue of a 2N batch, rows ``0..2N-1`` are that batch in order.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity <= 0:
            raise ConfigError("queue capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self.vectors = np.zeros((0, dim))
        self.meta = MetaArrays.empty()

    def __len__(self):
        return len(self.vectors)

    @property
    def full(self):
        return len(self) == self.capacity

    def enqueue(self, vectors, meta: MetaArrays):
        vectors = np.asarray(vectors, dtype=np.float64)
        n = len(vectors)
        if n > self.capacity:
            raise DataError(f"batch of {n} does not fit a queue of capacity {self.capacity}")
        if vectors.ndim != 2 or vectors.shape[1] != self.dim or len(meta) != n:
            raise ShapeError("enqueue", vectors.shape, (len(meta), self.dim))
        keep = self.capacity - n
        self.vectors = np.concatenate([vectors, self.vectors[:keep]])
        self.meta = MetaArrays.concat([meta, self.meta.take(slice(0, keep))])
        return self

    def snapshot(self):
        return self.vectors.copy(), self.meta.take(slice(None))


def warmup_fill(queue: NegativeQueue, batches):
    """Fill ``queue`` to capacity from an iterable of (vectors, meta) batches.

    ``batches`` should be endless or at least long enough; when it runs dry
    before the queue is full, the collected entries are repeated.
    """
    seen = 0
    for vectors, meta in batches:
        room = queue.capacity - len(queue)
        if room <= 0:
            break
        queue.enqueue(vectors[:room], meta.take(slice(0, room)))
        seen += min(room, len(vectors))
    if not queue.full:
        if len(queue) == 0:
            raise DataError("warmup_fill received no batches")
        logger.warning("warmup data (%d entries) smaller than queue capacity %d; repeating", seen, queue.capacity)
        vecs, meta = queue.snapshot()
        while not queue.full:
            room = queue.capacity - len(queue)
            queue.vectors = np.concatenate([queue.vectors, vecs[:room]])
            queue.meta = MetaArrays.concat([queue.meta, meta.take(slice(0, room))])
    return queue
