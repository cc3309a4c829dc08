"""Independent reference formulas, written as plain loops over lists.

Nothing here touches the package's mask builder or loss code; neighbor sets
are derived directly from per-sample metadata.
"""

import math
import random


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _log_denominator(p, Q, skip, keep, tau):
    terms = [dot(p, Q[k]) / tau for k in range(len(Q)) if k != skip and keep(k)]
    m = max(terms)
    return m + math.log(sum(math.exp(t - m) for t in terms))


def cl_loss(P, Q, partner, tau):
    """-sum_i log exp(p_i q_v(i) / tau) / sum_{k != i} exp(p_i q_k / tau)."""
    total = 0.0
    for i, p in enumerate(P):
        total -= dot(p, Q[partner[i]]) / tau - _log_denominator(p, Q, i, lambda k: True, tau)
    return total


def scl_loss(P, Q, anchor_labels, queue_labels, tau):
    """Supervised contrastive loss with Y(i) = {k != i : y_k == y_i} over the queue."""
    total = 0.0
    for i, p in enumerate(P):
        pos = [k for k in range(len(Q)) if k != i and queue_labels[k] == anchor_labels[i]]
        den = _log_denominator(p, Q, i, lambda k: True, tau)
        total -= sum(dot(p, Q[l]) / tau - den for l in pos) / len(pos)
    return total


def na_loss(P, Q, neighbors, tau):
    """Neighbors-alignment loss; ``neighbors[i]`` lists queue positions (self excluded)."""
    total = 0.0
    for i, p in enumerate(P):
        den = _log_denominator(p, Q, i, lambda k: True, tau)
        total -= sum(dot(p, Q[l]) / tau - den for l in neighbors[i]) / len(neighbors[i])
    return total


def nd_loss(P, Q, neighbors, partner, tau):
    """Neighbor-discriminative loss; denominator restricted to ``neighbors[i]``."""
    total = 0.0
    for i, p in enumerate(P):
        allowed = set(neighbors[i])
        den = _log_denominator(p, Q, -1, lambda k: k in allowed, tau)
        total -= dot(p, Q[partner[i]]) / tau - den
    return total


def window_neighbors(anchor_meta, queue_meta, w):
    """Queue positions k != i with the same stay and |dt| < w, or the same source uid."""
    out = []
    for i, (stay, t, uid) in enumerate(anchor_meta):
        out.append([
            k for k, (s2, t2, u2) in enumerate(queue_meta)
            if k != i and (u2 == uid or (s2 == stay and abs(t2 - t) < w))
        ])
    return out


def unit(v):
    n = math.sqrt(dot(v, v))
    return [x / n for x in v]


def random_instance(seed, n=4, extra=8, d=5, n_stays=3, n_labels=2):
    """Random unit projections, a queue whose front is the batch, and metadata.

    Returns a dict of plain lists; views i and i + n/2 share a uid.
    """
    rng = random.Random(seed)
    half = n // 2
    sources = [(rng.randrange(n_stays), rng.randrange(30), rng.randrange(n_labels)) for _ in range(half)]
    anchor = [(s, t, i) for i, (s, t, _) in enumerate(sources)] * 2
    anchor_labels = [y for _, _, y in sources] * 2
    older = [(rng.randrange(n_stays), rng.randrange(30), 1000 + k) for k in range(extra)]
    older_labels = [rng.randrange(n_labels) for _ in range(extra)]
    P = [unit([rng.gauss(0, 1) for _ in range(d)]) for _ in range(n)]
    Q = [unit([rng.gauss(0, 1) for _ in range(d)]) for _ in range(n + extra)]
    return {
        "P": P, "Q": Q, "anchor": anchor, "queue": anchor + older,
        "anchor_labels": anchor_labels, "queue_labels": anchor_labels + older_labels,
        "partner": [(i + half) % n for i in range(n)],
    }


def concordance_auroc(scores, labels):
    """Pairwise concordance; ties count one half."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (len(pos) * len(neg))


def kappa_from_confusion(confusion):
    """Linear-weighted kappa straight from an observed count matrix (rows: truth)."""
    K = len(confusion)
    n = sum(map(sum, confusion))
    rows = [sum(r) / n for r in confusion]
    cols = [sum(confusion[i][j] for i in range(K)) / n for j in range(K)]
    num = den = 0.0
    for i in range(K):
        for j in range(K):
            w = abs(i - j) / (K - 1)
            num += w * confusion[i][j] / n
            den += w * rows[i] * cols[j]
    return 1.0 - num / den


def sacl_loss(P, Q, anchor_meta, queue_meta, partner, tau):
    """Subject-aware loss: the paired view against every other view of the same stay."""
    total = 0.0
    for i, p in enumerate(P):
        stay = anchor_meta[i][0]
        den = _log_denominator(p, Q, i, lambda k: queue_meta[k][0] == stay, tau)
        total -= dot(p, Q[partner[i]]) / tau - den
    return total


def clocs_loss(P, Q, anchor_meta, queue_meta, tau):
    """Patient-level positives: every other view of the same stay, averaged."""
    total = 0.0
    for i, p in enumerate(P):
        stay = anchor_meta[i][0]
        pos = [k for k in range(len(Q)) if k != i and queue_meta[k][0] == stay]
        den = _log_denominator(p, Q, i, lambda k: True, tau)
        total -= sum(dot(p, Q[l]) / tau - den for l in pos) / len(pos)
    return total
