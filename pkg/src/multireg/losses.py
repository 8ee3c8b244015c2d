"""Training losses as plain scalar functions (forward values only)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from .errors import IndexOutOfRange, LengthMismatch, NoNegatives, NoPositives


@dataclass(frozen=True)
class LossConfig:
    delta_p: float = 0.1
    delta_n: float = 1.4
    gamma: float = 10.0

    def __post_init__(self):
        if not self.delta_n > self.delta_p:
            raise ValueError("delta_n must exceed delta_p")


def circle_loss(anchors, positives, overlaps, negatives, cfg: LossConfig = LossConfig()) -> float:
    """Overlap-weighted circle loss averaged over anchors.

    For anchor ``i`` with positive distances ``d_p`` (overlap ``o``) and
    negative distances ``d_n``::

        log(1 + sum_p exp(sqrt(o) * bp * (d_p - dp)) * sum_n exp(bn * (dn - d_n)))

    with ``bp = gamma * (d_p - dp)`` and ``bn = gamma * (dn - d_n)``.

    ``positives``/``negatives`` hold one ``(m, d)`` feature array per anchor,
    ``overlaps`` one ``(m,)`` array per anchor.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    if not (len(positives) == len(negatives) == len(overlaps) == len(anchors)):
        raise LengthMismatch("one positive/negative/overlap set per anchor")
    total = 0.0
    for a, pos, o, neg in zip(anchors, positives, overlaps, negatives):
        pos = np.asarray(pos, dtype=np.float64).reshape(-1, anchors.shape[1])
        neg = np.asarray(neg, dtype=np.float64).reshape(-1, anchors.shape[1])
        o = np.asarray(o, dtype=np.float64).reshape(-1)
        if len(pos) == 0:
            raise NoPositives("every anchor needs a positive")
        if len(neg) == 0:
            raise NoNegatives("every anchor needs a negative")
        if len(o) != len(pos):
            raise LengthMismatch("one overlap ratio per positive")
        d_p = np.linalg.norm(pos - a, axis=1)
        d_n = np.linalg.norm(neg - a, axis=1)
        lam = np.sqrt(o)
        e_pos = lam * cfg.gamma * (d_p - cfg.delta_p) ** 2
        e_neg = cfg.gamma * (cfg.delta_n - d_n) ** 2
        # log(1 + e^x) with x = lse(e_pos) + lse(e_neg)
        total += np.logaddexp(0.0, logsumexp(e_pos) + logsumexp(e_neg))
    return float(total / len(anchors))


def nll_matching_loss(assignment, gt_pairs, unmatched_p=(), unmatched_q=()) -> float:
    """Negative log-likelihood of matched pairs and dustbin assignments.

    ``assignment`` is the ``(n+1, m+1)`` matrix including the dustbin row and
    column.
    """
    z = np.asarray(assignment, dtype=np.float64)
    n, m = z.shape[0] - 1, z.shape[1] - 1
    pairs = np.asarray(gt_pairs, dtype=np.int64).reshape(-1, 2)
    up = np.asarray(unmatched_p, dtype=np.int64).reshape(-1)
    uq = np.asarray(unmatched_q, dtype=np.int64).reshape(-1)
    if (len(pairs) and (pairs.min() < 0 or pairs[:, 0].max() >= n or pairs[:, 1].max() >= m)) \
            or (len(up) and (up.min() < 0 or up.max() >= n)) \
            or (len(uq) and (uq.min() < 0 or uq.max() >= m)):
        raise IndexOutOfRange("correspondence index outside the assignment matrix")
    vals = np.concatenate([z[pairs[:, 0], pairs[:, 1]], z[up, m], z[n, uq]])
    return float(-np.sum(np.log(vals)))


def mask_loss(pred, gt) -> float:
    """Mean binary cross-entropy plus Laplace-smoothed dice.

    The dice term is ``1 - 2 (sum(p*g) + 1) / (sum(p) + sum(g) + 1)``, which
    goes negative for near-empty masks.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    g = np.asarray(gt, dtype=np.float64).reshape(-1)
    if len(p) != len(g):
        raise LengthMismatch("prediction and ground truth lengths differ")
    bce = -np.mean(xlogy(g, p) + xlogy(1.0 - g, 1.0 - p)) if len(p) else 0.0
    dice = 1.0 - 2.0 * (np.dot(p, g) + 1.0) / (p.sum() + g.sum() + 1.0)
    return float(bce + dice)
