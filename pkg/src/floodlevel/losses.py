"""Loss functions for joint depth regression and pairwise ranking.

The total training objective is

    total = regression + lambda * ranking

where the regression term is a mean squared error over strongly labelled
samples and the ranking term is a hinge on prediction differences over
weakly labelled pairs. These are the reference (numpy) definitions; the
trainer mirrors them with autograd-capable tensor ops, and tests pin the
two implementations against each other.

All functions accept scalars or 1-d arrays; batch forms reduce by mean, so
the meaning of ``lambda`` does not depend on batch size or pair count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_LAMBDA = 5.0


@dataclass(frozen=True)
class LossWeights:
    """Weighting between the regression and ranking terms."""

    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


def _as_finite_array(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def regression_loss(y, y_gt) -> float:
    """Mean squared error between predictions and ground-truth depths."""
    y = _as_finite_array(y, "y")
    y_gt = _as_finite_array(y_gt, "y_gt")
    if y.shape != y_gt.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_gt.shape}")
    if y.size == 0:
        return 0.0
    return float(np.mean((y - y_gt) ** 2))


def ranking_loss(y1, y2, sign, margin: float = 0.0) -> float:
    """Pairwise hinge: penalize pairs whose predicted order contradicts ``sign``.

    ``sign`` is +1 when the first image shows the higher level and -1 when the
    second one does. ``margin`` defaults to 0 (the plain hinge); a positive
    margin additionally penalizes near-ties and is an extension beyond the
    basic formulation.
    """
    y1 = _as_finite_array(y1, "y1")
    y2 = _as_finite_array(y2, "y2")
    sign = np.atleast_1d(np.asarray(sign))
    if not (y1.shape == y2.shape == sign.shape):
        raise ValueError(f"shape mismatch: {y1.shape}, {y2.shape}, {sign.shape}")
    if not np.all(np.isin(sign, (-1, 1))):
        raise ValueError("rank targets must be +1 or -1")
    if y1.size == 0:
        return 0.0
    return float(np.mean(np.maximum(0.0, margin - sign * (y1 - y2))))


def total_loss(l_reg: float, l_rank: float, weights: LossWeights) -> float:
    """Combine the two terms: ``l_reg + lambda * l_rank``."""
    if l_reg < 0 or l_rank < 0:
        raise ValueError("loss terms must be non-negative")
    return l_reg + weights.lam * l_rank


def loss_gradients(
    reg_pred,
    reg_target,
    rank_pred_a,
    rank_pred_b,
    rank_signs,
    weights: LossWeights,
    margin: float = 0.0,
):
    """Analytic gradients of the total loss w.r.t. every prediction.

    Returns ``(g_reg, g_a, g_b)`` where ``g_reg[i] = d total / d reg_pred[i]``
    and likewise for the two sides of each pair. With mean reduction over N
    samples and M pairs:

        d reg / d y_i   = 2 (y_i - y_gt_i) / N
        d rank / d y1_j = -sign_j / M   if the hinge is active, else 0
        d rank / d y2_j = +sign_j / M   if the hinge is active, else 0

    and the ranking gradients are scaled by lambda. The subgradient at the
    hinge kink is taken as 0.
    """
    reg_pred = _as_finite_array(reg_pred, "reg_pred")
    reg_target = _as_finite_array(reg_target, "reg_target")
    a = _as_finite_array(rank_pred_a, "rank_pred_a")
    b = _as_finite_array(rank_pred_b, "rank_pred_b")
    signs = np.atleast_1d(np.asarray(rank_signs, dtype=np.float64))
    if not np.all(np.isin(signs, (-1.0, 1.0))) and signs.size:
        raise ValueError("rank targets must be +1 or -1")

    n = reg_pred.size
    g_reg = 2.0 * (reg_pred - reg_target) / n if n else np.zeros(0)

    m = a.size
    if m:
        active = (margin - signs * (a - b)) > 0.0
        g_a = np.where(active, -signs, 0.0) * (weights.lam / m)
        g_b = np.where(active, signs, 0.0) * (weights.lam / m)
    else:
        g_a = np.zeros(0)
        g_b = np.zeros(0)
    return g_reg, g_a, g_b
