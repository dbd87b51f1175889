"""Set-prediction loss with exact bipartite matching.

Cost of assigning prompt i to ground-truth instance j is
2 * (-log p_i[c_j]) + 5 * (1 - Dice) + 5 * BCE. Matched prompts pay the same
weighted terms; every unmatched prompt pays -log p_i[no-object].
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .. import autodiff as ad
from .. import tensor as T
from ..errors import NumericError

W_CLASS, W_DICE, W_BCE = 2.0, 5.0, 5.0
DICE_SMOOTH = 1.0


def dice_loss(prob: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Pairwise 1 - Dice between rows of prob (L, P) and rows of target (G, P)."""
    inter = prob @ target.T
    denom = prob.sum(axis=1)[:, None] + target.sum(axis=1)[None, :]
    return 1.0 - (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)


def bce_cost(logits: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Pairwise mean binary cross-entropy between logit rows and 0/1 target rows."""
    sp = np.logaddexp(0.0, logits).sum(axis=1)[:, None]
    return (sp - logits @ target.T) / logits.shape[1]


def cost_matrix(class_logits: np.ndarray, mask_logits: np.ndarray, gt_classes, gt_masks) -> np.ndarray:
    logp = T.log_softmax_rows(class_logits)
    target = np.asarray(gt_masks, dtype=np.float64).reshape(len(gt_classes), mask_logits.shape[1])
    prob = T.sigmoid(mask_logits)
    return (W_CLASS * -logp[:, list(gt_classes)]
            + W_DICE * dice_loss(prob, target)
            + W_BCE * bce_cost(mask_logits, target))


def match(cost: np.ndarray):
    """Minimum-cost assignment; returns (prompt rows, gt columns)."""
    if cost.shape[1] == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


def set_prediction_loss(class_logits, mask_logits, gt_classes, gt_masks, return_matching: bool = False):
    """Scalar loss node for one video.

    ``class_logits`` is (L, C+1) with no-object last, ``mask_logits`` is
    (L, P) over the flattened spatio-temporal pixels, ``gt_classes`` holds
    task-local class indices and ``gt_masks`` the matching (G, P) 0/1 masks.
    """
    cl, ml = ad._lift(class_logits), ad._lift(mask_logits)
    if not (np.all(np.isfinite(cl.value)) and np.all(np.isfinite(ml.value))):
        raise NumericError("NaN or Inf in predictions")
    n_prompts, n_cls = cl.value.shape
    gt_classes = list(gt_classes)
    target = np.asarray(gt_masks, dtype=np.float64).reshape(len(gt_classes), ml.value.shape[1])
    rows, cols = match(cost_matrix(cl.value, ml.value, gt_classes, target)) if gt_classes else match(
        np.zeros((n_prompts, 0)))

    weight = np.zeros((n_prompts, n_cls))
    weight[:, -1] = 1.0
    weight[rows, -1] = 0.0
    weight[rows, np.asarray(gt_classes, dtype=np.intp)[cols]] = W_CLASS
    loss = ad.scale(ad.sum_all(ad.mul(ad.log_softmax_rows(cl), weight)), -1.0)

    if len(rows):
        picked = ad.take(ml, rows, axis=0)
        tgt = target[cols]
        prob = ad.sigmoid(picked)
        inter = ad.sum_axis(ad.mul(prob, tgt), axis=1)
        denom = ad.add(ad.sum_axis(prob, axis=1), tgt.sum(axis=1) + DICE_SMOOTH)
        dice = ad.sub(1.0, ad.div(ad.add(ad.scale(inter, 2.0), DICE_SMOOTH), denom))
        bce = ad.mean_axis(ad.bce_with_logits(picked, tgt), axis=1)
        loss = ad.add(loss, ad.add(ad.scale(ad.sum_all(dice), W_DICE), ad.scale(ad.sum_all(bce), W_BCE)))
    return (loss, (rows, cols)) if return_matching else loss
