"""Loss primitives with analytic gradients, and the loss compositions.

Primitives return ``(value, gradient)`` where the gradient is taken with
respect to the first argument and the value is a mean over elements:

* :func:`cls_loss` - sigmoid focal binary cross-entropy on logits.
* :func:`reg_loss` - smooth-L1 on box residuals.
* :func:`iou_est_loss` - binary cross-entropy with soft IoU targets.

Compositions: the supervised total sums all four detector terms, the
unsupervised total drops the IoU-estimation term, and the combined objective
is ``supervised + lambda_u * unsupervised``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_PROB_EPS = 1e-12


def _softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return np.exp(-_softplus(-np.asarray(x, dtype=np.float64)))


def cls_loss(logits, targets, gamma: float = 2.0, alpha: float = 0.25):
    """Mean sigmoid focal loss and its gradient w.r.t. the logits.

    ``alpha`` weights positives and ``1 - alpha`` negatives; ``gamma = 0``
    reduces to alpha-weighted binary cross-entropy.
    """
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("logits and targets differ in shape")
    if x.size == 0:
        return 0.0, np.zeros_like(x)
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("targets must be 0 or 1")
    p = sigmoid(x)
    log_p = -_softplus(-x)
    log_q = -_softplus(x)
    q = 1.0 - p
    pos = alpha * q**gamma * (-log_p)
    neg = (1.0 - alpha) * p**gamma * (-log_q)
    d_pos = alpha * q**gamma * (gamma * p * log_p - q)
    d_neg = (1.0 - alpha) * p**gamma * (p - gamma * q * log_q)
    n = x.size
    value = float(np.sum(np.where(y == 1.0, pos, neg)) / n)
    grad = np.where(y == 1.0, d_pos, d_neg) / n
    return value, grad


def reg_loss(pred, target, beta: float = 1.0):
    """Mean smooth-L1: ``0.5 d^2 / beta`` for ``|d| < beta``, else ``|d| - 0.5 beta``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("pred and target differ in shape")
    if p.size == 0:
        return 0.0, np.zeros_like(p)
    d = p - t
    ad = np.abs(d)
    quad = ad < beta
    value = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta)
    grad = np.where(quad, d / beta, np.sign(d)) / p.size
    return float(np.sum(value) / p.size), grad


def iou_est_loss(pred_iou, target_iou):
    """Mean binary cross-entropy of predicted IoU in (0, 1) against soft targets."""
    p = np.asarray(pred_iou, dtype=np.float64)
    t = np.asarray(target_iou, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("pred_iou and target_iou differ in shape")
    if p.size == 0:
        return 0.0, np.zeros_like(p)
    pc = np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)
    value = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
    grad = (pc - t) / (pc * (1.0 - pc)) / p.size
    return float(np.sum(value) / p.size), grad


def binary_entropy(t) -> float:
    """Mean entropy of soft targets: the minimum of :func:`iou_est_loss`."""
    t = np.clip(np.asarray(t, dtype=np.float64), _PROB_EPS, 1.0 - _PROB_EPS)
    return float(np.mean(-(t * np.log(t) + (1.0 - t) * np.log1p(-t))))


@dataclass(frozen=True)
class LossBreakdown:
    rpn_cls: float = 0.0
    rpn_reg: float = 0.0
    rcnn_iou: float = 0.0
    rcnn_reg: float = 0.0
    total: float = 0.0


@dataclass(frozen=True)
class LossWeights:
    lambda_u: float = 1.0

    def __post_init__(self):
        if not self.lambda_u >= 0:
            raise ValueError("lambda_u must be non-negative")


def supervised_total(rpn_cls: float, rpn_reg: float, rcnn_iou: float, rcnn_reg: float) -> LossBreakdown:
    total = rpn_cls + rpn_reg + rcnn_iou + rcnn_reg
    return LossBreakdown(rpn_cls, rpn_reg, rcnn_iou, rcnn_reg, total)


def unsupervised_total(rpn_cls: float, rpn_reg: float, rcnn_reg: float, rcnn_iou: float | None = None) -> LossBreakdown:
    """Unlabeled-data objective; any IoU-estimation input is ignored."""
    total = rpn_cls + rpn_reg + rcnn_reg
    return LossBreakdown(rpn_cls, rpn_reg, 0.0, rcnn_reg, total)


def combined_total(labeled: LossBreakdown, unlabeled: LossBreakdown, weights: LossWeights = LossWeights()) -> float:
    return labeled.total + weights.lambda_u * unlabeled.total
