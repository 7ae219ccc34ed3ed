"""Turn raw teacher proposals into pseudo-labels and score their quality.

Two generation strategies are provided:

* :func:`generate_sparse` - per-class NMS, then a fixed confidence cut.
* :func:`generate_dense` - no suppression at all; every proposal whose
  classification confidence clears the scheduled threshold is kept,
  duplicates included.

Filtering uses the classification confidence only.  The IoU-estimate score is
carried through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import EvalConfig, greedy_match
from .schedule import ThresholdSchedule
from .structures import CLASS_NAMES, GroundTruth, ProposalSet, as_proposal_set, per_class
from .suppression import nms_bev

__all__ = [
    "PseudoLabelSet",
    "LabelQuality",
    "generate_sparse",
    "generate_dense",
    "generate_fixed_dense",
    "per_class_nms",
    "label_quality",
    "as_proposal_set",
]


@dataclass
class PseudoLabelSet:
    labels: ProposalSet
    source_iteration: int
    applied_threshold: object  # float, or {class_id: float} with per-class overrides
    indices: np.ndarray  # positions of the labels in the source proposal list

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def proposals(self) -> list:
        return self.labels.to_proposals()

    def threshold_for(self, cid: int) -> float:
        if isinstance(self.applied_threshold, dict):
            return self.applied_threshold[cid]
        return float(self.applied_threshold)


def _threshold_mask(ps: ProposalSet, threshold, class_thresholds=None) -> tuple:
    if class_thresholds:
        table = per_class(threshold)
        table.update(per_class(class_thresholds, table))
        cut = np.array([table[c] for c in range(len(CLASS_NAMES))])[ps.class_ids] if len(ps) else np.zeros(0)
        return ps.cls_scores >= cut, table
    return ps.cls_scores >= float(threshold), float(threshold)


def per_class_nms(ps: ProposalSet, nms_iou: float) -> np.ndarray:
    """Kept indices (ascending) after running NMS independently per class."""
    kept = []
    for cid in np.unique(ps.class_ids):
        idx = np.flatnonzero(ps.class_ids == cid)
        kept.append(idx[nms_bev(ps.boxes[idx], ps.cls_scores[idx], nms_iou)])
    if not kept:
        return np.zeros(0, dtype=np.intp)
    return np.sort(np.concatenate(kept))


def generate_sparse(proposals, fixed_threshold: float, nms_iou: float, source_iteration: int = 0,
                    class_thresholds=None) -> PseudoLabelSet:
    """Per-class NMS followed by removal of proposals scored below the threshold."""
    ps = as_proposal_set(proposals)
    kept = per_class_nms(ps, nms_iou)
    mask, applied = _threshold_mask(ps, fixed_threshold, class_thresholds)
    kept = kept[mask[kept]]
    return PseudoLabelSet(ps.subset(kept), source_iteration, applied, kept)


def generate_dense(proposals, schedule: ThresholdSchedule, t: int, class_thresholds=None) -> PseudoLabelSet:
    """Keep every proposal with confidence at least the threshold in force at ``t``.

    ``class_thresholds`` optionally overrides the scheduled value per class.
    """
    ps = as_proposal_set(proposals)
    mask, applied = _threshold_mask(ps, schedule.value_at(t), class_thresholds)
    idx = np.flatnonzero(mask)
    return PseudoLabelSet(ps.subset(idx), t, applied, idx)


def generate_fixed_dense(proposals, threshold: float, source_iteration: int = 0) -> PseudoLabelSet:
    return generate_dense(proposals, ThresholdSchedule.constant(threshold), source_iteration)


@dataclass
class LabelQuality:
    """Pseudo-label quality against ground truth.

    ``precision``/``recall`` come from one-to-one greedy matching by
    descending confidence.  ``gt_coverage`` counts a ground-truth object as
    covered when at least one label reaches its class IoU threshold (many
    labels may cover one object), and ``label_precision`` is the fraction of
    labels that cover some object in that sense.
    """

    precision: float
    recall: float
    gt_coverage: float
    mean_matched_iou: float
    label_precision: float
    n_labels: int
    n_gt: int
    tp: int
    n_correct_labels: int
    n_covered: int
    precision_defined: bool = True

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)

    @property
    def supervision_f1(self) -> float:
        return _f1(self.label_precision, self.gt_coverage)

    @classmethod
    def pooled(cls, items) -> "LabelQuality":
        """Micro-average several scenes by summing their counts."""
        items = list(items)
        n_labels = sum(q.n_labels for q in items)
        n_gt = sum(q.n_gt for q in items)
        tp = sum(q.tp for q in items)
        n_correct = sum(q.n_correct_labels for q in items)
        n_cov = sum(q.n_covered for q in items)
        iou_sum = sum(q.mean_matched_iou * q.n_correct_labels for q in items)
        return cls(
            precision=tp / n_labels if n_labels else 0.0,
            recall=tp / n_gt if n_gt else 0.0,
            gt_coverage=n_cov / n_gt if n_gt else 0.0,
            mean_matched_iou=iou_sum / n_correct if n_correct else 0.0,
            label_precision=n_correct / n_labels if n_labels else 0.0,
            n_labels=n_labels, n_gt=n_gt, tp=tp, n_correct_labels=n_correct, n_covered=n_cov,
            precision_defined=n_labels > 0,
        )


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def label_quality(pseudo, gt: GroundTruth, iou_thresholds=None, config: EvalConfig | None = None) -> LabelQuality:
    """Score a pseudo-label set (or a bare ProposalSet) against one scene's ground truth.

    With an empty label set precision is reported as 0 and
    ``precision_defined`` is False.
    """
    if config is None:
        config = EvalConfig(iou_thresholds=iou_thresholds) if iou_thresholds is not None else EvalConfig()
    labels = pseudo.labels if isinstance(pseudo, PseudoLabelSet) else as_proposal_set(pseudo)
    n_labels, n_gt = len(labels), len(gt)
    tp = n_correct = n_cov = 0
    iou_sum = 0.0
    for cid in range(len(CLASS_NAMES)):
        lmask = labels.class_ids == cid
        gmask = gt.class_ids == cid
        if not lmask.any() or not gmask.any():
            continue
        thr = config.iou_thresholds[cid]
        ious = config.iou_matrix(labels.boxes[lmask], gt.boxes[gmask])
        match = greedy_match(None, labels.cls_scores[lmask], None, thr, ious=ious)
        tp += match.tp
        hit = ious >= thr
        correct = hit.any(axis=1)
        n_correct += int(correct.sum())
        n_cov += int(hit.any(axis=0).sum())
        iou_sum += float(ious.max(axis=1)[correct].sum())
    return LabelQuality(
        precision=tp / n_labels if n_labels else 0.0,
        recall=tp / n_gt if n_gt else 0.0,
        gt_coverage=n_cov / n_gt if n_gt else 0.0,
        mean_matched_iou=iou_sum / n_correct if n_correct else 0.0,
        label_precision=n_correct / n_labels if n_labels else 0.0,
        n_labels=n_labels, n_gt=n_gt, tp=tp, n_correct_labels=n_correct, n_covered=n_cov,
        precision_defined=n_labels > 0,
    )
