"""KITTI-style detection evaluation: greedy matching, AP@40, FP/FN sweeps.

A single difficulty stratum is evaluated.  Matching is per class with the
class's IoU threshold (Car 0.7, Pedestrian 0.5, Cyclist 0.5 by default).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import as_box_array, bev_iou_matrix, iou3d_matrix
from .structures import CLASS_NAMES, DEFAULT_IOU_THRESHOLDS, GroundTruth, ProposalSet, per_class
from .suppression import score_order

CSV_COLUMNS = ("class", "threshold", "TP", "FP", "FN", "precision", "recall", "AP")


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_IOU_THRESHOLDS))
    num_recall_points: int = 40
    iou_kind: str = "3d"

    def __post_init__(self):
        thresholds = per_class(self.iou_thresholds, DEFAULT_IOU_THRESHOLDS)
        for cid, thr in thresholds.items():
            if not 0.0 < thr <= 1.0:
                raise ValueError(f"IoU threshold for {CLASS_NAMES[cid]} must lie in (0, 1], got {thr}")
        if self.num_recall_points < 1:
            raise ValueError("num_recall_points must be >= 1")
        if self.iou_kind not in ("3d", "bev"):
            raise ValueError("iou_kind must be '3d' or 'bev'")
        object.__setattr__(self, "iou_thresholds", thresholds)

    def iou_matrix(self, a, b) -> np.ndarray:
        return iou3d_matrix(a, b) if self.iou_kind == "3d" else bev_iou_matrix(a, b)


@dataclass
class MatchResult:
    """Outcome of one-to-one matching for one scene and class."""

    scores: np.ndarray
    pred_to_gt: np.ndarray  # -1 for unmatched predictions
    matched_iou: np.ndarray
    n_gt: int

    @property
    def tp_mask(self) -> np.ndarray:
        return self.pred_to_gt >= 0

    @property
    def tp(self) -> int:
        return int(np.count_nonzero(self.pred_to_gt >= 0))

    @property
    def fp(self) -> int:
        return len(self.pred_to_gt) - self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def greedy_match(pred_boxes, pred_scores, gt_boxes, iou_threshold: float, ious=None, iou_kind: str = "3d") -> MatchResult:
    """Visit predictions by descending score; each takes the highest-IoU
    unmatched ground truth whose IoU is at least ``iou_threshold``.

    ``ious`` may be supplied as a precomputed ``[n_pred, n_gt]`` matrix.
    """
    scores = np.asarray(pred_scores, dtype=np.float64).reshape(-1)
    n_pred = len(scores)
    if ious is None:
        pb, gb = as_box_array(pred_boxes), as_box_array(gt_boxes)
        n_gt = len(gb)
        ious = (iou3d_matrix if iou_kind == "3d" else bev_iou_matrix)(pb, gb)
    else:
        ious = np.asarray(ious, dtype=np.float64)
        n_gt = ious.shape[1] if ious.ndim == 2 else 0
    pred_to_gt = np.full(n_pred, -1, dtype=np.int64)
    matched_iou = np.zeros(n_pred, dtype=np.float64)
    if n_pred and n_gt:
        used = np.zeros(n_gt, dtype=bool)
        for p in score_order(scores):
            row = np.where(used, -1.0, ious[p])
            g = int(np.argmax(row))
            if row[g] >= iou_threshold:
                used[g] = True
                pred_to_gt[p] = g
                matched_iou[p] = row[g]
    return MatchResult(scores, pred_to_gt, matched_iou, n_gt)


def ap_from_matches(scores, tp_mask, n_gt: int, num_points: int = 40) -> float:
    """Interpolated average precision sampled at recall k/num_points, k=1..num_points.

    Precision is interpolated as the running maximum from the right.  Returns
    NaN when there is no ground truth.
    """
    if n_gt <= 0:
        return math.nan
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(scores) == 0:
        return 0.0
    order = score_order(scores)
    tp = np.asarray(tp_mask, dtype=bool)[order]
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(tp) + 1)
    precision = cum_tp / ranks
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for k in range(1, num_points + 1):
        # recall >= k/num_points, decided in integers
        reached = np.flatnonzero(num_points * cum_tp >= k * n_gt)
        if len(reached):
            total += float(interp[reached[0]])
    return total / num_points


def pr_samples(scores, tp_mask, n_gt: int, num_points: int = 40):
    """Interpolated precision at each sampled recall level, as two arrays."""
    recall_levels = np.arange(1, num_points + 1) / num_points
    precision = np.zeros(num_points)
    if n_gt > 0 and len(scores):
        order = score_order(scores)
        cum_tp = np.cumsum(np.asarray(tp_mask, dtype=bool)[order])
        prec = cum_tp / np.arange(1, len(cum_tp) + 1)
        interp = np.maximum.accumulate(prec[::-1])[::-1]
        for k in range(1, num_points + 1):
            reached = np.flatnonzero(num_points * cum_tp >= k * n_gt)
            if len(reached):
                precision[k - 1] = interp[reached[0]]
    return recall_levels, precision


def match_scene(pred: ProposalSet, gt: GroundTruth, cid: int, config: EvalConfig, min_score: float = -math.inf) -> MatchResult:
    pmask = (pred.class_ids == cid) & (pred.cls_scores >= min_score)
    gmask = gt.class_ids == cid
    pb, gb = pred.boxes[pmask], gt.boxes[gmask]
    ious = config.iou_matrix(pb, gb)
    return greedy_match(None, pred.cls_scores[pmask], None, config.iou_thresholds[cid], ious=ious)


@dataclass
class CountRow:
    class_name: str
    threshold: float
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        kept = self.tp + self.fp
        return self.tp / kept if kept else 0.0

    @property
    def recall(self) -> float:
        n = self.tp + self.fn
        return self.tp / n if n else 0.0


@dataclass
class EvalReport:
    ap: dict  # class name -> AP (NaN when the class has no ground truth)
    map: float
    pr_curves: dict  # class name -> (recall levels, interpolated precision)
    counts: list  # CountRow per class and operating threshold
    n_gt: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.counts:
            ap = self.ap.get(row.class_name, math.nan)
            writer.writerow(
                [row.class_name, repr(float(row.threshold)), row.tp, row.fp, row.fn,
                 repr(row.precision), repr(row.recall), repr(float(ap))]
            )
        return buf.getvalue()


def _check_lengths(predictions, ground_truths):
    if len(predictions) != len(ground_truths):
        raise ValueError("predictions and ground truths must cover the same scenes")


def evaluate(predictions: Sequence[ProposalSet], ground_truths: Sequence[GroundTruth],
             config: EvalConfig | None = None, thresholds: Sequence[float] = (0.0,)) -> EvalReport:
    """AP@N per class, mAP over classes with ground truth, and counts at ``thresholds``."""
    config = config or EvalConfig()
    _check_lengths(predictions, ground_truths)
    ap, curves, n_gt = {}, {}, {}
    for cid, name in enumerate(CLASS_NAMES):
        results = [match_scene(p, g, cid, config) for p, g in zip(predictions, ground_truths)]
        total_gt = sum(r.n_gt for r in results)
        scores = np.concatenate([r.scores for r in results]) if results else np.zeros(0)
        tp = np.concatenate([r.tp_mask for r in results]) if results else np.zeros(0, dtype=bool)
        n_gt[name] = total_gt
        ap[name] = ap_from_matches(scores, tp, total_gt, config.num_recall_points)
        curves[name] = pr_samples(scores, tp, total_gt, config.num_recall_points)
    defined = [v for v in ap.values() if not math.isnan(v)]
    mean_ap = float(np.mean(defined)) if defined else math.nan
    counts = fp_fn_sweep(predictions, ground_truths, thresholds, config, per_class_rows=True)
    return EvalReport(ap, mean_ap, curves, counts, n_gt)


def fp_fn_sweep(predictions: Sequence[ProposalSet], ground_truths: Sequence[GroundTruth],
                thresholds: Sequence[float], config: EvalConfig | None = None,
                per_class_rows: bool = False) -> list:
    """FP/FN counts after discarding predictions scored below each threshold.

    Returns one :class:`CountRow` per threshold (class ``"all"``), or one per
    class and threshold when ``per_class_rows`` is set.
    """
    config = config or EvalConfig()
    _check_lengths(predictions, ground_truths)
    thresholds = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    # IoU matrices do not depend on the threshold: compute each block once.
    blocks = {cid: [] for cid in range(len(CLASS_NAMES))}
    for p, g in zip(predictions, ground_truths):
        for cid in range(len(CLASS_NAMES)):
            pmask = p.class_ids == cid
            gmask = g.class_ids == cid
            ious = config.iou_matrix(p.boxes[pmask], g.boxes[gmask])
            blocks[cid].append((p.cls_scores[pmask], ious, int(gmask.sum())))
    rows = []
    for tau in thresholds:
        totals = {}
        for cid, name in enumerate(CLASS_NAMES):
            tp = fp = fn = 0
            for scores, ious, n_gt in blocks[cid]:
                keep = scores >= tau
                n_keep = int(keep.sum())
                hits = 0
                if n_keep and n_gt:
                    r = greedy_match(None, scores[keep], None, config.iou_thresholds[cid], ious=ious[keep])
                    hits = r.tp
                tp, fp, fn = tp + hits, fp + n_keep - hits, fn + n_gt - hits
            totals[name] = (tp, fp, fn)
        if per_class_rows:
            rows.extend(CountRow(name, tau, *totals[name]) for name in CLASS_NAMES)
        else:
            tp, fp, fn = (sum(v[i] for v in totals.values()) for i in range(3))
            rows.append(CountRow("all", tau, tp, fp, fn))
    return rows
