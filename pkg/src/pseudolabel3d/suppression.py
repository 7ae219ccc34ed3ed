"""Score-ordered BEV non-maximum suppression."""

from __future__ import annotations

import numpy as np

from . import kernels
from .geometry import as_box_array


def score_order(scores) -> np.ndarray:
    """Indices by descending score; ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.argsort(-scores, kind="stable").astype(np.intp)


def nms_bev(boxes, scores, iou_threshold: float) -> np.ndarray:
    """Greedy BEV NMS.

    A box is suppressed iff its BEV IoU with an already kept, higher-ranked
    box is strictly greater than ``iou_threshold``.

    Args:
      boxes: ``[N, 7]`` array (or sequence of Box3D).
      scores: ``[N]`` classification confidences, finite.
      iou_threshold: suppression threshold in [0, 1].

    Returns:
      Kept indices in ascending (input) order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    arr = as_box_array(boxes)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(scores) != len(arr):
        raise ValueError("boxes and scores differ in length")
    if len(arr) == 0:
        return np.zeros(0, dtype=np.intp)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    keep = kernels.nms_bev(arr, score_order(scores), float(iou_threshold))
    return np.flatnonzero(keep)


def nms_proposals(proposals, iou_threshold: float) -> np.ndarray:
    """:func:`nms_bev` over a :class:`~.pseudo_labels.ProposalSet` or list of Proposals."""
    from .pseudo_labels import as_proposal_set

    ps = as_proposal_set(proposals)
    return nms_bev(ps.boxes, ps.cls_scores, iou_threshold)
