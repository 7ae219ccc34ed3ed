"""Object classes and batched containers for proposals and ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import BOX_DIM, Box3D, as_box_array

CLASS_NAMES = ("Car", "Pedestrian", "Cyclist")
CAR, PEDESTRIAN, CYCLIST = 0, 1, 2
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}

# per-class IoU needed for a detection to count as correct
DEFAULT_IOU_THRESHOLDS = {CAR: 0.7, PEDESTRIAN: 0.5, CYCLIST: 0.5}


def class_id(name_or_id) -> int:
    if isinstance(name_or_id, str):
        try:
            return CLASS_IDS[name_or_id]
        except KeyError:
            raise ValueError(f"unknown class {name_or_id!r}; expected one of {CLASS_NAMES}") from None
    cid = int(name_or_id)
    if not 0 <= cid < len(CLASS_NAMES):
        raise ValueError(f"class id {cid} out of range")
    return cid


def per_class(value, default: Mapping[int, float] | None = None) -> dict:
    """Expand a scalar or a name/id-keyed mapping into ``{class_id: value}``."""
    if value is None:
        return dict(default or {})
    if isinstance(value, Mapping):
        out = dict(default or {})
        out.update({class_id(k): float(v) for k, v in value.items()})
        return out
    return {cid: float(value) for cid in range(len(CLASS_NAMES))}


@dataclass(frozen=True)
class Proposal:
    box: Box3D
    class_id: int
    cls_score: float
    iou_score: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "class_id", class_id(self.class_id))
        for name in ("cls_score", "iou_score"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)


@dataclass
class ProposalSet:
    """Structure-of-arrays batch of proposals (or detections)."""

    boxes: np.ndarray
    class_ids: np.ndarray
    cls_scores: np.ndarray
    iou_scores: np.ndarray = None

    def __post_init__(self):
        self.boxes = as_box_array(self.boxes)
        n = len(self.boxes)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        self.cls_scores = np.asarray(self.cls_scores, dtype=np.float64).reshape(-1)
        if self.iou_scores is None:
            self.iou_scores = np.zeros(n, dtype=np.float64)
        self.iou_scores = np.asarray(self.iou_scores, dtype=np.float64).reshape(-1)
        if not (len(self.class_ids) == len(self.cls_scores) == len(self.iou_scores) == n):
            raise ValueError("proposal arrays differ in length")

    @classmethod
    def empty(cls) -> "ProposalSet":
        return cls(np.zeros((0, BOX_DIM)), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_proposals(cls, proposals: Sequence[Proposal]) -> "ProposalSet":
        proposals = list(proposals)
        if not proposals:
            return cls.empty()
        return cls(
            np.stack([p.box.to_array() for p in proposals]),
            [p.class_id for p in proposals],
            [p.cls_score for p in proposals],
            [p.iou_score for p in proposals],
        )

    @classmethod
    def concatenate(cls, sets: Sequence["ProposalSet"]) -> "ProposalSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(
            np.concatenate([s.boxes for s in sets]),
            np.concatenate([s.class_ids for s in sets]),
            np.concatenate([s.cls_scores for s in sets]),
            np.concatenate([s.iou_scores for s in sets]),
        )

    def __len__(self) -> int:
        return len(self.boxes)

    def subset(self, index) -> "ProposalSet":
        return ProposalSet(
            self.boxes[index], self.class_ids[index], self.cls_scores[index], self.iou_scores[index]
        )

    def to_proposals(self) -> list:
        return [
            Proposal(Box3D.from_array(b), int(c), float(s), float(i))
            for b, c, s, i in zip(self.boxes, self.class_ids, self.cls_scores, self.iou_scores)
        ]


def as_proposal_set(proposals) -> ProposalSet:
    if isinstance(proposals, ProposalSet):
        return proposals
    return ProposalSet.from_proposals(proposals)


@dataclass
class GroundTruth:
    """Ground-truth boxes of one scene with their class ids."""

    boxes: np.ndarray
    class_ids: np.ndarray
    index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.boxes = as_box_array(self.boxes)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        if len(self.class_ids) != len(self.boxes):
            raise ValueError("ground-truth boxes and class ids differ in length")

    def __len__(self) -> int:
        return len(self.boxes)

    @classmethod
    def from_boxes(cls, items, index: int = 0) -> "GroundTruth":
        """Build from ``[(Box3D, class), ...]``."""
        items = list(items)
        if not items:
            return cls(np.zeros((0, BOX_DIM)), np.zeros(0, dtype=np.int64), index)
        return cls(np.stack([b.to_array() for b, _ in items]), [class_id(c) for _, c in items], index)
