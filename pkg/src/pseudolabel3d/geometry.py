"""Oriented 3D boxes and exact rotated IoU in bird's-eye view and 3D.

Boxes are upright (yaw-only).  Batched routines take float64 arrays of shape
``[N, 7]`` laid out as ``[x, y, z, l, w, h, yaw]``; ``l`` runs along the
heading direction.  All heavy lifting is delegated to :mod:`.kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels

BOX_DIM = 7


class InvalidBoxError(ValueError):
    """Raised for boxes with non-positive or non-finite parameters."""


def normalize_angle(angle):
    """Wrap an angle (scalar or array) into the half-open interval (-pi, pi].

    Angles already inside the interval are returned unchanged.
    """
    a = np.asarray(angle, dtype=np.float64)
    inside = (a > -np.pi) & (a <= np.pi)
    wrapped = np.where(inside, a, np.pi - np.mod(np.pi - a, 2.0 * np.pi))
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float = 0.0

    def __post_init__(self):
        values = (self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw)
        if not all(math.isfinite(float(v)) for v in values):
            raise InvalidBoxError(f"non-finite box parameter in {values}")
        if self.length <= 0 or self.width <= 0 or self.height <= 0:
            raise InvalidBoxError(
                f"box dimensions must be positive, got l={self.length}, w={self.width}, h={self.height}"
            )
        for name in ("cx", "cy", "cz", "length", "width", "height"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, row: Sequence[float]) -> "Box3D":
        return cls(*(float(v) for v in row[:BOX_DIM]))

    @property
    def bev_area(self) -> float:
        return self.length * self.width

    @property
    def volume(self) -> float:
        return self.length * self.width * self.height


def as_box_array(boxes) -> np.ndarray:
    """Coerce a Box3D, a sequence of Box3D, or an array-like into ``[N, 7]``."""
    if isinstance(boxes, Box3D):
        return boxes.to_array()[None, :]
    if isinstance(boxes, np.ndarray):
        arr = boxes
    else:
        boxes = list(boxes)
        if not boxes:
            return np.zeros((0, BOX_DIM), dtype=np.float64)
        if isinstance(boxes[0], Box3D):
            arr = np.stack([b.to_array() for b in boxes])
        else:
            arr = np.asarray(boxes, dtype=np.float64)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size == 0:
        return np.zeros((0, BOX_DIM), dtype=np.float64)
    if arr.shape[1] != BOX_DIM:
        raise ValueError(f"expected boxes of shape [N, {BOX_DIM}], got {arr.shape}")
    return arr


def validate_box_array(arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidBoxError("non-finite box parameters")
    if np.any(arr[:, 3:6] <= 0):
        raise InvalidBoxError("box dimensions must be positive")


def bev_corners(box) -> np.ndarray:
    """Counter-clockwise BEV corners of one box as a ``[4, 2]`` array.

    Corner order in the box frame is (+l/2, -w/2), (+l/2, +w/2),
    (-l/2, +w/2), (-l/2, -w/2).
    """
    return bev_corners_batch(as_box_array(box))[0]


def bev_corners_batch(boxes: np.ndarray) -> np.ndarray:
    boxes = as_box_array(boxes)
    c = np.cos(boxes[:, 6])[:, None]
    s = np.sin(boxes[:, 6])[:, None]
    hl = 0.5 * boxes[:, 3:4]
    hw = 0.5 * boxes[:, 4:5]
    lx = np.concatenate([hl, hl, -hl, -hl], axis=1)
    ly = np.concatenate([-hw, hw, hw, -hw], axis=1)
    x = boxes[:, 0:1] + (c * lx - s * ly)
    y = boxes[:, 1:2] + (s * lx + c * ly)
    return np.stack([x, y], axis=-1)


def polygon_area(poly) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    p = np.asarray(poly, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def convex_intersection_area(poly_a, poly_b) -> float:
    """Area of the intersection of two counter-clockwise convex polygons.

    Degenerate (zero-area) input yields 0.
    """
    a = np.ascontiguousarray(poly_a, dtype=np.float64).reshape(-1, 2)
    b = np.ascontiguousarray(poly_b, dtype=np.float64).reshape(-1, 2)
    return float(kernels.convex_intersection_area(a, b))


def bev_iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise BEV IoU, shape ``[N, M]``."""
    a, b = as_box_array(boxes_a), as_box_array(boxes_b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.float64)
    return kernels.bev_iou_matrix(a, b)


def iou3d_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise 3D IoU (BEV overlap area times vertical overlap), shape ``[N, M]``."""
    a, b = as_box_array(boxes_a), as_box_array(boxes_b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.float64)
    return kernels.iou3d_matrix(a, b)


def iou_bev(a: Box3D, b: Box3D) -> float:
    return float(bev_iou_matrix(a, b)[0, 0])


def iou_3d(a: Box3D, b: Box3D) -> float:
    return float(iou3d_matrix(a, b)[0, 0])


def boxes_from_array(arr: np.ndarray) -> list:
    return [Box3D.from_array(row) for row in as_box_array(arr)]


def stack_boxes(boxes: Iterable[Box3D]) -> np.ndarray:
    return as_box_array(list(boxes))


def encode_residuals(anchors, targets) -> np.ndarray:
    """Residual targets turning ``anchors`` into ``targets``, shape ``[N, 7]``.

    Center offsets are divided by the anchor's BEV diagonal (x, y) or height
    (z); sizes are log-ratios; the yaw residual is the wrapped angle
    difference.
    """
    a, g = as_box_array(anchors), as_box_array(targets)
    diag = np.sqrt(a[:, 3] ** 2 + a[:, 4] ** 2)
    out = np.empty_like(a)
    out[:, 0] = (g[:, 0] - a[:, 0]) / diag
    out[:, 1] = (g[:, 1] - a[:, 1]) / diag
    out[:, 2] = (g[:, 2] - a[:, 2]) / a[:, 5]
    out[:, 3:6] = np.log(g[:, 3:6] / a[:, 3:6])
    out[:, 6] = normalize_angle(g[:, 6] - a[:, 6])
    return out


def decode_residuals(anchors, residuals) -> np.ndarray:
    """Inverse of :func:`encode_residuals`."""
    a = as_box_array(anchors)
    r = np.asarray(residuals, dtype=np.float64).reshape(-1, BOX_DIM)
    diag = np.sqrt(a[:, 3] ** 2 + a[:, 4] ** 2)
    out = np.empty_like(a)
    out[:, 0] = a[:, 0] + r[:, 0] * diag
    out[:, 1] = a[:, 1] + r[:, 1] * diag
    out[:, 2] = a[:, 2] + r[:, 2] * a[:, 5]
    out[:, 3:6] = a[:, 3:6] * np.exp(r[:, 3:6])
    out[:, 6] = normalize_angle(a[:, 6] + r[:, 6])
    return out
