"""KITTI object-label text files and sample-id split lists.

Label line layout (space separated, one object per line)::

    type truncated occluded alpha  x1 y1 x2 y2  h w l  x y z  rotation_y [score]

15 fields without a score, 16 with.  Locations are in the rectified camera
frame (x right, y down, z forward) and mark the bottom center of the box.

The writer emits every real-valued field in fixed point with ``precision``
decimals (2 by default) and ``occluded`` as an integer, so
``parse(write(x))`` reproduces ``x`` rounded to that precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import normalize_angle

FIELD_NAMES = (
    "type", "truncated", "occluded", "alpha",
    "bbox_left", "bbox_top", "bbox_right", "bbox_bottom",
    "height", "width", "length",
    "x", "y", "z", "rotation_y", "score",
)


class KittiFormatError(ValueError):
    """Malformed label line or split file; message names the line and field."""


@dataclass(frozen=True)
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple  # (left, top, right, bottom) in pixels
    dimensions: tuple  # (height, width, length) in meters
    location: tuple  # (x, y, z) in the camera frame, meters
    rotation_y: float
    score: Optional[float] = None


def _real(token: str, index: int, lineno) -> float:
    try:
        value = float(token)
    except ValueError:
        raise KittiFormatError(
            f"line {lineno}: field {index} ({FIELD_NAMES[index]}) is not a number: {token!r}"
        ) from None
    if not math.isfinite(value):
        raise KittiFormatError(f"line {lineno}: field {index} ({FIELD_NAMES[index]}) is not finite: {token!r}")
    return value


def parse_label_line(line: str, lineno: int | None = None) -> KittiLabel:
    tokens = line.split()
    if len(tokens) not in (15, 16):
        raise KittiFormatError(f"line {lineno}: expected 15 or 16 fields, got {len(tokens)}")
    nums = [_real(tok, i, lineno) for i, tok in enumerate(tokens) if i > 0]
    occluded = nums[1]
    if occluded != int(occluded):
        raise KittiFormatError(f"line {lineno}: field 2 (occluded) must be an integer, got {tokens[2]!r}")
    return KittiLabel(
        type=tokens[0],
        truncated=nums[0],
        occluded=int(occluded),
        alpha=nums[2],
        bbox=tuple(nums[3:7]),
        dimensions=tuple(nums[7:10]),
        location=tuple(nums[10:13]),
        rotation_y=nums[13],
        score=nums[14] if len(tokens) == 16 else None,
    )


def parse_label_file(text: str) -> list:
    """Parse every non-blank line; malformed lines raise, never get skipped."""
    return [parse_label_line(line, n) for n, line in enumerate(text.splitlines(), start=1) if line.strip()]


def _fmt(value: float, precision: int) -> str:
    return f"{value:.{precision}f}"


def format_label_line(label: KittiLabel, precision: int = 2) -> str:
    if any(ch.isspace() for ch in label.type) or not label.type:
        raise KittiFormatError(f"object type must be a non-empty token, got {label.type!r}")
    parts = [label.type, _fmt(label.truncated, precision), str(int(label.occluded)), _fmt(label.alpha, precision)]
    parts += [_fmt(v, precision) for v in label.bbox]
    parts += [_fmt(v, precision) for v in label.dimensions]
    parts += [_fmt(v, precision) for v in label.location]
    parts.append(_fmt(label.rotation_y, precision))
    if label.score is not None:
        parts.append(_fmt(label.score, precision))
    return " ".join(parts)


def write_label_file(labels: Iterable[KittiLabel], precision: int = 2) -> str:
    lines = [format_label_line(lb, precision) for lb in labels]
    return "".join(line + "\n" for line in lines)


def quantize(label: KittiLabel, precision: int = 2) -> KittiLabel:
    """The value a label takes after a write/parse round-trip."""
    q = lambda v: float(_fmt(v, precision))  # noqa: E731
    return KittiLabel(
        type=label.type,
        truncated=q(label.truncated),
        occluded=int(label.occluded),
        alpha=q(label.alpha),
        bbox=tuple(q(v) for v in label.bbox),
        dimensions=tuple(q(v) for v in label.dimensions),
        location=tuple(q(v) for v in label.location),
        rotation_y=q(label.rotation_y),
        score=None if label.score is None else q(label.score),
    )


def parse_split_file(text: str) -> list:
    """Sample ids, one per line, order preserved (zero padding kept)."""
    ids, seen = [], {}
    for n, line in enumerate(text.splitlines(), start=1):
        sample = line.strip()
        if not sample:
            continue
        if sample in seen:
            raise KittiFormatError(f"line {n}: duplicate sample id {sample!r} (first seen on line {seen[sample]})")
        seen[sample] = n
        ids.append(sample)
    return ids


def write_split_file(ids: Sequence[str]) -> str:
    if len(set(ids)) != len(ids):
        raise KittiFormatError("duplicate sample ids")
    return "".join(f"{i}\n" for i in ids)


def partition_split(train_ids: Sequence[str], labeled_ids: Sequence[str]) -> tuple:
    """Split ``train_ids`` into (labeled, unlabeled), preserving train order."""
    labeled = set(labeled_ids)
    missing = labeled.difference(train_ids)
    if missing:
        raise KittiFormatError(f"{len(missing)} labeled ids are not in the train split, e.g. {sorted(missing)[0]!r}")
    return [i for i in train_ids if i in labeled], [i for i in train_ids if i not in labeled]


# Axis convention for the camera <-> box conversion (no calibration applied):
#   box x = camera z (forward), box y = -camera x (left), box z = -camera y (up).
# KITTI locations are bottom centers; Box3D centers are geometric centers.
# rotation_y turns about camera -y, so box yaw = -rotation_y - pi/2.


def label_to_box_array(label: KittiLabel) -> np.ndarray:
    h, w, l = label.dimensions
    x, y, z = label.location
    yaw = normalize_angle(-label.rotation_y - math.pi / 2)
    return np.array([z, -x, -y + 0.5 * h, l, w, h, yaw], dtype=np.float64)


def box_array_to_label(box, type_: str, score: float | None = None, truncated: float = 0.0,
                       occluded: int = 0, bbox=(0.0, 0.0, 0.0, 0.0)) -> KittiLabel:
    x, y, z, l, w, h, yaw = (float(v) for v in box)
    loc = (-y, -(z - 0.5 * h), x)
    rot_y = normalize_angle(-yaw - math.pi / 2)
    alpha = normalize_angle(rot_y - math.atan2(loc[0], loc[2]))
    return KittiLabel(type_, truncated, occluded, alpha, tuple(bbox), (h, w, l), loc, rot_y, score)


def label_field_values(label: KittiLabel) -> tuple:
    """Flat tuple of every field, for field-by-field comparison."""
    out = []
    for f in fields(label):
        v = getattr(label, f.name)
        out.extend(v if isinstance(v, tuple) else (v,))
    return tuple(out)
