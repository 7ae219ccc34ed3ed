"""Global flip / scale / rotation augmentation with exact inverses.

A :class:`GeoTransform` acts on a point ``p`` as ``R(rot_z) @ (scale * F @ p)``
where ``F`` reflects across the X axis (``y -> -y``) when ``flip_x`` is set.
The order reflect -> scale -> rotate is fixed, so the set of transforms is
closed under :func:`invert` and :func:`compose`.

Pseudo-labels predicted in the teacher's (weakly augmented) frame are moved
into the student's (strongly augmented) frame with
``compose(strong, invert(weak))``; see :func:`alignment_transform`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, as_box_array, normalize_angle


@dataclass(frozen=True)
class GeoTransform:
    flip_x: bool = False
    scale: float = 1.0
    rot_z: float = 0.0

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if not math.isfinite(self.rot_z):
            raise ValueError("rot_z must be finite")
        object.__setattr__(self, "flip_x", bool(self.flip_x))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rot_z", normalize_angle(float(self.rot_z)))

    @classmethod
    def identity(cls) -> "GeoTransform":
        return cls()

    def matrix(self) -> np.ndarray:
        """3x3 linear map (homogeneous in z: z is scaled, never rotated)."""
        c, s = math.cos(self.rot_z), math.sin(self.rot_z)
        f = -1.0 if self.flip_x else 1.0
        return np.array(
            [
                [c * self.scale, -s * f * self.scale, 0.0],
                [s * self.scale, c * f * self.scale, 0.0],
                [0.0, 0.0, self.scale],
            ]
        )


def invert(t: GeoTransform) -> GeoTransform:
    # R(a) S F inverted is F S^-1 R(-a); F R(-a) = R(a) F when reflecting
    rot = t.rot_z if t.flip_x else -t.rot_z
    return GeoTransform(flip_x=t.flip_x, scale=1.0 / t.scale, rot_z=rot)


def compose(outer: GeoTransform, inner: GeoTransform) -> GeoTransform:
    """Transform equivalent to applying ``inner`` first, then ``outer``."""
    inner_rot = -inner.rot_z if outer.flip_x else inner.rot_z
    return GeoTransform(
        flip_x=outer.flip_x != inner.flip_x,
        scale=outer.scale * inner.scale,
        rot_z=outer.rot_z + inner_rot,
    )


def apply_boxes(t: GeoTransform, boxes) -> np.ndarray:
    """Apply ``t`` to an ``[N, 7]`` box array (returns a new array)."""
    arr = as_box_array(boxes).copy()
    x, y = arr[:, 0], arr[:, 1].copy()
    if t.flip_x:
        y = -y
    x = x * t.scale
    y = y * t.scale
    c, s = math.cos(t.rot_z), math.sin(t.rot_z)
    arr[:, 0] = c * x - s * y
    arr[:, 1] = s * x + c * y
    arr[:, 2] *= t.scale
    arr[:, 3:6] *= t.scale
    yaw = -arr[:, 6] if t.flip_x else arr[:, 6]
    arr[:, 6] = normalize_angle(yaw + t.rot_z)
    return arr


def apply(t: GeoTransform, box: Box3D) -> Box3D:
    return Box3D.from_array(apply_boxes(t, box)[0])


def apply_points(t: GeoTransform, points: np.ndarray) -> np.ndarray:
    """Apply ``t`` to an ``[N, >=3]`` point array; extra columns pass through."""
    pts = np.array(points, dtype=np.float64, copy=True)
    pts[:, :3] = pts[:, :3] @ t.matrix().T
    return pts


def alignment_transform(weak: GeoTransform, strong: GeoTransform) -> GeoTransform:
    """Map from the teacher (weak) frame to the student (strong) frame."""
    return compose(strong, invert(weak))


@dataclass(frozen=True)
class AugmentationRanges:
    """Sampling ranges for one augmentation strength."""

    flip_prob: float = 0.0
    scale_range: tuple = (1.0, 1.0)
    rot_range: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must satisfy 0 < lo <= hi")
        if self.rot_range[0] > self.rot_range[1]:
            raise ValueError("rot_range must satisfy lo <= hi")
        object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        object.__setattr__(self, "rot_range", tuple(float(v) for v in self.rot_range))

    def sample(self, rng: np.random.Generator) -> GeoTransform:
        # always draw all three variates so streams stay aligned across configs
        flip = rng.random() < self.flip_prob
        scale = rng.uniform(*self.scale_range)
        rot = rng.uniform(*self.rot_range)
        return GeoTransform(flip_x=bool(flip), scale=float(scale), rot_z=float(rot))


STRONG_RANGES = AugmentationRanges(
    flip_prob=0.5, scale_range=(0.95, 1.05), rot_range=(-math.pi / 4, math.pi / 4)
)
WEAK_RANGES = AugmentationRanges()


def sample_strong(rng: np.random.Generator, ranges: AugmentationRanges = STRONG_RANGES) -> GeoTransform:
    return ranges.sample(rng)


def sample_weak(rng: np.random.Generator, ranges: AugmentationRanges = WEAK_RANGES) -> GeoTransform:
    return ranges.sample(rng)
