"""Synthetic scenes and a stochastic, miscalibrated teacher.

Scenes are drawn inside the usual KITTI LiDAR range with class-specific box
sizes.  The teacher turns every ground-truth object into several noisy
duplicate proposals and sprinkles clutter proposals over the scene.  Scores
follow a linear-mix-plus-clamp calibration model::

    cls_score = clip(rho_cls * true_iou + (1 - rho_cls) * u, 0, 1),  u ~ U(0, 1)

and likewise for ``iou_score`` with ``rho_iou``.  Low ``rho_cls`` reproduces
the weak link between classification confidence and localization quality.

Randomness is counter-based: scene ``i`` and the proposals for
``(scene i, iteration t)`` each get their own generator derived from the seed,
so any of them can be regenerated in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .geometry import BOX_DIM, bev_iou_matrix, iou3d_matrix, normalize_angle
from .structures import CAR, CLASS_NAMES, CYCLIST, PEDESTRIAN, GroundTruth, ProposalSet, per_class

SCENE_STREAM = 1
PROPOSAL_STREAM = 2

# (length, width, height) in meters
CANONICAL_DIMS = {
    CAR: (3.9, 1.6, 1.56),
    PEDESTRIAN: (0.8, 0.6, 1.73),
    CYCLIST: (1.76, 0.6, 1.73),
}


class SceneGenerationError(RuntimeError):
    """Objects could not be placed within the retry budget."""


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; keys must be non-negative ints."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


@dataclass(frozen=True)
class SceneSpec:
    class_counts: Mapping = field(default_factory=lambda: {CAR: 6.0, PEDESTRIAN: 2.5, CYCLIST: 1.5})
    max_per_class: int = 15
    x_range: tuple = (0.0, 70.4)
    y_range: tuple = (-40.0, 40.0)
    ground_z: float = -1.73
    dims: Mapping = field(default_factory=lambda: dict(CANONICAL_DIMS))
    dim_jitter: float = 0.05
    iou_cap: float = 0.05
    max_retries: int = 200
    seed: int = 0

    def __post_init__(self):
        counts = per_class(self.class_counts, {c: 0.0 for c in range(len(CLASS_NAMES))})
        if any(v < 0 for v in counts.values()):
            raise ValueError("class counts must be non-negative")
        if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]):
            raise ValueError("scene extents must be positive")
        object.__setattr__(self, "class_counts", counts)
        dims = dict(CANONICAL_DIMS)
        dims.update({_cid(k): tuple(float(x) for x in v) for k, v in dict(self.dims).items()})
        object.__setattr__(self, "dims", dims)


def _cid(k) -> int:
    from .structures import class_id

    return class_id(k)


def gen_scene(spec: SceneSpec, index: int) -> GroundTruth:
    """Ground truth for scene ``index``; deterministic in ``(spec.seed, index)``."""
    rng = derive_rng(spec.seed, SCENE_STREAM, index)
    counts = {c: min(int(rng.poisson(lam)), spec.max_per_class) if lam > 0 else 0
              for c, lam in sorted(spec.class_counts.items())}
    boxes, classes = [], []
    for cid, n in counts.items():
        l0, w0, h0 = spec.dims[cid]
        for _ in range(n):
            for _attempt in range(spec.max_retries):
                jit = np.exp(rng.normal(0.0, spec.dim_jitter, 3))
                l, w, h = l0 * jit[0], w0 * jit[1], h0 * jit[2]
                cand = np.array([
                    rng.uniform(*spec.x_range),
                    rng.uniform(*spec.y_range),
                    spec.ground_z + 0.5 * h,
                    l, w, h,
                    rng.uniform(-math.pi, math.pi),
                ])
                if not boxes or bev_iou_matrix(cand[None], np.array(boxes)).max() <= spec.iou_cap:
                    boxes.append(cand)
                    classes.append(cid)
                    break
            else:
                raise SceneGenerationError(
                    f"scene {index}: could not place a {CLASS_NAMES[cid]} after {spec.max_retries} attempts"
                )
    arr = np.array(boxes) if boxes else np.zeros((0, BOX_DIM))
    return GroundTruth(arr, np.array(classes, dtype=np.int64), index=index)


@dataclass(frozen=True)
class QualityCurve:
    """Teacher localization noise ``sigma0 * max(1 - t / t_max, 0) + sigma_inf``."""

    sigma0: float = 0.25
    sigma_inf: float = 0.05
    t_max: int = 2000

    def __post_init__(self):
        if self.sigma0 < 0 or self.sigma_inf < 0:
            raise ValueError("noise scales must be non-negative")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")

    def __call__(self, t: int) -> float:
        return self.sigma0 * max(1.0 - t / self.t_max, 0.0) + self.sigma_inf


@dataclass(frozen=True)
class TeacherModel:
    """Stochastic teacher.

    Localization noise is relative to object size: center offsets have
    standard deviation ``sigma * (l, w, h)`` along the box axes, sizes are
    scaled by ``exp(N(0, sigma))`` and yaw is perturbed by
    ``N(0, sigma * yaw_noise)`` radians.  Each object draws a persistent
    difficulty multiplier ``exp(N(0, hardness_spread))`` on its noise.
    """

    quality_curve: Callable = field(default_factory=QualityCurve)
    rho_cls: float = 0.3
    rho_iou: float = 0.7
    duplicates_per_gt: tuple = (2, 6)  # inclusive integer range
    clutter_rate: float = 4.0  # Poisson mean of false proposals per scene
    yaw_noise: float = 1.0
    hardness_spread: float = 0.4
    iou_kind: str = "3d"
    seed: int = 0

    def __post_init__(self):
        for name in ("rho_cls", "rho_iou"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.duplicates_per_gt
        if not 0 <= lo <= hi:
            raise ValueError("duplicates_per_gt must be an inclusive range 0 <= lo <= hi")
        if self.clutter_rate < 0 or self.yaw_noise < 0 or self.hardness_spread < 0:
            raise ValueError("clutter_rate, yaw_noise and hardness_spread must be non-negative")
        object.__setattr__(self, "duplicates_per_gt", (int(lo), int(hi)))

    def noise_at(self, t: int) -> float:
        sigma = float(self.quality_curve(t))
        if sigma < 0:
            raise ValueError("quality curve returned a negative noise scale")
        return sigma


@dataclass
class TeacherSample:
    proposals: ProposalSet
    source_gt: np.ndarray  # index of the spawning GT object, -1 for clutter
    true_iou: np.ndarray  # best IoU with a same-class GT object
    sigma: float


def simulate_teacher(scene: GroundTruth, teacher: TeacherModel, t: int, rng: np.random.Generator | None = None,
                     sigma: float | None = None, spec: SceneSpec | None = None) -> TeacherSample:
    """Teacher proposals plus their provenance and true IoU.

    ``sigma`` overrides the quality curve (used by closed-loop simulations).
    Random draws do not depend on ``sigma``, so runs that differ only in the
    noise level share their random numbers.
    """
    if rng is None:
        rng = derive_rng(teacher.seed, PROPOSAL_STREAM, scene.index, t)
    if sigma is None:
        sigma = teacher.noise_at(t)
    spec = spec or SceneSpec()
    n_gt = len(scene)
    lo, hi = teacher.duplicates_per_gt
    hardness = np.exp(rng.normal(0.0, teacher.hardness_spread, n_gt)) if n_gt else np.zeros(0)
    n_dup = rng.integers(lo, hi + 1, n_gt) if n_gt else np.zeros(0, dtype=np.int64)
    source = np.repeat(np.arange(n_gt), n_dup)
    z = rng.standard_normal((len(source), 7))
    base = scene.boxes[source]
    scale = (sigma * hardness[source])[:, None] if len(source) else np.zeros((0, 1))
    boxes = base.copy()
    if len(source):
        c, s = np.cos(base[:, 6]), np.sin(base[:, 6])
        off_l = z[:, 0] * scale[:, 0] * base[:, 3]
        off_w = z[:, 1] * scale[:, 0] * base[:, 4]
        boxes[:, 0] += c * off_l - s * off_w
        boxes[:, 1] += s * off_l + c * off_w
        boxes[:, 2] += z[:, 2] * scale[:, 0] * base[:, 5]
        boxes[:, 3:6] *= np.exp(z[:, 3:6] * scale)
        boxes[:, 6] = normalize_angle(base[:, 6] + z[:, 6] * scale[:, 0] * teacher.yaw_noise)
    classes = scene.class_ids[source]

    n_clutter = int(rng.poisson(teacher.clutter_rate)) if teacher.clutter_rate > 0 else 0
    if n_clutter:
        ccls = rng.integers(0, len(CLASS_NAMES), n_clutter)
        dims = np.array([spec.dims[int(c)] for c in ccls]) * np.exp(rng.normal(0.0, spec.dim_jitter, (n_clutter, 3)))
        clutter = np.column_stack([
            rng.uniform(*spec.x_range, n_clutter),
            rng.uniform(*spec.y_range, n_clutter),
            spec.ground_z + 0.5 * dims[:, 2],
            dims,
            rng.uniform(-math.pi, math.pi, n_clutter),
        ])
        boxes = np.concatenate([boxes, clutter])
        classes = np.concatenate([classes, ccls])
        source = np.concatenate([source, np.full(n_clutter, -1)])

    n = len(boxes)
    u_cls = rng.random(n)
    u_iou = rng.random(n)
    true_iou = np.zeros(n)
    iou_fn = iou3d_matrix if teacher.iou_kind == "3d" else bev_iou_matrix
    for cid in np.unique(classes):
        pm = classes == cid
        gm = scene.class_ids == cid
        if gm.any():
            true_iou[pm] = iou_fn(boxes[pm], scene.boxes[gm]).max(axis=1)
    cls_scores = np.clip(teacher.rho_cls * true_iou + (1.0 - teacher.rho_cls) * u_cls, 0.0, 1.0)
    iou_scores = np.clip(teacher.rho_iou * true_iou + (1.0 - teacher.rho_iou) * u_iou, 0.0, 1.0)
    return TeacherSample(ProposalSet(boxes, classes, cls_scores, iou_scores), source, true_iou, sigma)


def gen_proposals(scene: GroundTruth, teacher: TeacherModel, t: int, rng: np.random.Generator | None = None,
                  sigma: float | None = None, spec: SceneSpec | None = None) -> ProposalSet:
    """Teacher proposals for ``scene`` at iteration ``t``."""
    return simulate_teacher(scene, teacher, t, rng=rng, sigma=sigma, spec=spec).proposals
