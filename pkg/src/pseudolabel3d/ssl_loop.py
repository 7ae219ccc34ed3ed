"""Teacher-student self-training of the toy detector.

Pre-training fits the detector on a handful of labeled scenes.  The
self-training stage then alternates one labeled and one unlabeled scene per
iteration: the EMA teacher labels a weakly augmented view of the unlabeled
scene with dense, threshold-filtered pseudo-labels, the labels are mapped into
the student's strongly augmented view, and the student minimizes
``L_labeled + lambda_u * L_unlabeled``.  With ``lambda_u = 0`` the same loop
is the labeled-only baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .augmentation import (
    STRONG_RANGES,
    WEAK_RANGES,
    AugmentationRanges,
    GeoTransform,
    alignment_transform,
    apply_boxes,
)
from .ema import EMATeacher, MomentumWarmup
from .evaluation import EvalConfig, evaluate, fp_fn_sweep
from .pseudo_labels import generate_dense, per_class_nms
from .schedule import ThresholdSchedule
from .simulation import derive_rng
from .toy_detector import Adam, ToyDetector, ToyDetectorConfig, ToyWorld, make_view

PRETRAIN_STREAM = 21
LABELED_STREAM = 22
UNLABELED_STREAM = 23
EVAL_STREAM = 24
INIT_STREAM = 25

_IDENTITY = GeoTransform.identity()
EVAL_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))


class DivergenceError(RuntimeError):
    """Non-finite loss or gradient; ``iteration`` says where it happened."""

    def __init__(self, stage: str, iteration: int):
        super().__init__(f"non-finite loss during {stage} at iteration {iteration}")
        self.stage = stage
        self.iteration = iteration


@dataclass(frozen=True)
class SSLConfig:
    detector: ToyDetectorConfig = field(default_factory=ToyDetectorConfig)
    n_labeled: int = 2
    n_unlabeled: int = 200
    n_test: int = 30
    pretrain_iters: int = 200
    ssl_iters: int = 1000
    lr: float = 0.01
    lambda_u: float = 1.0
    labeled_batch: int = 1
    unlabeled_batch: int = 1
    schedule: ThresholdSchedule = field(default_factory=lambda: ThresholdSchedule(0.6, 0.4, 150, 0.1))
    warmup: MomentumWarmup = field(default_factory=lambda: MomentumWarmup(0.99, 0.999, 500))
    strong: AugmentationRanges = STRONG_RANGES
    weak: AugmentationRanges = WEAK_RANGES
    nms_iou: float = 0.1
    eval_every: int = 100

    def __post_init__(self):
        if self.n_labeled < 1 or self.n_test < 1:
            raise ValueError("need at least one labeled and one test scene")
        if self.ssl_iters >= 1 and self.lambda_u > 0 and self.n_unlabeled < 1:
            raise ValueError("self-training needs unlabeled scenes")
        if self.pretrain_iters < 0 or self.ssl_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.labeled_batch < 1 or self.unlabeled_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if not self.lambda_u >= 0:
            raise ValueError("lambda_u must be non-negative")

    @property
    def labeled_indices(self) -> range:
        return range(0, self.n_labeled)

    @property
    def unlabeled_indices(self) -> range:
        return range(self.n_labeled, self.n_labeled + self.n_unlabeled)

    @property
    def test_indices(self) -> range:
        start = self.n_labeled + self.n_unlabeled
        return range(start, start + self.n_test)


@dataclass
class DetectionScore:
    f1: float
    threshold: float
    ap: float


@dataclass
class SSLResult:
    seed: int
    lambda_u: float
    eval_iters: list
    teacher_f1: list
    student_f1: list
    final: DetectionScore
    final_student: DetectionScore
    pseudo_per_iter: list  # number of pseudo-labels per self-training iteration
    theta: np.ndarray
    teacher_theta: np.ndarray


def _check(stage: str, it: int, values, grad) -> None:
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(grad))):
        raise DivergenceError(stage, it)


def _forward_value(value: float, fwd) -> float:
    """The loss is undefined once the forward pass produced non-finite boxes."""
    if np.all(np.isfinite(fwd.proposals)) and np.all(np.isfinite(fwd.boxes)):
        return value
    return float("nan")


def _supervised_step(det, world, theta, scene_index, rng, ranges):
    scene = world.scene(scene_index)
    view = make_view(world, scene, ranges.sample(rng), rng)
    fwd = det.forward(theta, world, view, rng)
    tg = det.targets(view, fwd, view.gt_boxes, view.gt_classes, iou_targets=True)
    parts, grad = det.loss_and_grad(theta, view, fwd, tg)
    parts = (parts[0], parts[1], parts[2], _forward_value(parts[3], fwd))
    return losses.supervised_total(*parts), grad


def _unsupervised_step(det, world, theta, teacher_theta, cfg, t, rng):
    """Student loss on one unlabeled scene against aligned teacher pseudo-labels."""
    uidx = cfg.unlabeled_indices[int(rng.integers(cfg.n_unlabeled))]
    scene = world.scene(uidx)
    weak = cfg.weak.sample(rng)
    strong = cfg.strong.sample(rng)
    tview = make_view(world, scene, weak, rng)
    tout = det.outputs(det.forward(teacher_theta, world, tview, rng), tview)
    pseudo = generate_dense(tout, cfg.schedule, t)
    label_boxes = apply_boxes(alignment_transform(weak, strong), pseudo.labels.boxes)
    sview = make_view(world, scene, strong, rng)
    fwd = det.forward(theta, world, sview, rng)
    tg = det.targets(sview, fwd, label_boxes, pseudo.labels.class_ids, iou_targets=False)
    (c, r, _, r2), grad = det.loss_and_grad(theta, sview, fwd, tg)
    r2 = _forward_value(r2, fwd)
    return losses.unsupervised_total(c, r, r2), grad, len(pseudo)


def _mean_breakdown(parts, supervised: bool) -> losses.LossBreakdown:
    n = len(parts)
    rpn_cls = sum(p.rpn_cls for p in parts) / n
    rpn_reg = sum(p.rpn_reg for p in parts) / n
    rcnn_reg = sum(p.rcnn_reg for p in parts) / n
    if supervised:
        return losses.supervised_total(rpn_cls, rpn_reg, sum(p.rcnn_iou for p in parts) / n, rcnn_reg)
    return losses.unsupervised_total(rpn_cls, rpn_reg, rcnn_reg)


def evaluate_detector(det: ToyDetector, world: ToyWorld, theta: np.ndarray, cfg: SSLConfig) -> DetectionScore:
    """Best pooled F1 over score thresholds, plus mean AP, on the test scenes."""
    preds, gts = [], []
    for idx in cfg.test_indices:
        rng = derive_rng(world.seed, EVAL_STREAM, idx)
        scene = world.scene(idx)
        view = make_view(world, scene, _IDENTITY, rng)
        out = det.outputs(det.forward(theta, world, view, rng), view)
        preds.append(out.subset(per_class_nms(out, cfg.nms_iou)))
        gts.append(scene.gt)
    ecfg = EvalConfig()
    rows = fp_fn_sweep(preds, gts, EVAL_THRESHOLDS, ecfg)
    best_f1, best_thr = 0.0, EVAL_THRESHOLDS[0]
    for row in rows:
        denom = 2 * row.tp + row.fp + row.fn
        f1 = 2 * row.tp / denom if denom else 0.0
        if f1 > best_f1:
            best_f1, best_thr = f1, row.threshold
    report = evaluate(preds, gts, ecfg)
    return DetectionScore(best_f1, best_thr, report.map)


def run_ssl(seed: int, cfg: SSLConfig = SSLConfig()) -> SSLResult:
    """Pre-train, then self-train; raises :class:`DivergenceError` on a non-finite loss."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_ssl(seed, cfg)


def _run_ssl(seed: int, cfg: SSLConfig) -> SSLResult:
    det = ToyDetector(cfg.detector)
    world = ToyWorld(seed, cfg.detector)
    theta = det.init_params(derive_rng(seed, INIT_STREAM))
    opt = Adam(theta.size, lr=cfg.lr)

    for it in range(cfg.pretrain_iters):
        rng = derive_rng(seed, PRETRAIN_STREAM, it)
        idx = cfg.labeled_indices[it % cfg.n_labeled]
        br, grad = _supervised_step(det, world, theta, idx, rng, cfg.strong)
        _check("pre-training", it, br.total, grad)
        theta = opt.step(theta, grad)

    teacher = EMATeacher(theta, cfg.warmup)
    eval_iters, t_f1, s_f1, n_pseudo = [], [], [], []
    final = final_student = None
    for t in range(cfg.ssl_iters):
        parts_l, grad = [], 0.0
        for j in range(cfg.labeled_batch):
            rng = derive_rng(seed, LABELED_STREAM, t, j)
            idx = cfg.labeled_indices[(t * cfg.labeled_batch + j) % cfg.n_labeled]
            br, g = _supervised_step(det, world, theta, idx, rng, cfg.strong)
            parts_l.append(br)
            grad = grad + g / cfg.labeled_batch
        br_l = _mean_breakdown(parts_l, supervised=True)
        total = br_l.total
        if cfg.lambda_u > 0:
            parts_u, grad_u = [], 0.0
            for j in range(cfg.unlabeled_batch):
                rng = derive_rng(seed, UNLABELED_STREAM, t, j)
                br, g, n = _unsupervised_step(det, world, theta, teacher.params, cfg, t, rng)
                parts_u.append(br)
                n_pseudo.append(n)
                grad_u = grad_u + g / cfg.unlabeled_batch
            br_u = _mean_breakdown(parts_u, supervised=False)
            total = losses.combined_total(br_l, br_u, losses.LossWeights(cfg.lambda_u))
            grad = grad + cfg.lambda_u * grad_u
        _check("self-training", t, total, grad)
        theta = opt.step(theta, grad)
        teacher.update(theta)
        if (t + 1) % cfg.eval_every == 0 or t + 1 == cfg.ssl_iters:
            final = evaluate_detector(det, world, teacher.params, cfg)
            final_student = evaluate_detector(det, world, theta, cfg)
            eval_iters.append(t + 1)
            t_f1.append(final.f1)
            s_f1.append(final_student.f1)

    if final is None:  # no self-training iterations
        final = evaluate_detector(det, world, teacher.params, cfg)
        final_student = evaluate_detector(det, world, theta, cfg)
    return SSLResult(seed, cfg.lambda_u, eval_iters, t_f1, s_f1, final, final_student, n_pseudo,
                     theta, teacher.params.copy())
