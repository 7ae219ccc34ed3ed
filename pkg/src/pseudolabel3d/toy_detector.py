"""A tiny two-stage linear detector over synthetic features.

Each scene carries a fixed set of anchors: noisy copies of every object plus
background anchors scattered over the scene.  A *view* of a scene applies a
geometric transform to anchors and objects and renders features for any set
of boxes.  The feature of a box is a fixed random linear mixing of its latent
description (residual to the best same-class object, 3D IoU with it and a
constant) plus fresh Gaussian noise per rendering.

The detector has four linear heads over ``[features, 1]``:

* ``cls``  - objectness logit of an anchor (first stage),
* ``rpn``  - 7 residuals refining the anchor into a proposal,
* ``rcnn`` - 7 residuals refining the proposal (second stage, rendered anew),
* ``iou``  - logit of the proposal's 3D IoU (second stage).

The second stage sees the proposal as a constant, so gradients never flow
from second-stage losses into the first-stage heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .augmentation import GeoTransform, apply_boxes
from .geometry import BOX_DIM, bev_iou_matrix, decode_residuals, encode_residuals, iou3d_matrix
from .simulation import SceneSpec, derive_rng, gen_scene
from .structures import CLASS_NAMES, GroundTruth, ProposalSet

WORLD_STREAM = 11
ANCHOR_STREAM = 12

LATENT_DIM = BOX_DIM + 2  # residual, IoU, constant


@dataclass(frozen=True)
class ToyDetectorConfig:
    feature_dim: int = 32
    anchors_per_object: int = 4
    anchor_noise: float = 0.12
    background_anchors: int = 12
    feature_noise: float = 0.05  # fresh per rendering
    nuisance_dim: int = 32
    nuisance_scale: float = 0.2  # persistent per-anchor appearance component
    pos_iou: float = 0.5  # BEV IoU with a label that makes an anchor positive
    neg_iou: float = 0.3  # below this an anchor is a negative; in between it is ignored
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    reg_beta: float = 1.0

    def __post_init__(self):
        if self.nuisance_dim < 0 or self.nuisance_scale < 0 or self.feature_noise < 0:
            raise ValueError("nuisance_dim, nuisance_scale and feature_noise must be non-negative")
        if self.feature_dim < 1 or self.anchors_per_object < 1 or self.background_anchors < 0:
            raise ValueError("feature_dim and anchors_per_object must be >= 1, background_anchors >= 0")
        if not 0.0 <= self.neg_iou <= self.pos_iou <= 1.0:
            raise ValueError("need 0 <= neg_iou <= pos_iou <= 1")

    @property
    def n_in(self) -> int:
        return self.feature_dim + 1

    @property
    def n_params(self) -> int:
        return self.n_in * (2 + 2 * BOX_DIM)


class ParamLayout:
    """Slices of the flat parameter vector."""

    def __init__(self, cfg: ToyDetectorConfig):
        k = cfg.n_in
        self.cls = slice(0, k)
        self.rpn = slice(k, k + BOX_DIM * k)
        self.rcnn = slice(self.rpn.stop, self.rpn.stop + BOX_DIM * k)
        self.iou = slice(self.rcnn.stop, self.rcnn.stop + k)
        self.size = self.iou.stop
        self.k = k

    def unpack(self, theta: np.ndarray):
        k = self.k
        return (theta[self.cls], theta[self.rpn].reshape(BOX_DIM, k),
                theta[self.rcnn].reshape(BOX_DIM, k), theta[self.iou])


@dataclass
class ToyScene:
    gt: GroundTruth
    anchors: np.ndarray
    anchor_classes: np.ndarray
    nuisance: np.ndarray  # [n_anchors, nuisance_dim]


class ToyWorld:
    """Scenes, anchors and the feature renderer for one experiment seed."""

    def __init__(self, seed: int, cfg: ToyDetectorConfig = ToyDetectorConfig(), scene_spec: SceneSpec | None = None):
        self.seed = int(seed)
        self.cfg = cfg
        self.scene_spec = scene_spec or SceneSpec(seed=seed)
        rng = derive_rng(seed, WORLD_STREAM)
        scale = 1.0 / np.sqrt(LATENT_DIM)
        self.mix_rpn = rng.normal(0.0, scale, (cfg.feature_dim, LATENT_DIM))
        self.mix_rcnn = rng.normal(0.0, scale, (cfg.feature_dim, LATENT_DIM))
        nscale = 1.0 / np.sqrt(max(cfg.nuisance_dim, 1))
        self.nuis_rpn = rng.normal(0.0, nscale, (cfg.feature_dim, cfg.nuisance_dim))
        self.nuis_rcnn = rng.normal(0.0, nscale, (cfg.feature_dim, cfg.nuisance_dim))
        self._cache = {}

    def scene(self, index: int) -> ToyScene:
        if index not in self._cache:
            gt = gen_scene(self.scene_spec, index)
            rng = derive_rng(self.seed, ANCHOR_STREAM, index)
            cfg = self.cfg
            src = np.repeat(np.arange(len(gt)), cfg.anchors_per_object)
            base = gt.boxes[src]
            z = rng.standard_normal((len(src), BOX_DIM))
            res = z * cfg.anchor_noise
            res[:, 2] = 0.0
            anchors = decode_residuals(base, res) if len(src) else np.zeros((0, BOX_DIM))
            classes = gt.class_ids[src]
            nb = cfg.background_anchors
            if nb:
                spec = self.scene_spec
                bcls = rng.integers(0, len(CLASS_NAMES), nb)
                dims = np.array([spec.dims[int(c)] for c in bcls])
                bg = np.column_stack([
                    rng.uniform(*spec.x_range, nb), rng.uniform(*spec.y_range, nb),
                    spec.ground_z + 0.5 * dims[:, 2], dims, rng.uniform(-np.pi, np.pi, nb),
                ])
                anchors = np.concatenate([anchors, bg])
                classes = np.concatenate([classes, bcls])
            nuisance = rng.standard_normal((len(anchors), cfg.nuisance_dim))
            self._cache[index] = ToyScene(gt, anchors, classes.astype(np.int64), nuisance)
        return self._cache[index]

    def latent(self, boxes: np.ndarray, classes: np.ndarray, gt_boxes: np.ndarray, gt_classes: np.ndarray) -> np.ndarray:
        """Latent description ``[residual(7), IoU, 1]`` of each box against the objects."""
        out = np.zeros((len(boxes), LATENT_DIM))
        out[:, -1] = 1.0
        for cid in np.unique(classes):
            bm = np.flatnonzero(classes == cid)
            gm = np.flatnonzero(gt_classes == cid)
            if len(gm) == 0:
                continue
            bev = bev_iou_matrix(boxes[bm], gt_boxes[gm])
            best = bev.argmax(axis=1)
            hit = bev[np.arange(len(bm)), best] > 0.0
            if not hit.any():
                continue
            rows, match = bm[hit], gm[best[hit]]
            out[rows, :BOX_DIM] = np.clip(encode_residuals(boxes[rows], gt_boxes[match]), -1.0, 1.0)
            out[rows, BOX_DIM] = np.diag(iou3d_matrix(boxes[rows], gt_boxes[match]))
        return out

    def render(self, stage: int, boxes, classes, nuisance, gt_boxes, gt_classes, rng: np.random.Generator) -> np.ndarray:
        """Noisy features with a trailing constant column, shape ``[N, feature_dim + 1]``.

        ``stage`` 0 renders first-stage (anchor) features, 1 second-stage ones.
        """
        mix, nuis = (self.mix_rpn, self.nuis_rpn) if stage == 0 else (self.mix_rcnn, self.nuis_rcnn)
        lat = self.latent(boxes, classes, gt_boxes, gt_classes)
        feats = lat @ mix.T + self.cfg.nuisance_scale * (nuisance @ nuis.T)
        feats += self.cfg.feature_noise * rng.standard_normal((len(boxes), self.cfg.feature_dim))
        return np.hstack([feats, np.ones((len(boxes), 1))])


@dataclass
class View:
    """One rendering of a scene under a geometric transform."""

    transform: GeoTransform
    anchors: np.ndarray
    classes: np.ndarray
    gt_boxes: np.ndarray
    gt_classes: np.ndarray
    nuisance: np.ndarray
    feats: np.ndarray


def make_view(world: ToyWorld, scene: ToyScene, transform: GeoTransform, rng: np.random.Generator) -> View:
    anchors = apply_boxes(transform, scene.anchors)
    gt_boxes = apply_boxes(transform, scene.gt.boxes)
    feats = world.render(0, anchors, scene.anchor_classes, scene.nuisance, gt_boxes, scene.gt.class_ids, rng)
    return View(transform, anchors, scene.anchor_classes, gt_boxes, scene.gt.class_ids, scene.nuisance, feats)


@dataclass
class Forward:
    """Detector outputs on a view; ``feats2`` and ``proposals`` are constants for training."""

    logits: np.ndarray
    rpn_res: np.ndarray
    proposals: np.ndarray
    feats2: np.ndarray
    rcnn_res: np.ndarray
    iou_logits: np.ndarray
    boxes: np.ndarray

    @property
    def cls_scores(self) -> np.ndarray:
        return losses.sigmoid(self.logits)

    @property
    def iou_scores(self) -> np.ndarray:
        return losses.sigmoid(self.iou_logits)


class ToyDetector:
    def __init__(self, cfg: ToyDetectorConfig = ToyDetectorConfig()):
        self.cfg = cfg
        self.layout = ParamLayout(cfg)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        theta = rng.normal(0.0, 0.01, self.layout.size)
        theta[self.layout.cls.stop - 1] = -2.0  # low prior objectness
        return theta

    def forward(self, theta: np.ndarray, world: ToyWorld, view: View, rng: np.random.Generator) -> Forward:
        w_cls, w_rpn, w_rcnn, w_iou = self.layout.unpack(theta)
        logits = view.feats @ w_cls
        rpn_res = view.feats @ w_rpn.T
        proposals = decode_residuals(view.anchors, rpn_res) if len(view.anchors) else view.anchors.copy()
        feats2 = world.render(1, proposals, view.classes, view.nuisance, view.gt_boxes, view.gt_classes, rng)
        rcnn_res = feats2 @ w_rcnn.T
        boxes = decode_residuals(proposals, rcnn_res) if len(proposals) else proposals.copy()
        return Forward(logits, rpn_res, proposals, feats2, rcnn_res, feats2 @ w_iou, boxes)

    def outputs(self, fwd: Forward, view: View) -> ProposalSet:
        return ProposalSet(fwd.boxes, view.classes, fwd.cls_scores, fwd.iou_scores)

    def targets(self, view: View, fwd: Forward, label_boxes: np.ndarray, label_classes: np.ndarray,
                iou_targets: bool) -> "Targets":
        """Assign labels to anchors and proposals of a view."""
        cfg = self.cfg
        n = len(view.anchors)
        cls_t = np.zeros(n)
        valid = np.ones(n, dtype=bool)
        rpn_idx, rpn_t, rcnn_idx, rcnn_t = [], [], [], []
        for cid in np.unique(view.classes):
            am = np.flatnonzero(view.classes == cid)
            lm = np.flatnonzero(label_classes == cid)
            if len(lm) == 0:
                continue
            ious = bev_iou_matrix(view.anchors[am], label_boxes[lm])
            best = ious.argmax(axis=1)
            top = ious[np.arange(len(am)), best]
            pos = top >= cfg.pos_iou
            cls_t[am[pos]] = 1.0
            valid[am[(top >= cfg.neg_iou) & ~pos]] = False
            if pos.any():
                rows = am[pos]
                match = label_boxes[lm[best[pos]]]
                rpn_idx.append(rows)
                rpn_t.append(encode_residuals(view.anchors[rows], match))
                pious = bev_iou_matrix(fwd.proposals[rows], label_boxes[lm])
                pbest = pious.argmax(axis=1)
                ok = pious[np.arange(len(rows)), pbest] >= cfg.pos_iou
                if ok.any():
                    rcnn_idx.append(rows[ok])
                    rcnn_t.append(encode_residuals(fwd.proposals[rows[ok]], label_boxes[lm[pbest[ok]]]))
        cat_i = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.intp)  # noqa: E731
        cat_r = lambda xs: np.concatenate(xs) if xs else np.zeros((0, BOX_DIM))  # noqa: E731
        iou_t = best_iou(view, fwd.proposals) if iou_targets else None
        return Targets(cls_t, valid, cat_i(rpn_idx), cat_r(rpn_t), cat_i(rcnn_idx), cat_r(rcnn_t), iou_t)

    def loss_and_grad(self, theta: np.ndarray, view: View, fwd: Forward, tg: "Targets"):
        """Loss breakdown and gradient with the second-stage inputs held fixed.

        ``fwd`` supplies the proposals and second-stage features; the heads
        are re-evaluated at ``theta`` so the result is exact for any ``theta``.
        """
        cfg = self.cfg
        L = self.layout
        w_cls, w_rpn, w_rcnn, w_iou = L.unpack(theta)
        grad = np.zeros_like(theta)
        x1, x2 = view.feats, fwd.feats2

        v = np.flatnonzero(tg.valid)
        c_val, g_logit = losses.cls_loss(x1[v] @ w_cls, tg.cls[v], cfg.focal_gamma, cfg.focal_alpha)
        grad[L.cls] = g_logit @ x1[v]

        r_val = 0.0
        if len(tg.rpn_idx):
            xr = x1[tg.rpn_idx]
            r_val, g = losses.reg_loss(xr @ w_rpn.T, tg.rpn_res, cfg.reg_beta)
            grad[L.rpn] = (g.T @ xr).ravel()

        r2_val = 0.0
        if len(tg.rcnn_idx):
            xr = x2[tg.rcnn_idx]
            r2_val, g = losses.reg_loss(xr @ w_rcnn.T, tg.rcnn_res, cfg.reg_beta)
            grad[L.rcnn] = (g.T @ xr).ravel()

        i_val = 0.0
        if tg.iou is not None and len(x2):
            z = x2 @ w_iou
            p = losses.sigmoid(z)
            i_val, g_p = losses.iou_est_loss(p, tg.iou)
            # chain through the sigmoid: dp/dz = p (1 - p)
            grad[L.iou] = (g_p * p * (1.0 - p)) @ x2
        return (c_val, r_val, i_val, r2_val), grad


def best_iou(view: View, boxes: np.ndarray) -> np.ndarray:
    """Best same-class 3D IoU of each box with the view's objects."""
    out = np.zeros(len(boxes))
    for cid in np.unique(view.classes):
        bm = view.classes == cid
        gm = view.gt_classes == cid
        if gm.any():
            out[bm] = iou3d_matrix(boxes[bm], view.gt_boxes[gm]).max(axis=1)
    return out


@dataclass
class Targets:
    cls: np.ndarray
    valid: np.ndarray
    rpn_idx: np.ndarray
    rpn_res: np.ndarray
    rcnn_idx: np.ndarray
    rcnn_res: np.ndarray
    iou: np.ndarray | None


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, size: int, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
