"""Pseudo-label generation and evaluation tools for semi-supervised 3D detection."""

from .augmentation import GeoTransform, alignment_transform, apply, apply_boxes, compose, invert
from .ema import EMATeacher, MomentumWarmup, ema_update, momentum_at
from .evaluation import EvalConfig, EvalReport, ap_from_matches, evaluate, fp_fn_sweep, greedy_match
from .geometry import Box3D, InvalidBoxError, bev_iou_matrix, iou3d_matrix, iou_3d, iou_bev
from .kernels import BACKEND
from .losses import LossWeights, cls_loss, combined_total, iou_est_loss, reg_loss, supervised_total, unsupervised_total
from .pseudo_labels import LabelQuality, PseudoLabelSet, generate_dense, generate_sparse, label_quality
from .schedule import ThresholdSchedule, value_at
from .simulation import QualityCurve, SceneSpec, TeacherModel, gen_proposals, gen_scene
from .structures import CLASS_NAMES, GroundTruth, Proposal, ProposalSet
from .suppression import nms_bev

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Box3D",
    "CLASS_NAMES",
    "EMATeacher",
    "EvalConfig",
    "EvalReport",
    "GeoTransform",
    "GroundTruth",
    "InvalidBoxError",
    "LabelQuality",
    "LossWeights",
    "MomentumWarmup",
    "Proposal",
    "ProposalSet",
    "PseudoLabelSet",
    "QualityCurve",
    "SceneSpec",
    "TeacherModel",
    "ThresholdSchedule",
    "alignment_transform",
    "ap_from_matches",
    "apply",
    "apply_boxes",
    "bev_iou_matrix",
    "cls_loss",
    "combined_total",
    "compose",
    "ema_update",
    "evaluate",
    "fp_fn_sweep",
    "gen_proposals",
    "gen_scene",
    "generate_dense",
    "generate_sparse",
    "greedy_match",
    "invert",
    "iou3d_matrix",
    "iou_3d",
    "iou_bev",
    "iou_est_loss",
    "label_quality",
    "momentum_at",
    "nms_bev",
    "reg_loss",
    "supervised_total",
    "unsupervised_total",
    "value_at",
]
