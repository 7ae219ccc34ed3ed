"""The toy two-stage detector and the teacher-student training loop."""

import numpy as np
import pytest

from pseudolabel3d.augmentation import STRONG_RANGES, GeoTransform
from pseudolabel3d.ema import MomentumWarmup
from pseudolabel3d.simulation import derive_rng
from pseudolabel3d.ssl_loop import DivergenceError, SSLConfig, evaluate_detector, run_ssl
from pseudolabel3d.toy_detector import Adam, ToyDetector, ToyDetectorConfig, ToyWorld, best_iou, make_view

SMALL = SSLConfig(n_unlabeled=20, n_test=5, pretrain_iters=30, ssl_iters=30, eval_every=10,
                  warmup=MomentumWarmup(0.99, 0.999, 20))


def pretrained(seed):
    return run_ssl(seed, SSLConfig(pretrain_iters=60, ssl_iters=0, n_unlabeled=0, n_test=1)).theta


def setup_view(seed, transform=None):
    det = ToyDetector()
    world = ToyWorld(seed)
    rng = derive_rng(seed, 99)
    theta = pretrained(seed)
    view = make_view(world, world.scene(0), transform or STRONG_RANGES.sample(rng), rng)
    fwd = det.forward(theta, world, view, rng)
    return det, world, theta, view, fwd


def total_loss(det, theta, view, fwd, tg):
    return sum(det.loss_and_grad(theta, view, fwd, tg)[0])


class TestDetector:
    def test_parameter_budget(self):
        cfg = ToyDetectorConfig()
        assert ToyDetector(cfg).layout.size == cfg.n_params == 528
        assert cfg.n_params <= 1000

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_whole_loss_gradient_matches_finite_differences(self, seed):
        det, _, theta, view, fwd = setup_view(seed)
        tg = det.targets(view, fwd, view.gt_boxes, view.gt_classes, iou_targets=True)
        assert len(tg.rpn_idx) and len(tg.rcnn_idx)
        _, grad = det.loss_and_grad(theta, view, fwd, tg)
        h = 1e-5
        fd = np.zeros_like(theta)
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd[i] = (total_loss(det, tp, view, fwd, tg) - total_loss(det, tm, view, fwd, tg)) / (2 * h)
        rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
        assert rel < 1e-5

    def test_forward_shapes(self):
        det, _, _, view, fwd = setup_view(3)
        n = len(view.anchors)
        assert fwd.logits.shape == (n,)
        assert fwd.proposals.shape == fwd.boxes.shape == (n, 7)
        out = det.outputs(fwd, view)
        assert len(out) == n
        assert np.all((out.cls_scores > 0) & (out.cls_scores < 1))

    def test_targets_mark_object_anchors_positive(self):
        det, _, _, view, fwd = setup_view(4, GeoTransform.identity())
        tg = det.targets(view, fwd, view.gt_boxes, view.gt_classes, iou_targets=False)
        n_obj = len(view.gt_boxes) * det.cfg.anchors_per_object
        assert tg.cls[:n_obj].sum() > 0
        assert tg.cls[n_obj:].mean() < 0.2
        assert tg.iou is None
        assert np.all(tg.valid[tg.cls == 1])

    def test_no_labels_means_all_negative(self):
        det, _, _, view, fwd = setup_view(5)
        tg = det.targets(view, fwd, np.zeros((0, 7)), np.zeros(0, dtype=int), iou_targets=False)
        assert tg.cls.sum() == 0 and tg.valid.all()
        assert len(tg.rpn_idx) == 0 and len(tg.rcnn_idx) == 0

    def test_view_moves_anchors_and_objects_together(self):
        world = ToyWorld(6)
        scene = world.scene(1)
        t = GeoTransform(flip_x=True, scale=1.03, rot_z=0.5)
        view = make_view(world, scene, t, derive_rng(6, 1))
        base = make_view(world, scene, GeoTransform.identity(), derive_rng(6, 1))
        np.testing.assert_allclose(best_iou(view, view.anchors), best_iou(base, base.anchors), atol=1e-9)
        np.testing.assert_allclose(view.feats[:, -1], 1.0)

    def test_scenes_cached_and_deterministic(self):
        a, b = ToyWorld(7), ToyWorld(7)
        assert a.scene(3) is a.scene(3)
        np.testing.assert_array_equal(a.scene(3).anchors, b.scene(3).anchors)

    def test_adam_moves_against_gradient(self):
        opt = Adam(3, lr=0.1)
        theta = opt.step(np.zeros(3), np.array([1.0, -2.0, 0.0]))
        np.testing.assert_allclose(theta, [-0.1, 0.1, 0.0], atol=1e-6)

    @pytest.mark.parametrize("kwargs", [{"feature_dim": 0}, {"neg_iou": 0.6, "pos_iou": 0.5}, {"feature_noise": -1}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            ToyDetectorConfig(**kwargs)


class TestLoop:
    def test_deterministic(self):
        a, b = run_ssl(0, SMALL), run_ssl(0, SMALL)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert a.teacher_f1 == b.teacher_f1 and a.student_f1 == b.student_f1

    def test_logs_every_evaluation(self):
        r = run_ssl(1, SMALL)
        assert r.eval_iters == [10, 20, 30]
        assert len(r.pseudo_per_iter) == SMALL.ssl_iters
        assert 0.0 <= r.final.f1 <= 1.0 and r.final.f1 == r.teacher_f1[-1]

    def test_zero_weight_ignores_unlabeled_data(self):
        base = run_ssl(2, SSLConfig(**{**SMALL.__dict__, "lambda_u": 0.0}))
        tiny = run_ssl(2, SSLConfig(**{**SMALL.__dict__, "lambda_u": 1e-12}))
        assert base.pseudo_per_iter == []
        np.testing.assert_allclose(base.theta, tiny.theta, atol=1e-6)
        np.testing.assert_allclose(base.teacher_f1, tiny.teacher_f1, atol=1e-6)

    def test_teacher_is_average_of_student(self):
        r = run_ssl(3, SMALL)
        assert not np.array_equal(r.theta, r.teacher_theta)
        assert np.all(np.isfinite(r.teacher_theta))

    def test_divergence_reports_iteration(self):
        cfg = SSLConfig(**{**SMALL.__dict__, "lr": 1e300})
        with pytest.raises(DivergenceError) as exc:
            run_ssl(0, cfg)
        assert exc.value.stage == "pre-training"
        assert exc.value.iteration >= 0

    def test_evaluate_perfect_detector_is_not_required(self):
        det = ToyDetector()
        world = ToyWorld(0)
        score = evaluate_detector(det, world, det.init_params(derive_rng(0, 1)), SMALL)
        assert 0.0 <= score.f1 <= 1.0

    @pytest.mark.parametrize("kwargs", [{"n_labeled": 0}, {"ssl_iters": -1}, {"lambda_u": -1.0}, {"eval_every": 0}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            SSLConfig(**kwargs)
