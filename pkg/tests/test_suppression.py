"""Greedy BEV NMS against an independent reference."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import reference_nms, shapely_iou_matrix
from pseudolabel3d.geometry import Box3D, bev_iou_matrix
from pseudolabel3d.structures import Proposal
from pseudolabel3d.suppression import nms_bev, nms_proposals, score_order


def clustered_boxes(rng, n):
    """Boxes scattered around a few centers so that many pairs overlap."""
    centers = rng.uniform(0, 20, size=(max(1, n // 5), 2))
    pick = rng.integers(len(centers), size=n)
    return np.column_stack([
        centers[pick, 0] + rng.normal(0, 0.8, n),
        centers[pick, 1] + rng.normal(0, 0.8, n),
        rng.normal(-1, 0.1, n),
        rng.uniform(1.5, 4.5, n),
        rng.uniform(0.6, 2.0, n),
        rng.uniform(1.0, 2.0, n),
        rng.uniform(-np.pi, np.pi, n),
    ])


@st.composite
def instances(draw):
    seed = draw(st.integers(0, 2**31))
    n = draw(st.integers(0, 60))
    thr = draw(st.sampled_from([0.0, 0.1, 0.3, 0.5, 0.7, 1.0]))
    rng = np.random.default_rng(seed)
    boxes = clustered_boxes(rng, n)
    scores = np.round(rng.random(n), 1)  # coarse scores force ties
    return boxes, scores, thr


class TestExamples:
    def test_empty_input(self):
        out = nms_bev(np.zeros((0, 7)), np.zeros(0), 0.5)
        assert out.shape == (0,)

    def test_single_proposal_kept(self):
        np.testing.assert_array_equal(nms_bev([[0, 0, 0, 1, 1, 1, 0]], [0.2], 0.5), [0])

    def test_two_boxes_iou_half(self):
        # Offsetting a 2x2 square by 2/3 gives inter 4/3 and union 8/3.
        boxes = np.array([[0, 0, 0, 2, 2, 1, 0], [2 / 3, 0, 0, 2, 2, 1, 0]])
        assert bev_iou_matrix(boxes[:1], boxes[1:])[0, 0] == pytest.approx(0.5)
        np.testing.assert_array_equal(nms_bev(boxes, [0.9, 0.8], 0.3), [0])
        np.testing.assert_array_equal(nms_bev(boxes, [0.8, 0.9], 0.3), [1])

    def test_iou_equal_to_threshold_is_not_suppressed(self):
        boxes = np.array([[0, 0, 0, 2, 2, 1, 0], [1, 0, 0, 2, 2, 1, 0]])  # IoU exactly 1/3
        iou = bev_iou_matrix(boxes[:1], boxes[1:])[0, 0]
        np.testing.assert_array_equal(nms_bev(boxes, [0.9, 0.8], iou), [0, 1])
        np.testing.assert_array_equal(nms_bev(boxes, [0.9, 0.8], np.nextafter(iou, 0)), [0])

    def test_ties_broken_by_index(self):
        np.testing.assert_array_equal(score_order([0.5, 0.9, 0.5, 0.9]), [1, 3, 0, 2])
        boxes = np.array([[0, 0, 0, 2, 2, 1, 0]] * 3)
        np.testing.assert_array_equal(nms_bev(boxes, [0.7, 0.7, 0.7], 0.5), [0])

    def test_fifty_random_proposals_match_reference(self):
        rng = np.random.default_rng(50)
        boxes = clustered_boxes(rng, 50)
        scores = rng.random(50)
        iou = shapely_iou_matrix(boxes)
        for thr in (0.1, 0.3, 0.5):
            np.testing.assert_array_equal(nms_bev(boxes, scores, thr), reference_nms(iou, scores, thr))

    def test_proposals_wrapper(self):
        props = [Proposal(box=Box3D(0, 0, 0, 2, 2, 1), class_id=0, cls_score=0.4, iou_score=0.5),
                 Proposal(box=Box3D(0.1, 0, 0, 2, 2, 1), class_id=0, cls_score=0.8, iou_score=0.5)]
        np.testing.assert_array_equal(nms_proposals(props, 0.5), [1])

    def test_raising_threshold_can_change_the_kept_set(self):
        # Greedy NMS is not monotone in the threshold: B (IoU 0.43 with A)
        # survives at 0.45 and then removes C (IoU 0.47 with B), which was
        # kept at 0.3 because A alone does not overlap it enough.
        boxes = np.array([[0, 0, 0, 2, 2, 1, 0], [0.8, 0, 0, 2, 2, 1, 0], [1.3, 0.3, 0, 2, 2, 1, 0]])
        scores = [0.9, 0.8, 0.7]
        np.testing.assert_array_equal(nms_bev(boxes, scores, 0.3), [0, 2])
        np.testing.assert_array_equal(nms_bev(boxes, scores, 0.45), [0, 1])

    @pytest.mark.parametrize("thr", [-0.1, 1.1])
    def test_threshold_out_of_range(self, thr):
        with pytest.raises(ValueError):
            nms_bev([[0, 0, 0, 1, 1, 1, 0]], [0.5], thr)

    def test_non_finite_scores_rejected(self):
        with pytest.raises(ValueError):
            nms_bev([[0, 0, 0, 1, 1, 1, 0]], [float("nan")], 0.5)


class TestProperties:
    @given(instances())
    def test_matches_reference(self, inst):
        boxes, scores, thr = inst
        kept = nms_bev(boxes, scores, thr)
        np.testing.assert_array_equal(kept, reference_nms(bev_iou_matrix(boxes, boxes), scores, thr))

    @given(instances())
    def test_kept_set_is_antichain(self, inst):
        boxes, scores, thr = inst
        kept = nms_bev(boxes, scores, thr)
        iou = bev_iou_matrix(boxes[kept], boxes[kept])
        np.fill_diagonal(iou, 0.0)
        assert np.all(iou <= thr)

    @given(instances())
    def test_threshold_one_suppresses_nothing(self, inst):
        boxes, scores, _ = inst
        np.testing.assert_array_equal(nms_bev(boxes, scores, 1.0), np.arange(len(boxes)))

    @given(instances())
    def test_top_scorer_always_kept(self, inst):
        boxes, scores, thr = inst
        if len(scores):
            assert score_order(scores)[0] in nms_bev(boxes, scores, thr)

    @given(instances())
    def test_every_dropped_box_has_a_suppressor(self, inst):
        boxes, scores, thr = inst
        kept = set(nms_bev(boxes, scores, thr).tolist())
        iou = bev_iou_matrix(boxes, boxes)
        rank = {int(i): r for r, i in enumerate(score_order(scores))}
        for j in set(range(len(scores))) - kept:
            assert any(iou[k, j] > thr and rank[k] < rank[j] for k in kept)
