"""Box representation, polygon clipping and rotated IoU."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import mc_iou_3d, mc_iou_bev, random_box_pair
from pseudolabel3d import kernels
from pseudolabel3d.geometry import (
    Box3D,
    InvalidBoxError,
    as_box_array,
    bev_corners,
    bev_iou_matrix,
    convex_intersection_area,
    decode_residuals,
    encode_residuals,
    iou3d_matrix,
    iou_3d,
    iou_bev,
    normalize_angle,
    polygon_area,
)

UNIT_SQUARE = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
size = st.floats(0.1, 8.0, allow_nan=False, allow_infinity=False)
angle = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
box_rows = st.tuples(finite, finite, st.floats(-3, 3), size, size, size, angle).map(np.array)


@st.composite
def box_pairs(draw):
    """Pairs where the second box sits within a few lengths of the first."""
    a = draw(box_rows)
    dx = draw(st.floats(-2, 2)) * a[3]
    dy = draw(st.floats(-2, 2)) * a[4]
    b = np.array([a[0] + dx, a[1] + dy, a[2] + draw(st.floats(-1, 1)),
                  draw(size), draw(size), draw(size), draw(angle)])
    return a, b


def rotate_square(theta):
    c, s = math.cos(theta), math.sin(theta)
    return UNIT_SQUARE @ np.array([[c, s], [-s, c]])


class TestBox3D:
    def test_yaw_is_normalized_into_half_open_interval(self):
        assert Box3D(0, 0, 0, 1, 1, 1, -math.pi).yaw == pytest.approx(math.pi)
        assert Box3D(0, 0, 0, 1, 1, 1, math.pi).yaw == pytest.approx(math.pi)
        assert Box3D(0, 0, 0, 1, 1, 1, 3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)

    @pytest.mark.parametrize("dims", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
    def test_non_positive_dimensions_rejected(self, dims):
        with pytest.raises(InvalidBoxError):
            Box3D(0, 0, 0, *dims)

    def test_non_finite_parameter_rejected(self):
        with pytest.raises(InvalidBoxError):
            Box3D(float("nan"), 0, 0, 1, 1, 1)
        with pytest.raises(InvalidBoxError):
            Box3D(0, 0, 0, 1, 1, 1, float("inf"))

    def test_array_round_trip(self):
        b = Box3D(1.5, -2.0, 0.3, 4.0, 1.8, 1.5, 0.7)
        assert Box3D.from_array(b.to_array()) == b
        np.testing.assert_array_equal(as_box_array([b, b]).shape, (2, 7))

    @given(angle)
    def test_normalize_angle_range(self, a):
        w = normalize_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)
        if -math.pi < a <= math.pi:
            assert w == a


class TestBevCorners:
    def test_axis_aligned_unit_square(self):
        corners = bev_corners(Box3D(0, 0, 0, 1, 1, 1, 0))
        expected = {(0.5, -0.5), (0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5)}
        assert {tuple(np.round(c, 12)) for c in corners} == expected

    def test_quarter_turn_keeps_the_corner_set(self):
        corners = bev_corners(Box3D(0, 0, 0, 1, 1, 1, math.pi / 2))
        expected = {(0.5, -0.5), (0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5)}
        assert {tuple(np.round(c, 12) + 0.0) for c in corners} == expected

    def test_rotated_rectangle_matches_rotation_matrix(self):
        theta = math.pi / 4
        corners = bev_corners(Box3D(0, 0, 0, 2, 1, 1, theta))
        local = np.array([[1.0, -0.5], [1.0, 0.5], [-1.0, 0.5], [-1.0, -0.5]])
        rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        np.testing.assert_allclose(corners, local @ rot.T, atol=1e-12)

    @given(box_rows)
    def test_counter_clockwise_and_centered(self, row):
        corners = bev_corners(row)
        assert polygon_area(corners) > 0
        np.testing.assert_allclose(corners.mean(axis=0), row[:2], atol=1e-9)
        assert polygon_area(corners) == pytest.approx(row[3] * row[4], rel=1e-9)


class TestConvexIntersection:
    def test_identical_squares(self):
        assert convex_intersection_area(UNIT_SQUARE, UNIT_SQUARE) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_squares(self):
        assert convex_intersection_area(UNIT_SQUARE, UNIT_SQUARE + [1.5, 0.0]) == 0.0

    def test_square_vs_rotated_square_is_regular_octagon(self):
        # Two unit squares rotated 45 degrees about a common center overlap
        # in a regular octagon with inradius 1/2: area = 2 (sqrt 2 - 1).
        area = convex_intersection_area(UNIT_SQUARE, rotate_square(math.pi / 4))
        assert area == pytest.approx(2.0 * (math.sqrt(2.0) - 1.0), abs=1e-12)

    def test_octagon_matches_sampling(self, rng):
        pts = rng.random((10_000_000, 2)) - 0.5
        c = math.cos(math.pi / 4)
        u = c * pts[:, 0] + c * pts[:, 1]
        v = -c * pts[:, 0] + c * pts[:, 1]
        mc = np.mean((np.abs(u) <= 0.5) & (np.abs(v) <= 0.5))
        area = convex_intersection_area(UNIT_SQUARE, rotate_square(math.pi / 4))
        assert abs(area - mc) < 1e-3

    def test_degenerate_polygon_yields_zero(self):
        segment = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]])
        assert convex_intersection_area(segment, UNIT_SQUARE) == 0.0
        assert convex_intersection_area(UNIT_SQUARE, segment) == 0.0

    def test_contained_polygon(self):
        small = 0.25 * UNIT_SQUARE + [0.1, -0.1]
        assert convex_intersection_area(small, UNIT_SQUARE) == pytest.approx(1 / 16, abs=1e-12)

    @given(box_pairs())
    def test_symmetric_and_bounded(self, pair):
        pa, pb = bev_corners(pair[0]), bev_corners(pair[1])
        ab = convex_intersection_area(pa, pb)
        ba = convex_intersection_area(pb, pa)
        assert ab >= 0.0
        assert ab == pytest.approx(ba, rel=1e-9, abs=1e-12)
        assert ab <= min(polygon_area(pa), polygon_area(pb)) * (1 + 1e-12)


class TestIoU:
    def test_identical_boxes(self):
        b = Box3D(3.0, -1.0, -1.0, 4.2, 1.7, 1.5, 0.4)
        assert iou_bev(b, b) == pytest.approx(1.0, abs=1e-12)
        assert iou_3d(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_axis_aligned_offset(self):
        a = Box3D(0, 0, 0, 2, 2, 1, 0)
        b = Box3D(1, 0, 0, 2, 2, 1, 0)
        assert iou_bev(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_vertical_half_overlap(self):
        a = Box3D(0, 0, 1, 2, 2, 2, 0)  # z in [0, 2]
        b = Box3D(0, 0, 2, 2, 2, 2, 0)  # z in [1, 3]
        assert iou_bev(a, b) == pytest.approx(1.0, abs=1e-12)
        assert iou_3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_disjoint_is_zero(self):
        a = Box3D(0, 0, 0, 2, 2, 1, 0.3)
        b = Box3D(10, 0, 0, 2, 2, 1, -0.3)
        assert iou_bev(a, b) == 0.0
        assert iou_3d(a, b) == 0.0

    def test_vertically_disjoint_is_zero_in_3d(self):
        a = Box3D(0, 0, 0, 2, 2, 1, 0)
        b = Box3D(0, 0, 5, 2, 2, 1, 0)
        assert iou_bev(a, b) == pytest.approx(1.0)
        assert iou_3d(a, b) == 0.0

    def test_matrix_shapes(self):
        a = np.array([[0, 0, 0, 1, 1, 1, 0]] * 3, dtype=float)
        assert bev_iou_matrix(a, a[:2]).shape == (3, 2)
        assert iou3d_matrix(a, np.zeros((0, 7))).shape == (3, 0)

    def test_matches_monte_carlo_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            a, b = random_box_pair(rng)
            assert abs(iou_bev(Box3D(*a), Box3D(*b)) - mc_iou_bev(a, b, rng)) < 1e-3
            assert abs(iou_3d(Box3D(*a), Box3D(*b)) - mc_iou_3d(a, b, rng)) < 1e-3

    @given(box_pairs())
    def test_symmetry_is_exact(self, pair):
        a, b = pair
        assert bev_iou_matrix(a, b)[0, 0] == bev_iou_matrix(b, a)[0, 0]
        assert iou3d_matrix(a, b)[0, 0] == iou3d_matrix(b, a)[0, 0]

    @given(box_pairs())
    def test_range(self, pair):
        v = bev_iou_matrix(*pair)[0, 0]
        w = iou3d_matrix(*pair)[0, 0]
        assert 0.0 <= v <= 1.0
        assert 0.0 <= w <= 1.0

    @given(box_pairs(), st.floats(-math.pi, math.pi), finite, finite)
    def test_rigid_motion_invariance(self, pair, theta, tx, ty):
        c, s = math.cos(theta), math.sin(theta)
        moved = []
        for row in pair:
            m = row.copy()
            m[0] = c * row[0] - s * row[1] + tx
            m[1] = s * row[0] + c * row[1] + ty
            m[6] = row[6] + theta
            moved.append(m)
        assert abs(bev_iou_matrix(*pair)[0, 0] - bev_iou_matrix(*moved)[0, 0]) < 1e-9

    @given(box_pairs(), st.floats(0.05, 20.0))
    def test_scale_covariance(self, pair, scale):
        scaled = [np.concatenate([r[:6] * scale, r[6:]]) for r in pair]
        assert abs(bev_iou_matrix(*pair)[0, 0] - bev_iou_matrix(*scaled)[0, 0]) < 1e-9
        assert abs(iou3d_matrix(*pair)[0, 0] - iou3d_matrix(*scaled)[0, 0]) < 1e-9

    @given(box_pairs())
    def test_3d_equals_bev_for_shared_vertical_extent(self, pair):
        a, b = pair
        b = b.copy()
        b[2], b[5] = a[2], a[5]
        assert iou3d_matrix(a, b)[0, 0] == pytest.approx(bev_iou_matrix(a, b)[0, 0], rel=1e-12, abs=1e-15)

    @given(box_pairs())
    def test_one_iff_identical_footprint(self, pair):
        a, _ = pair
        assert bev_iou_matrix(a, a)[0, 0] == 1.0
        assert iou3d_matrix(a, a)[0, 0] == 1.0
        shifted = a.copy()
        shifted[0] += 0.01 * a[3]
        assert bev_iou_matrix(a, shifted)[0, 0] < 1.0


@pytest.mark.skipif("cython" not in kernels.available_backends(), reason="compiled backend not built")
class TestBackendParity:
    def test_iou_matrices_bit_identical(self):
        rng = np.random.default_rng(3)
        py, cy = kernels.available_backends()["python"], kernels.available_backends()["cython"]
        pairs = [random_box_pair(rng) for _ in range(30)]
        a = np.stack([p[0] for p in pairs])
        b = np.stack([p[1] for p in pairs])
        np.testing.assert_array_equal(py.bev_iou_matrix(a, b), cy.bev_iou_matrix(a, b))
        np.testing.assert_array_equal(py.iou3d_matrix(a, b), cy.iou3d_matrix(a, b))

    def test_nms_bit_identical(self):
        rng = np.random.default_rng(4)
        py, cy = kernels.available_backends()["python"], kernels.available_backends()["cython"]
        for _ in range(20):
            n = int(rng.integers(1, 40))
            boxes = np.column_stack([
                rng.uniform(0, 8, n), rng.uniform(0, 8, n), np.zeros(n),
                rng.uniform(1, 4, n), rng.uniform(1, 2, n), np.ones(n), rng.uniform(-3, 3, n),
            ])
            order = np.argsort(-rng.random(n), kind="stable").astype(np.intp)
            thr = float(rng.uniform(0, 1))
            np.testing.assert_array_equal(py.nms_bev(boxes, order, thr), cy.nms_bev(boxes, order, thr))


class TestResiduals:
    @given(box_pairs())
    def test_encode_decode_round_trip(self, pair):
        a, g = pair
        g = g.copy()
        g[6] = normalize_angle(g[6])
        back = decode_residuals(a, encode_residuals(a, g))[0]
        np.testing.assert_allclose(back[:6], g[:6], rtol=1e-9, atol=1e-9)
        assert abs(normalize_angle(back[6] - g[6])) < 1e-9

    def test_identity_residual_is_zero(self):
        a = np.array([[1, 2, -1, 4, 2, 1.5, 0.3]])
        np.testing.assert_allclose(encode_residuals(a, a), 0.0, atol=1e-15)
