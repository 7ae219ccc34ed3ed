# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled geometry kernels.

Boxes are float64 rows ``[x, y, z, l, w, h, yaw]``.  Every routine here has a
line-for-line twin in ``_pykernels`` and the two must agree bit-for-bit, so
the arithmetic order below is deliberate.  Compile without ``-ffast-math`` or
FMA contraction.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double EPS = 1e-9
cdef double AREA_EPS = 1e-14


cdef inline void _corners(const double* box, double ox, double oy, double* out) noexcept nogil:
    cdef double c = cos(box[6])
    cdef double s = sin(box[6])
    cdef double hl = 0.5 * box[3]
    cdef double hw = 0.5 * box[4]
    cdef double x = box[0] - ox
    cdef double y = box[1] - oy
    # local (+l/2,-w/2) (+l/2,+w/2) (-l/2,+w/2) (-l/2,-w/2): counter-clockwise
    out[0] = x + (c * hl - s * (-hw))
    out[1] = y + (s * hl + c * (-hw))
    out[2] = x + (c * hl - s * hw)
    out[3] = y + (s * hl + c * hw)
    out[4] = x + (c * (-hl) - s * hw)
    out[5] = y + (s * (-hl) + c * hw)
    out[6] = x + (c * (-hl) - s * (-hw))
    out[7] = y + (s * (-hl) + c * (-hw))


cdef inline double _shoelace(const double* p, int n) noexcept nogil:
    cdef double acc = 0.0
    cdef int i, j
    for i in range(n):
        j = i + 1
        if j == n:
            j = 0
        acc = acc + (p[2 * i] * p[2 * j + 1] - p[2 * j] * p[2 * i + 1])
    return 0.5 * acc


cdef double _clip_area(const double* subj, int n, const double* clip, int m,
                       double* buf_a, double* buf_b) noexcept nogil:
    """Area of the intersection of two counter-clockwise convex polygons.

    ``buf_a``/``buf_b`` need room for ``2 * (n + m)`` doubles.
    """
    cdef double* src = buf_a
    cdef double* dst = buf_b
    cdef double* tmp
    cdef int count = n
    cdef int out_count, i, k, prev
    cdef double c1x, c1y, ex, ey, elen, sx, sy, px, py, ds, dp, t
    for i in range(2 * n):
        src[i] = subj[i]
    for k in range(m):
        if count == 0:
            return 0.0
        c1x = clip[2 * k]
        c1y = clip[2 * k + 1]
        if k + 1 == m:
            ex = clip[0] - c1x
            ey = clip[1] - c1y
        else:
            ex = clip[2 * k + 2] - c1x
            ey = clip[2 * k + 3] - c1y
        elen = sqrt(ex * ex + ey * ey)
        if elen <= 0.0:
            continue
        out_count = 0
        prev = count - 1
        sx = src[2 * prev]
        sy = src[2 * prev + 1]
        ds = (ex * (sy - c1y) - ey * (sx - c1x)) / elen
        for i in range(count):
            px = src[2 * i]
            py = src[2 * i + 1]
            dp = (ex * (py - c1y) - ey * (px - c1x)) / elen
            if dp >= -EPS:
                if ds < -EPS:
                    t = ds / (ds - dp)
                    dst[2 * out_count] = sx + t * (px - sx)
                    dst[2 * out_count + 1] = sy + t * (py - sy)
                    out_count += 1
                dst[2 * out_count] = px
                dst[2 * out_count + 1] = py
                out_count += 1
            elif ds >= -EPS:
                t = ds / (ds - dp)
                dst[2 * out_count] = sx + t * (px - sx)
                dst[2 * out_count + 1] = sy + t * (py - sy)
                out_count += 1
            sx = px
            sy = py
            ds = dp
        count = out_count
        tmp = src
        src = dst
        dst = tmp
    if count < 3:
        return 0.0
    t = _shoelace(src, count)
    if t < 0.0:
        return 0.0
    return t


cdef inline bint _box_less(const double* a, const double* b) noexcept nogil:
    cdef int i
    for i in range(7):
        if a[i] < b[i]:
            return True
        if a[i] > b[i]:
            return False
    return False


cdef inline bint _same_footprint(const double* a, const double* b) noexcept nogil:
    return a[0] == b[0] and a[1] == b[1] and a[3] == b[3] and a[4] == b[4] and a[6] == b[6]


cdef inline double _bev_inter(const double* a, const double* b) noexcept nogil:
    cdef double ca[8]
    cdef double cb[8]
    cdef double buf_a[16]
    cdef double buf_b[16]
    cdef double dx, dy, ra, rb
    cdef const double* tmp
    # exact symmetry: always clip the lexicographically smaller box
    if _box_less(b, a):
        tmp = a
        a = b
        b = tmp
    if _same_footprint(a, b):
        return a[3] * a[4]
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    ra = 0.5 * sqrt(a[3] * a[3] + a[4] * a[4])
    rb = 0.5 * sqrt(b[3] * b[3] + b[4] * b[4])
    if dx * dx + dy * dy > (ra + rb) * (ra + rb) * 1.0000001 + 1e-12:
        return 0.0
    # clip in a frame centered on a: keeps precision far from the origin
    _corners(a, a[0], a[1], ca)
    _corners(b, a[0], a[1], cb)
    return _clip_area(ca, 4, cb, 4, buf_a, buf_b)


cdef inline double _bev_iou(const double* a, const double* b) noexcept nogil:
    cdef double inter = _bev_inter(a, b)
    cdef double union
    if inter <= 0.0:
        return 0.0
    union = a[3] * a[4] + b[3] * b[4] - inter
    if union <= 0.0:
        return 0.0
    inter = inter / union
    if inter > 1.0:
        return 1.0
    return inter


cdef inline double _iou3d(const double* a, const double* b) noexcept nogil:
    cdef double inter = _bev_inter(a, b)
    cdef double top, bottom, overlap, vol, union
    if inter <= 0.0:
        return 0.0
    if _same_footprint(a, b) and a[2] == b[2] and a[5] == b[5]:
        return 1.0
    top = a[2] + 0.5 * a[5]
    if b[2] + 0.5 * b[5] < top:
        top = b[2] + 0.5 * b[5]
    bottom = a[2] - 0.5 * a[5]
    if b[2] - 0.5 * b[5] > bottom:
        bottom = b[2] - 0.5 * b[5]
    overlap = top - bottom
    if overlap <= 0.0:
        return 0.0
    vol = inter * overlap
    union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - vol
    if union <= 0.0:
        return 0.0
    vol = vol / union
    if vol > 1.0:
        return 1.0
    return vol


def bev_iou_matrix(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _bev_iou(&a[i, 0], &b[j, 0])
    return out


def iou3d_matrix(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _iou3d(&a[i, 0], &b[j, 0])
    return out


def bev_intersection_matrix(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _bev_inter(&a[i, 0], &b[j, 0])
    return out


def convex_intersection_area(const double[:, ::1] p, const double[:, ::1] q):
    cdef int n = <int>p.shape[0]
    cdef int m = <int>q.shape[0]
    cdef double area
    cdef double* buf
    if n < 3 or m < 3:
        return 0.0
    if fabs(_shoelace(&p[0, 0], n)) <= AREA_EPS or fabs(_shoelace(&q[0, 0], m)) <= AREA_EPS:
        return 0.0
    buf = <double*>malloc(4 * (n + m) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        area = _clip_area(&p[0, 0], n, &q[0, 0], m, buf, buf + 2 * (n + m))
    finally:
        free(buf)
    return area


def nms_bev(const double[:, ::1] boxes, const Py_ssize_t[::1] order, double threshold):
    """Greedy suppression over boxes visited in ``order``; returns a keep mask."""
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t i, j, bi, bj
    keep = np.zeros(boxes.shape[0], dtype=np.bool_)
    suppressed_arr = np.zeros(boxes.shape[0], dtype=np.uint8)
    cdef cnp.uint8_t[::1] suppressed = suppressed_arr
    cdef cnp.uint8_t[::1] kept = keep.view(np.uint8)
    with nogil:
        for i in range(n):
            bi = order[i]
            if suppressed[bi]:
                continue
            kept[bi] = 1
            for j in range(i + 1, n):
                bj = order[j]
                if suppressed[bj]:
                    continue
                if _bev_iou(&boxes[bi, 0], &boxes[bj, 0]) > threshold:
                    suppressed[bj] = 1
    return keep
