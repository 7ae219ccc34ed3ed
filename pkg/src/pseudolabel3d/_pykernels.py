"""Pure-Python twins of the compiled kernels in ``_ckernels.pyx``.

Used when the extension is unavailable (or forced via the
``PSEUDOLABEL3D_PURE_PYTHON`` environment variable).  The arithmetic mirrors
the Cython source operation for operation so both backends return identical
floats.
"""

from math import cos, sin, sqrt

import numpy as np

EPS = 1e-9
AREA_EPS = 1e-14


def _corners(box, ox, oy):
    c = cos(box[6])
    s = sin(box[6])
    hl = 0.5 * box[3]
    hw = 0.5 * box[4]
    x = box[0] - ox
    y = box[1] - oy
    return [
        x + (c * hl - s * (-hw)), y + (s * hl + c * (-hw)),
        x + (c * hl - s * hw), y + (s * hl + c * hw),
        x + (c * (-hl) - s * hw), y + (s * (-hl) + c * hw),
        x + (c * (-hl) - s * (-hw)), y + (s * (-hl) + c * (-hw)),
    ]


def _shoelace(p, n):
    acc = 0.0
    for i in range(n):
        j = i + 1
        if j == n:
            j = 0
        acc = acc + (p[2 * i] * p[2 * j + 1] - p[2 * j] * p[2 * i + 1])
    return 0.5 * acc


def _clip_area(subj, n, clip, m):
    src = list(subj[: 2 * n])
    count = n
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
        dst = []
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
                    dst.append(sx + t * (px - sx))
                    dst.append(sy + t * (py - sy))
                dst.append(px)
                dst.append(py)
            elif ds >= -EPS:
                t = ds / (ds - dp)
                dst.append(sx + t * (px - sx))
                dst.append(sy + t * (py - sy))
            sx = px
            sy = py
            ds = dp
        src = dst
        count = len(dst) // 2
    if count < 3:
        return 0.0
    t = _shoelace(src, count)
    if t < 0.0:
        return 0.0
    return t


def _same_footprint(a, b):
    return a[0] == b[0] and a[1] == b[1] and a[3] == b[3] and a[4] == b[4] and a[6] == b[6]


def _bev_inter(a, b):
    if tuple(b) < tuple(a):
        a, b = b, a
    if _same_footprint(a, b):
        return a[3] * a[4]
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    ra = 0.5 * sqrt(a[3] * a[3] + a[4] * a[4])
    rb = 0.5 * sqrt(b[3] * b[3] + b[4] * b[4])
    if dx * dx + dy * dy > (ra + rb) * (ra + rb) * 1.0000001 + 1e-12:
        return 0.0
    return _clip_area(_corners(a, a[0], a[1]), 4, _corners(b, a[0], a[1]), 4)


def _bev_iou(a, b):
    inter = _bev_inter(a, b)
    if inter <= 0.0:
        return 0.0
    union = a[3] * a[4] + b[3] * b[4] - inter
    if union <= 0.0:
        return 0.0
    inter = inter / union
    return 1.0 if inter > 1.0 else inter


def _iou3d(a, b):
    inter = _bev_inter(a, b)
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
    return 1.0 if vol > 1.0 else vol


def _pairwise(fn, a, b):
    rows_a = a.tolist()
    rows_b = b.tolist()
    out = np.zeros((len(rows_a), len(rows_b)), dtype=np.float64)
    for i, ra in enumerate(rows_a):
        for j, rb in enumerate(rows_b):
            out[i, j] = fn(ra, rb)
    return out


def bev_iou_matrix(a, b):
    return _pairwise(_bev_iou, a, b)


def iou3d_matrix(a, b):
    return _pairwise(_iou3d, a, b)


def bev_intersection_matrix(a, b):
    return _pairwise(_bev_inter, a, b)


def convex_intersection_area(p, q):
    n, m = len(p), len(q)
    if n < 3 or m < 3:
        return 0.0
    fp = np.asarray(p, dtype=np.float64).ravel().tolist()
    fq = np.asarray(q, dtype=np.float64).ravel().tolist()
    if abs(_shoelace(fp, n)) <= AREA_EPS or abs(_shoelace(fq, m)) <= AREA_EPS:
        return 0.0
    return _clip_area(fp, n, fq, m)


def nms_bev(boxes, order, threshold):
    rows = boxes.tolist()
    keep = np.zeros(len(rows), dtype=bool)
    suppressed = [False] * len(rows)
    order = [int(i) for i in order]
    for i, bi in enumerate(order):
        if suppressed[bi]:
            continue
        keep[bi] = True
        for bj in order[i + 1:]:
            if suppressed[bj]:
                continue
            if _bev_iou(rows[bi], rows[bj]) > threshold:
                suppressed[bj] = True
    return keep
