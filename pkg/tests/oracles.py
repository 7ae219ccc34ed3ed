"""Independent reference implementations used by the tests.

Nothing here imports the package. The IoU oracles sample points, the NMS
oracle is a plain loop over a given overlap matrix, and shapely supplies an
independent polygon IoU.
"""

import numpy as np


def _relative_frame(a, b):
    """Rotation (cos, sin) and offset taking box-``a`` local coordinates to box-``b`` local ones."""
    cb, sb = np.cos(b[6]), np.sin(b[6])
    dx, dy = a[0] - b[0], a[1] - b[1]
    return np.cos(a[6] - b[6]), np.sin(a[6] - b[6]), cb * dx + sb * dy, -sb * dx + cb * dy


def _stratified(rng, n, shape, axis_len, axis):
    """One jittered coordinate per grid cell along ``axis``, centered on zero.

    Samples are float32. Their rounding moves points by a few micrometres,
    far below the accuracy the oracle is used for.
    """
    idx_shape = [1] * len(shape)
    idx_shape[axis] = n
    cells = np.arange(n, dtype=np.float32).reshape(idx_shape)
    out = rng.random(shape, dtype=np.float32)
    out += cells
    out *= np.float32(axis_len / n)
    out -= np.float32(0.5 * axis_len)
    return out


def _bev_hits(a, b, u, v):
    c, s, ou, ov = (np.float32(x) for x in _relative_frame(a, b))
    ub = c * u
    ub -= s * v
    ub += ou
    vb = s * u
    vb += c * v
    vb += ov
    return (np.abs(ub) <= np.float32(0.5 * b[3])) & (np.abs(vb) <= np.float32(0.5 * b[4]))


def mc_iou_bev(a, b, rng, n_samples=1_000_000):
    """Stratified Monte Carlo BEV IoU: sample inside ``a``, count hits in ``b``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    n = int(round(np.sqrt(n_samples)))
    u = _stratified(rng, n, (n, n), a[3], 0)
    v = _stratified(rng, n, (n, n), a[4], 1)
    hit = _bev_hits(a, b, u, v)
    area_a, area_b = a[3] * a[4], b[3] * b[4]
    inter = area_a * np.count_nonzero(hit) / hit.size
    return inter / (area_a + area_b - inter)


def mc_iou_3d(a, b, rng, n_samples=1_000_000):
    """Stratified Monte Carlo 3D IoU over the volume of ``a``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    n = int(round(n_samples ** (1.0 / 3.0)))
    shape = (n, n, n)
    u = _stratified(rng, n, shape, a[3], 0)
    v = _stratified(rng, n, shape, a[4], 1)
    z = _stratified(rng, n, shape, a[5], 2)
    z += np.float32(a[2] - b[2])
    hit = _bev_hits(a, b, u, v) & (np.abs(z) <= np.float32(0.5 * b[5]))
    vol_a, vol_b = a[3] * a[4] * a[5], b[3] * b[4] * b[5]
    inter = vol_a * np.count_nonzero(hit) / hit.size
    return inter / (vol_a + vol_b - inter)


def random_box_pair(rng, overlap_bias=True):
    """Two boxes with assorted sizes; ``b`` is usually placed near ``a``."""
    a = np.array([
        rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-2, 1),
        rng.uniform(0.3, 5), rng.uniform(0.3, 3), rng.uniform(0.5, 2.5),
        rng.uniform(-np.pi, np.pi),
    ])
    spread = 0.6 if overlap_bias else 4.0
    b = np.array([
        a[0] + rng.normal(0, spread * a[3]), a[1] + rng.normal(0, spread * a[4]),
        a[2] + rng.normal(0, 0.3 * a[5]),
        a[3] * np.exp(rng.normal(0, 0.3)), a[4] * np.exp(rng.normal(0, 0.3)),
        a[5] * np.exp(rng.normal(0, 0.3)),
        rng.uniform(-np.pi, np.pi),
    ])
    return a, b


def reference_nms(iou, scores, threshold):
    """Textbook O(n^2) greedy NMS over a precomputed IoU matrix.

    Visits boxes by descending score (ties by ascending index) and keeps a box
    unless some already kept box overlaps it by more than ``threshold``.
    Returns kept indices in ascending order.
    """
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(iou[i][k] <= threshold for k in kept):
            kept.append(i)
    return sorted(kept)


def shapely_iou_matrix(boxes):
    """Pairwise BEV IoU via shapely polygons (independent of the package)."""
    from shapely.geometry import Polygon

    polys = []
    for bx in boxes:
        c, s = np.cos(bx[6]), np.sin(bx[6])
        hl, hw = 0.5 * bx[3], 0.5 * bx[4]
        pts = [(bx[0] + c * u - s * v, bx[1] + s * u + c * v)
               for u, v in ((hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw))]
        polys.append(Polygon(pts))
    n = len(polys)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            inter = polys[i].intersection(polys[j]).area
            union = polys[i].area + polys[j].area - inter
            out[i, j] = out[j, i] = inter / union if union > 0 else 0.0
    return out
