"""Backend selection for the geometry hot loops.

The compiled ``_ckernels`` extension is used when it imports cleanly;
otherwise (or when ``PSEUDOLABEL3D_PURE_PYTHON=1``) the pure-Python twins in
``_pykernels`` are used.  ``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels

_FORCE_PYTHON = os.environ.get("PSEUDOLABEL3D_PURE_PYTHON", "").strip() not in ("", "0")

_impl = _pykernels
BACKEND = "python"
if not _FORCE_PYTHON:
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

bev_iou_matrix = _impl.bev_iou_matrix
iou3d_matrix = _impl.iou3d_matrix
bev_intersection_matrix = _impl.bev_intersection_matrix
convex_intersection_area = _impl.convex_intersection_area
nms_bev = _impl.nms_bev


def available_backends():
    """Return ``{name: module}`` for every importable kernel backend."""
    backends = {"python": _pykernels}
    try:
        from . import _ckernels
        backends["cython"] = _ckernels
    except ImportError:  # pragma: no cover
        pass
    return backends
