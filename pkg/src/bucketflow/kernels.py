"""Hot per-point kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built; set
``BUCKETFLOW_PURE_PYTHON=1`` to force the numpy implementation. Both
backends return identical results, including the fixed-point sums.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from . import _pykernels
from .core import Box3D, box_params

if os.environ.get("BUCKETFLOW_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"

FIXED_BITS = _pykernels.FIXED_BITS
FIXED_ONE = _pykernels.FIXED_ONE
# values at or above this would overflow the int64 fixed-point representation
MAX_FIXED_VALUE = float(1 << 22)


def _impl(backend: str | None):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if backend == "python":
        return _pykernels
    raise ValueError(f"unknown backend {backend!r}")


def pack_boxes(boxes: Sequence[Box3D]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 8))
    return np.ascontiguousarray([box_params(b) for b in boxes], dtype=np.float64)


def assign_points_to_boxes(
    points: np.ndarray, boxes: Sequence[Box3D], margin: float = 0.0, backend: str | None = None
) -> np.ndarray:
    """For each point, the index into ``boxes`` of the first box containing it, or -1.

    ``boxes`` must already be in priority order.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    return _impl(backend).assign_points_to_boxes(pts, pack_boxes(boxes), float(margin))


def to_fixed(hi: np.ndarray, lo: np.ndarray) -> list[int]:
    return [(int(h) << FIXED_BITS) + int(lo_) for h, lo_ in zip(hi, lo)]


def accumulate_cells(
    cells: np.ndarray, epe: np.ndarray, disp: np.ndarray, n_cells: int, backend: str | None = None
) -> tuple[np.ndarray, list[int], list[int]]:
    """Counts and exact fixed-point sums (units of 2**-40) per cell."""
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    epe = np.ascontiguousarray(epe, dtype=np.float64)
    disp = np.ascontiguousarray(disp, dtype=np.float64)
    if not (len(cells) == len(epe) == len(disp)):
        raise ValueError("cells, epe and disp must have equal length")
    if len(cells):
        if cells.min() < 0 or cells.max() >= n_cells:
            raise ValueError("cell index out of range")
        for name, v in (("epe", epe), ("disp", disp)):
            if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() >= MAX_FIXED_VALUE:
                raise ValueError(f"{name} values must be finite, non-negative and below {MAX_FIXED_VALUE:g} m")
    counts, eh, el, dh, dl = _impl(backend).accumulate_cells(cells, epe, disp, int(n_cells))
    return np.asarray(counts, dtype=np.int64), to_fixed(eh, el), to_fixed(dh, dl)
