"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

FIXED_BITS = 40
FIXED_ONE = 1 << FIXED_BITS
FIXED_MASK = FIXED_ONE - 1
_CHUNK = 1 << 20


def assign_points_to_boxes(points, boxes, margin):
    n = points.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    # walk in reverse priority so the highest-priority box is written last
    for b in range(boxes.shape[0] - 1, -1, -1):
        cx, cy, cz, c, s, hl, hw, hh = boxes[b]
        dx = points[:, 0] - cx
        dy = points[:, 1] - cy
        dz = points[:, 2] - cz
        lx = c * dx + s * dy
        ly = c * dy - s * dx
        inside = (np.abs(lx) <= hl + margin) & (np.abs(ly) <= hw + margin) & (np.abs(dz) <= hh + margin)
        out[inside] = b
    return out


def _fixed_sums(cells, values, n_cells):
    hi = np.zeros(n_cells, dtype=np.int64)
    lo = np.zeros(n_cells, dtype=np.int64)
    for start in range(0, len(cells), _CHUNK):
        q = np.rint(values[start:start + _CHUNK] * float(FIXED_ONE)).astype(np.int64)
        idx = cells[start:start + _CHUNK]
        np.add.at(hi, idx, q >> FIXED_BITS)
        np.add.at(lo, idx, q & FIXED_MASK)
        hi += lo >> FIXED_BITS
        lo &= FIXED_MASK
    return hi, lo


def accumulate_cells(cells, epe, disp, n_cells):
    counts = np.bincount(cells, minlength=n_cells).astype(np.int64)
    epe_hi, epe_lo = _fixed_sums(cells, epe, n_cells)
    disp_hi, disp_lo = _fixed_sums(cells, disp, n_cells)
    return counts, epe_hi, epe_lo, disp_hi, disp_lo
