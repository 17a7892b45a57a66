"""Pure-NumPy compute kernels.

These are the fallback implementations of the two hot loops in the package:
local P1 stiffness assembly and point location against a background-grid
candidate list.  The compiled extension in ``_kernels.pyx`` implements the
same contracts; ``_backend`` picks whichever is importable.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def stiffness_values(xs: np.ndarray, ys: np.ndarray, a11: np.ndarray, a22: np.ndarray) -> np.ndarray:
    """Local stiffness contributions for P1 triangles with diagonal diffusion.

    Parameters
    ----------
    xs, ys:
        ``(m, 3)`` vertex coordinates per triangle.
    a11, a22:
        ``(m,)`` diagonal coefficient per triangle.

    Returns
    -------
    ``(m, 9)`` array with the row-major 3x3 local matrices.
    """
    b = np.stack(
        [ys[:, 1] - ys[:, 2], ys[:, 2] - ys[:, 0], ys[:, 0] - ys[:, 1]], axis=1
    )
    c = np.stack(
        [xs[:, 2] - xs[:, 1], xs[:, 0] - xs[:, 2], xs[:, 1] - xs[:, 0]], axis=1
    )
    det = xs[:, 0] * b[:, 0] + xs[:, 1] * b[:, 1] + xs[:, 2] * b[:, 2]  # = 2*area
    scale = 1.0 / (2.0 * det)
    kb = np.einsum("m,mi,mj->mij", a11 * scale, b, b)
    kc = np.einsum("m,mi,mj->mij", a22 * scale, c, c)
    return (kb + kc).reshape(len(xs), 9)


def locate_scan(
    px: np.ndarray,
    py: np.ndarray,
    cand_ptr: np.ndarray,
    cand_tri: np.ndarray,
    tx: np.ndarray,
    ty: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Scan candidate triangles per point and keep the best barycentric fit.

    Parameters
    ----------
    px, py:
        ``(n,)`` query coordinates.
    cand_ptr:
        ``(n + 1,)`` prefix offsets into ``cand_tri``.
    cand_tri:
        flattened candidate triangle index lists.
    tx, ty:
        ``(nt, 3)`` triangle vertex coordinates.

    Returns
    -------
    ``(tri, bary)`` where ``tri`` is ``(n,)`` (``-1`` when a point has no
    candidates) and ``bary`` is ``(n, 3)``; the selected triangle maximizes
    the minimum barycentric coordinate.
    """
    n = len(px)
    tri = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    counts = cand_ptr[1:] - cand_ptr[:-1]
    total = int(cand_ptr[-1])
    if total == 0:
        return tri, bary

    pair_pt = np.repeat(np.arange(n, dtype=np.int64), counts)
    pair_tri = cand_tri[_expand_ranges(cand_ptr[:-1], cand_ptr[1:])]

    x1 = tx[pair_tri, 0]
    x2 = tx[pair_tri, 1]
    x3 = tx[pair_tri, 2]
    y1 = ty[pair_tri, 0]
    y2 = ty[pair_tri, 1]
    y3 = ty[pair_tri, 2]
    qx = px[pair_pt]
    qy = py[pair_pt]
    det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
    l1 = ((y2 - y3) * (qx - x3) + (x3 - x2) * (qy - y3)) / det
    l2 = ((y3 - y1) * (qx - x3) + (x1 - x3) * (qy - y3)) / det
    l3 = 1.0 - l1 - l2
    score = np.minimum(np.minimum(l1, l2), l3)

    nonempty = counts > 0
    starts = cand_ptr[:-1][nonempty]
    seg_best = np.full(n, -np.inf)
    seg_best[nonempty] = np.maximum.reduceat(score, starts)
    pos = np.arange(total, dtype=np.int64)
    pos = np.where(score == seg_best[pair_pt], pos, total)
    first = np.full(n, total, dtype=np.int64)
    first[nonempty] = np.minimum.reduceat(pos, starts)

    hit = first < total
    sel = first[hit]
    tri[hit] = pair_tri[sel]
    bary[hit, 0] = l1[sel]
    bary[hit, 1] = l2[sel]
    bary[hit, 2] = l3[sel]
    return tri, bary


def _expand_ranges(starts: np.ndarray, stops: np.ndarray) -> np.ndarray:
    """Concatenate ``arange(starts[i], stops[i])`` for all i, vectorized."""
    counts = (stops - starts).astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    out = np.ones(total, dtype=np.int64)
    nz = counts > 0
    s = starts[nz]
    cs = counts[nz].cumsum()
    out[0] = s[0]
    out[cs[:-1]] = s[1:] - (s[:-1] + counts[nz][:-1]) + 1
    return out.cumsum()
