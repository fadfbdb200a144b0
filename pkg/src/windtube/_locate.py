"""Compiled kernel for point location on structured tubular meshes."""

import numba as nb
import numpy as np


def bucket_table(disc_points, disc_tris, n_cells, margin):
    """Disc triangles overlapping each cell of an n_cells x n_cells grid on [-1, 1]^2.

    Returns CSR-style ``(start, tris)`` arrays. Triangle boxes are grown by
    ``margin`` so points pushed slightly off their reference prism by the
    curved embedding still find it.
    """
    p = disc_points[disc_tris]
    lo = p.min(axis=1) - margin
    hi = p.max(axis=1) + margin
    to_cell = lambda v: np.clip(((v + 1.0) * 0.5 * n_cells).astype(np.int64), 0, n_cells - 1)
    c0, c1 = to_cell(lo), to_cell(hi)
    buckets = [[] for _ in range(n_cells * n_cells)]
    for t in range(len(disc_tris)):
        for iy in range(c0[t, 1], c1[t, 1] + 1):
            for ix in range(c0[t, 0], c1[t, 0] + 1):
                buckets[iy * n_cells + ix].append(t)
    start = np.zeros(len(buckets) + 1, dtype=np.int64)
    start[1:] = np.cumsum([len(b) for b in buckets])
    tris = np.array([t for b in buckets for t in b], dtype=np.int64)
    return start, tris


@nb.njit(cache=True)
def locate_bucketed(points, ref_xy, layer, start, tris, n_cells, n_tri, Tinv, P0, eps,
                    out_idx, out_bary):
    """First tet (of the three per candidate prism) containing each point.

    Writes the best candidate found to ``out_idx``/``out_bary`` and returns a
    mask of exact hits.
    """
    n = points.shape[0]
    found = np.zeros(n, dtype=np.bool_)
    for p in range(n):
        cx = int((ref_xy[p, 0] + 1.0) * 0.5 * n_cells)
        cy = int((ref_xy[p, 1] + 1.0) * 0.5 * n_cells)
        cx = min(max(cx, 0), n_cells - 1)
        cy = min(max(cy, 0), n_cells - 1)
        c = cy * n_cells + cx
        best = -np.inf
        for q in range(start[c], start[c + 1]):
            tri = tris[q]
            for kind in range(3):
                e = layer[p] * 3 * n_tri + kind * n_tri + tri
                d0 = points[p, 0] - P0[e, 0]
                d1 = points[p, 1] - P0[e, 1]
                d2 = points[p, 2] - P0[e, 2]
                l1 = Tinv[e, 0, 0] * d0 + Tinv[e, 0, 1] * d1 + Tinv[e, 0, 2] * d2
                l2 = Tinv[e, 1, 0] * d0 + Tinv[e, 1, 1] * d1 + Tinv[e, 1, 2] * d2
                l3 = Tinv[e, 2, 0] * d0 + Tinv[e, 2, 1] * d1 + Tinv[e, 2, 2] * d2
                l0 = 1.0 - l1 - l2 - l3
                s = min(min(l0, l1), min(l2, l3))
                if s > best:
                    best = s
                    out_idx[p] = e
                    out_bary[p, 0] = l0
                    out_bary[p, 1] = l1
                    out_bary[p, 2] = l2
                    out_bary[p, 3] = l3
                if s >= -eps:
                    found[p] = True
                    break
            if found[p]:
                break
    return found
