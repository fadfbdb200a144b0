"""
Winding numbers of field lines mapped into the reference cylinder.

The relative angle between two curves at a common height is
``atan2(g2 - h2, g1 - h1)``. Winding accumulates its increments over the
shared height range of every pair of monotone sections, each pair weighted
by the product of the sections' directions. Increments are computed from
the cross and dot products of consecutive separation vectors, so swapping
the two curves produces bit-identical sums.

``field_line_winding`` integrates the pairwise winding of a probe line
against the lines started from all quadrature nodes of the lower disc.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embedding import map_curves
from .tracing import FieldLine, TracingError, trace_lines

TWO_PI = 2.0 * math.pi
SELF_DISTANCE = 1e-9
SINGULAR_DISTANCE = 1e-10

_WORKERS = [1]


def set_workers(n: int | None):
    """Threads used by ``winding_matrix`` (None or 0 means every core)."""
    _WORKERS[0] = max(1, int(n or os.cpu_count() or 1))


class SingularPairError(ValueError):
    """Two curves meet at a common height, so their relative angle is undefined."""


class GridMismatchError(ValueError):
    """Inputs were computed on different quadrature grids."""


# ---- quadrature grids ------------------------------------------------------


@dataclass(eq=False)
class QuadratureGrid:
    """Ring-based quadrature of the unit disc.

    ``kind="area"`` gives each ring an angular count proportional to its
    radius (cells of roughly equal shape); ``kind="polar"`` uses the same
    angular count ``n_theta`` on every ring, a tensor grid in (r, theta)
    suitable for finite differences. Nodes sit at ring mid-radii, so none is
    on the boundary circle. Weights are the exact areas of the annular sectors.
    """

    kind: str
    n_r: int
    n_theta: int | None
    r: np.ndarray
    theta: np.ndarray
    weights: np.ndarray
    ring: np.ndarray
    slot: np.ndarray

    @property
    def nodes(self):
        return np.column_stack([self.r * np.cos(self.theta), self.r * np.sin(self.theta)])

    @property
    def dr(self):
        return 1.0 / self.n_r

    @property
    def dtheta(self):
        if self.n_theta is None:
            raise GridMismatchError("area grids have no common angular spacing")
        return TWO_PI / self.n_theta

    def __len__(self):
        return len(self.r)

    def node(self, i, j):
        """Index of ring ``i``, angular slot ``j`` on a polar grid (j taken modulo n_theta)."""
        if self.kind != "polar":
            raise GridMismatchError("node(i, j) needs a polar grid")
        return i * self.n_theta + np.mod(j, self.n_theta)

    def params(self):
        return {"kind": self.kind, "n_r": self.n_r, "n_theta": self.n_theta}

    def same_as(self, other):
        return (self.kind == other.kind and self.n_r == other.n_r
                and self.n_theta == other.n_theta and len(self) == len(other))


def make_grid(n_r: int = 24, kind: str = "area", n_theta: int | None = None) -> QuadratureGrid:
    """Quadrature grid on the unit disc with ``n_r`` rings."""
    if n_r < 1:
        raise ValueError("n_r must be positive")
    edges = np.arange(n_r + 1) / n_r
    rings = []
    if kind == "polar":
        n_theta = n_theta or 4 * n_r
        counts = [n_theta] * n_r
        offset = 0.0
    elif kind == "area":
        counts = [max(3, int(round(TWO_PI * (i + 0.5)))) for i in range(n_r)]
        offset = 0.5
        n_theta = None
    else:
        raise ValueError("grid kind must be 'area' or 'polar'")
    r, th, w, ring, slot = [], [], [], [], []
    for i, m in enumerate(counts):
        rm = 0.5 * (edges[i] + edges[i + 1])
        area = 0.5 * (edges[i + 1] ** 2 - edges[i] ** 2) * TWO_PI / m
        j = np.arange(m)
        r.append(np.full(m, rm))
        th.append(TWO_PI * (j + offset) / m)
        w.append(np.full(m, area))
        ring.append(np.full(m, i))
        slot.append(j)
        rings.append(m)
    return QuadratureGrid(kind=kind, n_r=n_r, n_theta=n_theta, r=np.concatenate(r),
                          theta=np.concatenate(th), weights=np.concatenate(w),
                          ring=np.concatenate(ring), slot=np.concatenate(slot))


# ---- angles and pairwise winding ------------------------------------------


def angle(g, gt):
    """Relative angle ``atan2(g2 - gt2, g1 - gt1)`` in (-pi, pi]."""
    g = np.asarray(g, dtype=float)
    gt = np.asarray(gt, dtype=float)
    d = g - gt
    if np.any((d[..., 0] == 0) & (d[..., 1] == 0)):
        raise SingularPairError("coincident points have no relative angle")
    return np.arctan2(d[..., 1], d[..., 0])


def angle_increment(d0, d1):
    """Signed angle from separation d0 to d1, in (-pi, pi]; symmetric under d -> -d."""
    cross = d0[..., 0] * d1[..., 1] - d0[..., 1] * d1[..., 0]
    dot = d0[..., 0] * d1[..., 0] + d0[..., 1] * d1[..., 1]
    return np.arctan2(cross, dot)


def _ref(line: FieldLine):
    if line.ref is None:
        raise ValueError("line has no reference coordinates; map it first")
    return line.ref


def _section_as_function(ref, a, b, sigma):
    """(z, x1, x2) of a section ordered by increasing z."""
    seg = ref[a:b + 1]
    if sigma < 0:
        seg = seg[::-1]
    return seg[:, 2], seg[:, 0], seg[:, 1]


def _sweep(za, xa, ya, zb, xb, yb, lo, hi, max_depth=40):
    """Accumulated relative angle over [lo, hi], bisecting large increments."""
    zs = np.union1d(za[(za > lo) & (za < hi)], zb[(zb > lo) & (zb < hi)])
    zs = np.concatenate([[lo], zs, [hi]])

    def sep(z):
        return np.stack([np.interp(z, za, xa) - np.interp(z, zb, xb),
                         np.interp(z, za, ya) - np.interp(z, zb, yb)], axis=-1)

    d = sep(zs)
    if np.min(np.hypot(d[:, 0], d[:, 1])) < SINGULAR_DISTANCE:
        raise SingularPairError("curves intersect at a shared height")
    inc = angle_increment(d[:-1], d[1:])
    parts = list(inc)
    big = np.flatnonzero(np.abs(inc) > 0.5 * math.pi)
    for k in big:
        parts[k] = _bisect_sweep(sep, zs[k], zs[k + 1], d[k], d[k + 1], max_depth)
    return math.fsum(parts)


def _bisect_sweep(sep, z0, z1, d0, d1, depth):
    inc = float(angle_increment(d0, d1))
    if abs(inc) <= 0.5 * math.pi or depth == 0 or z1 - z0 <= 0:
        return inc
    zm = 0.5 * (z0 + z1)
    dm = sep(np.array([zm]))[0]
    if math.hypot(dm[0], dm[1]) < SINGULAR_DISTANCE:
        raise SingularPairError("curves intersect at a shared height")
    return (_bisect_sweep(sep, z0, zm, d0, dm, depth - 1)
            + _bisect_sweep(sep, zm, z1, dm, d1, depth - 1))


def pairwise_winding(a: FieldLine, b: FieldLine) -> float:
    """Winding number of two mapped curves, summed over their section pairs.

    Each pair of sections with nonzero directions contributes
    ``sigma_a * sigma_b / (2 pi)`` times the relative-angle change over
    the heights both sections cover. Level sections and pairs with no common
    height range contribute nothing.

    Raises
    ------
    SingularPairError
        If the curves come within 1e-10 of each other at a shared height.
    """
    ra, rb = _ref(a), _ref(b)
    terms = []
    for (i0, i1, sa) in a.sections:
        if sa == 0:
            continue
        za, xa, ya = _section_as_function(ra, i0, i1, sa)
        for (j0, j1, sb) in b.sections:
            if sb == 0:
                continue
            zb, xb, yb = _section_as_function(rb, j0, j1, sb)
            lo = max(za[0], zb[0])
            hi = min(za[-1], zb[-1])
            if not hi > lo:
                continue
            sweep = _sweep(za, xa, ya, zb, xb, yb, lo, hi)
            terms.append(sa * sb * sweep)
    return math.fsum(terms) / TWO_PI


# ---- bundles of traced node lines ------------------------------------------


@dataclass(eq=False)
class LineBundle:
    """Mapped field lines from a set of start points on D0.

    ``resampled`` holds reference (x1, x2) of monotone lines at the common
    heights ``levels``; rows of non-monotone lines are NaN and those lines
    go through the general section-pair routine.
    """

    starts: np.ndarray
    lines: list
    levels: np.ndarray
    resampled: np.ndarray
    monotone: np.ndarray
    tol: float = 1e-8
    cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.lines)

    def images(self):
        """Reference (x1, x2) where each line reaches the top cap."""
        return np.array([ln.ref[-1, :2] for ln in self.lines])

    def subset(self, idx):
        idx = np.asarray(idx)
        return LineBundle(starts=self.starts[idx], lines=[self.lines[i] for i in idx],
                          levels=self.levels, resampled=self.resampled[idx],
                          monotone=self.monotone[idx], tol=self.tol)


def trace_bundle(fld, emap, starts, tol=1e-8, n_levels=129) -> LineBundle:
    """Trace and map the lines from reference start points ``starts`` on D0.

    Raises
    ------
    TracingError
        Naming the first start point whose line could not be traced.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    y0 = emap.start_points(starts)
    lines = trace_lines(fld, y0, emap, tol=tol, raise_on_failure=False)
    bad = [i for i, ln in enumerate(lines) if ln is None]
    if bad:
        i = bad[0]
        raise TracingError(f"{len(bad)} node line(s) failed; first at node {i} "
                           f"(x1={starts[i, 0]:.6g}, x2={starts[i, 1]:.6g})",
                           {j: "tracing failed" for j in bad})
    lines = map_curves(emap, lines)
    levels = np.linspace(0.0, 1.0, n_levels)
    res = np.full((len(lines), n_levels, 2), np.nan)
    mono = np.zeros(len(lines), dtype=bool)
    for i, ln in enumerate(lines):
        if ln.monotone:
            z = ln.ref[:, 2]
            res[i, :, 0] = np.interp(levels, z, ln.ref[:, 0])
            res[i, :, 1] = np.interp(levels, z, ln.ref[:, 1])
            # pin the exact endpoints so the total sweep is set by them
            res[i, 0] = ln.ref[0, :2]
            res[i, -1] = ln.ref[-1, :2]
            mono[i] = True
    return LineBundle(starts=starts, lines=lines, levels=levels, resampled=res,
                      monotone=mono, tol=tol)


def _winding_block(probes, nodes, same, p0, p1):
    """Fast-path windings of probe rows p0:p1; returns the values and the pairs to redo."""
    d = probes.resampled[p0:p1, None, :, :] - nodes.resampled[None, :, :, :]
    inc = angle_increment(d[:, :, :-1], d[:, :, 1:])
    total = inc.sum(axis=2) / TWO_PI
    dist = np.hypot(d[..., 0], d[..., 1]).min(axis=2)
    big = np.abs(inc).max(axis=2) > 0.5 * math.pi
    block_same = same[p0:p1]
    bad = ~np.isfinite(total) | big
    close = (dist < SINGULAR_DISTANCE) & ~block_same & np.isfinite(dist)
    if np.any(close):
        pi, ni = np.argwhere(close)[0]
        raise SingularPairError(f"probe {p0 + pi} and node {ni} lines meet at a shared height")
    total[block_same] = 0.0
    return total, [(p0 + pi, ni) for pi, ni in np.argwhere(bad & ~block_same)]


def winding_matrix(probes: LineBundle, nodes: LineBundle, chunk_bytes=32e6, workers=None):
    """Pairwise winding of every probe line against every node line.

    Pairs whose start points are within 1e-9 of each other get 0. Pairs of
    monotone lines use the common height grid; any pair with an increment
    above pi/2 there, or involving a non-monotone line, is recomputed by
    ``pairwise_winding``. Blocks of probe rows run on ``workers`` threads
    (default from ``set_workers``); each block fills only its own rows, so
    the result does not depend on the thread count.
    """
    P, N = len(probes), len(nodes)
    out = np.zeros((P, N))
    sdist = np.hypot(probes.starts[:, None, 0] - nodes.starts[None, :, 0],
                     probes.starts[:, None, 1] - nodes.starts[None, :, 1])
    same = sdist < SELF_DISTANCE
    M = len(nodes.levels)
    step = max(1, int(chunk_bytes // (N * M * 2 * 8 * 3)))
    blocks = [(p0, min(P, p0 + step)) for p0 in range(0, P, step)]
    workers = workers or _WORKERS[0]
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _winding_block(probes, nodes, same, *b), blocks))
    else:
        parts = [_winding_block(probes, nodes, same, *b) for b in blocks]
    slow = []
    for (p0, p1), (total, redo) in zip(blocks, parts):
        out[p0:p1] = total
        slow += redo
    for pi, ni in slow:
        out[pi, ni] = pairwise_winding(probes.lines[pi], nodes.lines[ni])
    return out


# ---- distributions -----------------------------------------------------------


@dataclass(eq=False)
class WindingDistribution:
    """Per-probe integrated winding.

    ``points`` are the probe start points on D0 and ``node_index`` their grid
    node indices (-1 for off-grid probes). ``kind`` is ``"Lv"``, ``"Wv"`` or ``"Ab"``.
    """

    grid: QuadratureGrid
    values: np.ndarray
    kind: str
    points: np.ndarray
    node_index: np.ndarray
    meta: dict = field(default_factory=dict)

    def full(self):
        """Values on every grid node (NaN where no probe was evaluated)."""
        out = np.full(len(self.grid), np.nan)
        on = self.node_index >= 0
        out[self.node_index[on]] = self.values[on]
        return out


def _resolve_probe(grid, nodes_bundle, probe, fld, emap, tol):
    if probe is None:
        idx = np.arange(len(grid))
        return nodes_bundle, idx
    probe = np.asarray(probe)
    if probe.ndim == 1 and np.issubdtype(probe.dtype, np.integer):
        return nodes_bundle.subset(probe), probe.astype(np.int64)
    pts = np.atleast_2d(probe).astype(float)
    bundle = trace_bundle(fld, emap, pts, tol=tol, n_levels=len(nodes_bundle.levels))
    return bundle, np.full(len(pts), -1, dtype=np.int64)


def weighted_winding(fld, emap, grid: QuadratureGrid, w=None, probe=None, tol=1e-8,
                     bundle: LineBundle | None = None, kind="Wv") -> WindingDistribution:
    """Integral over D0 of ``w(node) * L(probe line, node line)``.

    ``w`` may be None (unit weight), an array over the grid nodes or a callable
    of the (n, 2) node array. ``probe`` may be None (all nodes), an integer
    index array into the grid or an (n, 2) array of start points.
    """
    if bundle is None:
        bundle = trace_bundle(fld, emap, grid.nodes, tol=tol)
    elif len(bundle) != len(grid):
        raise GridMismatchError("line bundle does not match the grid")
    if w is None:
        wn = np.ones(len(grid))
    elif callable(w):
        wn = np.asarray(w(grid.nodes), dtype=float)
    else:
        wn = np.asarray(w, dtype=float)
    if wn.shape != (len(grid),) or not np.all(np.isfinite(wn)):
        raise ValueError("weights must be finite, one per grid node")
    pb, idx = _resolve_probe(grid, bundle, probe, fld, emap, tol)
    key = None if probe is not None and idx[0] < 0 else idx.tobytes()
    W = bundle.cache.get(key) if key is not None else None
    if W is None:
        W = winding_matrix(pb, bundle)
        if key is not None:
            bundle.cache[key] = W
    values = W @ (grid.weights * wn)
    return WindingDistribution(grid=grid, values=values, kind=kind, points=pb.starts,
                               node_index=idx)


def field_line_winding(fld, emap, grid: QuadratureGrid, probe=None, tol=1e-8,
                       bundle: LineBundle | None = None) -> WindingDistribution:
    """Field line winding: unit-weight ``weighted_winding``."""
    return weighted_winding(fld, emap, grid, w=None, probe=probe, tol=tol, bundle=bundle,
                            kind="Lv")


# ---- gradient identity --------------------------------------------------------


@dataclass
class GradientResidual:
    """Finite-difference check of the gradient of L_v against the top-cap map.

    Arrays are per evaluated stencil centre: ``lhs`` and ``rhs`` hold the
    (d/dr, d/dtheta) components, ``residual`` their difference.
    """

    centers: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    max_abs: float
    rms: float
    curvature: float
    spacing: float


def stencil_indices(grid: QuadratureGrid, targets):
    """Grid nodes nearest to (r, theta) targets together with their four FD neighbours."""
    if grid.kind != "polar":
        raise GridMismatchError("finite differences need a polar grid")
    out = []
    for r, th in np.atleast_2d(targets):
        i = int(np.clip(round(r * grid.n_r - 0.5), 1, grid.n_r - 2))
        j = int(round(th / grid.dtheta))
        out += [grid.node(i, j), grid.node(i + 1, j), grid.node(i - 1, j),
                grid.node(i, j + 1), grid.node(i, j - 1)]
    return np.unique(np.array(out, dtype=np.int64))


def gradient_identity_residual(dist: WindingDistribution, mapping) -> GradientResidual:
    """Compare finite-difference derivatives of L_v with the pulled-back one-form.

    ``mapping`` is a ``DiscreteMapping`` at level 1 on the same polar grid.
    At every node whose four neighbours carry L_v values the residual
    components are::

        dL/dr  - (f_r^2 / 2) d f_theta / dr
        dL/dth - ((f_r^2 / 2) d f_theta / dth - r^2 / 2)
    """
    grid = dist.grid
    if grid.kind != "polar":
        raise GridMismatchError("the gradient check needs a polar grid")
    nodes = np.asarray(mapping.grid)
    if nodes.shape != (len(grid), 2) or not np.allclose(nodes, grid.nodes, atol=1e-12, rtol=0):
        raise GridMismatchError("mapping was not computed on the distribution's grid")
    if abs(mapping.level - 1.0) > 1e-12:
        raise GridMismatchError("mapping must be taken at level 1")
    L = dist.full().reshape(grid.n_r, grid.n_theta)
    img = np.asarray(mapping.images).reshape(grid.n_r, grid.n_theta, 2)
    fr = np.hypot(img[..., 0], img[..., 1])
    fth = np.arctan2(img[..., 1], img[..., 0])
    dr, dth = grid.dr, grid.dtheta
    rr = grid.r.reshape(grid.n_r, grid.n_theta)

    def wrap(a):
        return np.angle(np.exp(1j * a))

    centers, lhs, rhs, curv = [], [], [], []
    for i in range(1, grid.n_r - 1):
        for j in range(grid.n_theta):
            jp, jm = (j + 1) % grid.n_theta, (j - 1) % grid.n_theta
            vals = [L[i, j], L[i + 1, j], L[i - 1, j], L[i, jp], L[i, jm]]
            if not np.all(np.isfinite(vals)):
                continue
            dLr = (L[i + 1, j] - L[i - 1, j]) / (2 * dr)
            dLt = (L[i, jp] - L[i, jm]) / (2 * dth)
            dfr = wrap(fth[i + 1, j] - fth[i - 1, j]) / (2 * dr)
            dft = wrap(fth[i, jp] - fth[i, jm]) / (2 * dth)
            half = 0.5 * fr[i, j] ** 2
            lhs.append((dLr, dLt))
            rhs.append((half * dfr, half * dft - 0.5 * rr[i, j] ** 2))
            centers.append(grid.node(i, j))
            curv.append(max(abs(L[i + 1, j] - 2 * L[i, j] + L[i - 1, j]) / dr ** 2,
                            abs(L[i, jp] - 2 * L[i, j] + L[i, jm]) / (rr[i, j] * dth) ** 2))
    if not centers:
        raise GridMismatchError("no complete finite-difference stencil in the distribution")
    lhs = np.array(lhs)
    rhs = np.array(rhs)
    res = lhs - rhs
    return GradientResidual(centers=np.array(centers), lhs=lhs, rhs=rhs, residual=res,
                            max_abs=float(np.abs(res).max()), rms=float(np.sqrt(np.mean(res ** 2))),
                            curvature=float(max(curv)), spacing=dr)


# ---- quadrature oracle for the disc integral of the angle gradient ----------


def appendix_b_oracle(r: float, theta: float, quad_n: int = 64, components: str = "orthonormal"):
    """Disc averages of the derivatives of the relative angle w.r.t. the moving point.

    Computes ``(1/2pi) * integral over the unit disc of dTheta/dr`` and of
    the angular derivative, where ``Theta(x0, x) = atan2(x0_2 - x_2, x0_1 - x_1)``
    and ``x0 = (r cos theta, r sin theta)``. The integral is taken in polar
    coordinates centred on ``x0``, which removes the 1/rho singularity:
    Gauss-Legendre in the distance, trapezoid in the direction.

    ``components="orthonormal"`` returns the angular part per unit length
    ``(1/r) dTheta/dtheta`` (analytically r/2); ``"coordinate"`` returns the
    plain ``dTheta/dtheta`` integral (analytically r^2/2).
    """
    if not 0.0 <= r < 1.0:
        raise ValueError("r must lie in [0, 1)")
    if components not in ("orthonormal", "coordinate"):
        raise ValueError("components must be 'orthonormal' or 'coordinate'")
    g, gw = np.polynomial.legendre.leggauss(quad_n)
    m = 2 * quad_n
    psi = TWO_PI * np.arange(m) / m
    cp = np.cos(psi - theta)
    rho_max = -r * cp + np.sqrt(1.0 - (r * np.sin(psi - theta)) ** 2)
    rho = 0.5 * (g[None, :] + 1.0) * rho_max[:, None]
    w = 0.5 * gw[None, :] * rho_max[:, None] * (TWO_PI / m)
    x0 = np.array([r * math.cos(theta), r * math.sin(theta)])
    x1 = x0[0] + rho * np.cos(psi)[:, None]
    x2 = x0[1] + rho * np.sin(psi)[:, None]
    d1, d2 = x0[0] - x1, x0[1] - x2
    q = d1 * d1 + d2 * d2
    # gradient of atan2(d2, d1) with respect to x0
    g1, g2 = -d2 / q, d1 / q
    er = np.array([math.cos(theta), math.sin(theta)])
    et = np.array([-math.sin(theta), math.cos(theta)])
    jac = rho  # area element in the shifted polar coordinates
    d_r = np.sum(w * jac * (g1 * er[0] + g2 * er[1])) / TWO_PI
    d_unit = np.sum(w * jac * (g1 * et[0] + g2 * et[1])) / TWO_PI
    if components == "coordinate":
        return float(d_r), float(r * d_unit)
    return float(d_r), float(d_unit)


__all__ = [
    "QuadratureGrid", "make_grid", "angle", "angle_increment", "pairwise_winding",
    "SingularPairError", "GridMismatchError", "set_workers", "LineBundle", "trace_bundle",
    "winding_matrix",
    "WindingDistribution", "weighted_winding", "field_line_winding", "GradientResidual",
    "stencil_indices", "gradient_identity_residual", "appendix_b_oracle",
]
