"""
Field-line integration from S0 to S1.

Lines are integrated in arclength along the unit direction field ``v/|v|``
with an embedded Dormand-Prince 5(4) pair and PI step control. Many lines
are advanced together; each carries its own step size. The foliation value
phi is recorded per sample and the final step is cut by a root find so the
last sample sits on the target level.

The foliation is supplied by an embedding object exposing ``phi(y)``,
``grad_phi(y)``, ``project(y)``, ``length_scale`` and ``domain``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

LEVEL_TOL = 1e-8
LAND_TOL = 1e-13
FLAT_SLOPE = 1e-10

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class TracingError(RuntimeError):
    """Integration failed for one or more start points."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or {}


@dataclass(eq=False)
class FieldLine:
    """Polyline integral curve with foliation values and sigma sections.

    ``sections`` holds ``(first, last, sigma)`` sample ranges, inclusive,
    with adjacent sections sharing their boundary sample. ``ref`` carries
    reference-cylinder coordinates once the line has been mapped.
    """

    points: np.ndarray
    z: np.ndarray
    tol: float = 1e-8
    sections: list = field(default_factory=list)
    ref: np.ndarray | None = None

    @property
    def start(self):
        return self.points[0]

    @property
    def end(self):
        return self.points[-1]

    def __len__(self):
        return len(self.z)

    @property
    def monotone(self):
        return len(self.sections) == 1 and self.sections[0][2] == 1

    def arclength(self):
        return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(self.points, axis=0), axis=1))])


@dataclass
class DiscreteMapping:
    """Images at ``level`` (reference x1, x2) of lines started at ``grid`` nodes."""

    grid: np.ndarray
    images: np.ndarray
    level: float
    failures: dict = field(default_factory=dict)


def direction_field(fld, sign=1.0):
    def fn(y):
        v = fld(y)
        n = np.linalg.norm(v, axis=1, keepdims=True)
        if not np.all(n > 0):
            raise FloatingPointError("field vanishes at a traced point")
        return sign * v / n
    return fn


def dp_step(fn, y, h, k1=None):
    """One Dormand-Prince step; returns (y5, error vector, derivative at y5)."""
    k = [fn(y) if k1 is None else k1]
    hh = h[:, None]
    for i in range(1, 7):
        yi = y + hh * sum(a * kj for a, kj in zip(_A[i], k) if a != 0.0)
        k.append(fn(yi))
    y5 = y + hh * sum(b * kj for b, kj in zip(_B, k) if b != 0.0)
    err = hh * sum(e * kj for e, kj in zip(_E, k) if e != 0.0)
    return y5, err, k[6]


def trace_lines(fld, starts, emap, tol=1e-8, direction=1, level=None, max_steps=20000,
                dphi_max=0.01, dangle_max=0.1, exit_tol=0.05, split=True,
                raise_on_failure=True, hmax=0.1):
    """Trace many field lines at once.

    Parameters
    ----------
    fld : callable
        Field evaluator, (n, 3) -> (n, 3).
    starts : (n, 3) array
        Start points, on S0 for forward tracing.
    emap : embedding object
        Supplies phi, the side projection and the length scale.
    tol : float
        Dimensionless local error tolerance (scaled by ``emap.length_scale``).
    direction : {1, -1}
        Follow v (towards S1) or -v (towards S0).
    level : float, optional
        Foliation level to land on; defaults to 1 forwards and 0 backwards.
    exit_tol : float
        Total reference-radius overshoot removed by projections onto the side
        after which a line counts as having left through the side.

    Returns
    -------
    list of FieldLine (``None`` for failed lines when not raising).
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n = len(starts)
    if level is None:
        level = 1.0 if direction > 0 else 0.0
    sgn = 1.0 if direction > 0 else -1.0
    fn = direction_field(fld, sgn)
    scale = emap.length_scale
    atol = tol * scale
    dom = emap.domain

    y = starts.copy()
    phi = emap.phi(y)
    h = np.full(n, 0.01 * scale)
    hmax = hmax * scale
    dphi_max = np.inf if dphi_max is None else dphi_max
    err_prev = np.ones(n)
    pushed = np.zeros(n)  # accumulated projection back onto the side, in reference radius
    steps = np.zeros(n, dtype=np.int64)
    rec_idx = [np.arange(n)]
    rec_pts = [y.copy()]
    rec_phi = [phi.copy()]
    failures = {}
    active = np.arange(n)
    done_at = sgn * (phi - level) >= -LEVEL_TOL
    active = active[~done_at]
    k1 = None
    ref_xy = dom.inverse(y)[:, :2] if dom is not None else None

    while active.size:
        ya = y[active]
        ha = h[active]
        try:
            y5, err, k7 = dp_step(fn, ya, ha, None if k1 is None else k1)
        except FloatingPointError as exc:
            for i in active:
                failures[int(i)] = str(exc)
            break
        errn = np.max(np.abs(err), axis=1) / atol
        phin = emap.phi(y5)
        ok = errn <= 1.0
        # ratio of each step-size cap to the motion it produced (>1 means within the cap)
        room = np.full(len(active), np.inf)
        dphi = np.abs(phin - phi[active])
        room = np.minimum(room, dphi_max / np.maximum(dphi, 1e-300))
        if ref_xy is not None and dangle_max:
            xy_new = dom.inverse(y5)[:, :2]
            xy_old = ref_xy[active]
            rho = np.maximum(np.hypot(xy_old[:, 0], xy_old[:, 1]), 0.05)
            dang = np.hypot(*(xy_new - xy_old).T) / rho
            room = np.minimum(room, dangle_max / np.maximum(dang, 1e-300))
        cap = room < 1.0
        accept = ok & ~cap
        # PI controller on the error, limited so the next step stays inside the caps
        errc = np.maximum(errn, 1e-10)
        fac = np.where(ok, 0.9 * errc ** (-0.7 / 5) * err_prev[active] ** (0.4 / 5),
                       np.maximum(0.2, 0.9 * errc ** (-1 / 5)))
        fac = np.minimum(np.clip(fac, 0.2, 5.0), 0.9 * room)
        newh = np.minimum(ha * fac, hmax)
        steps[active] += 1
        acc = active[accept]
        if acc.size:
            ynew = y5[accept]
            phinew = phin[accept]
            landed = sgn * (phinew - level) >= -LAND_TOL
            if np.any(landed):
                li = np.flatnonzero(landed)
                far = li[sgn * (phinew[li] - level) > LAND_TOL]
                if far.size:
                    ynew[far] = _land(fn, y[acc[far]], ha[accept][far], emap, level, sgn)
                phinew[li] = level
            ynew, rho_before = emap.project(ynew)
            pushed[acc] += np.maximum(rho_before - 1.0, 0.0)
            escaped = pushed[acc] > exit_tol
            for j in np.flatnonzero(escaped):
                failures[int(acc[j])] = "left the domain through the side boundary"
            y[acc] = ynew
            phi[acc] = phinew
            err_prev[acc] = np.maximum(errn[accept], 1e-4)
            if ref_xy is not None:
                ref_xy[acc] = dom.inverse(ynew)[:, :2]
            rec_idx.append(acc)
            rec_pts.append(ynew.copy())
            rec_phi.append(phinew.copy())
            finished = landed | escaped
        else:
            finished = np.zeros(0, dtype=bool)
        h[active] = newh
        over = steps[active] >= max_steps
        for i in active[over]:
            failures.setdefault(int(i), f"step cap {max_steps} exceeded")
        drop = np.zeros(len(active), dtype=bool)
        drop[np.flatnonzero(accept)[finished]] = True
        drop |= over
        # first-same-as-last derivative for accepted steps
        keep = ~drop
        k1_new = np.where(accept[:, None], k7, fn(ya) if k1 is None else k1)
        active = active[keep]
        k1 = k1_new[keep] if active.size else None
        if failures and raise_on_failure:
            break

    if failures and raise_on_failure:
        first = min(failures)
        raise TracingError(f"tracing failed for {len(failures)} start point(s); "
                           f"first: index {first}: {failures[first]}", failures)

    idx = np.concatenate(rec_idx)
    pts = np.concatenate(rec_pts)
    phs = np.concatenate(rec_phi)
    order = np.argsort(idx, kind="stable")
    idx, pts, phs = idx[order], pts[order], phs[order]
    bounds = np.searchsorted(idx, np.arange(n + 1))
    lines = []
    for i in range(n):
        if i in failures:
            lines.append(None)
            continue
        a, b = bounds[i], bounds[i + 1]
        line = FieldLine(points=pts[a:b], z=phs[a:b], tol=tol)
        if split:
            line = split_monotone(line, fld=fld, emap=emap)
        lines.append(line)
    return lines


def _land(fn, y0, h, emap, level, sgn, iters=60, gtol=LAND_TOL):
    """Safeguarded Newton iteration on the step length so phi(step(y0, s)) == level.

    g(s) = sgn * (phi - level) is bracketed by [lo, hi] with g(lo) < 0 <= g(hi);
    Newton updates use dphi/ds along the direction field and fall back to
    bisection whenever they leave the bracket. Converged lines are frozen.
    """
    n = len(y0)
    lo = np.zeros(n)
    hi = h.copy()
    ys = y0.copy()
    gs = sgn * (emap.phi(y0) - level)
    best = y0.copy()
    s = lo.copy()
    live = np.ones(n, dtype=bool)
    for _ in range(iters):
        idx = np.flatnonzero(live)
        if not idx.size:
            break
        slope = sgn * np.einsum("ij,ij->i", emap.grad_phi(ys[idx]), fn(ys[idx]))
        with np.errstate(divide="ignore", invalid="ignore"):
            snew = s[idx] - gs[idx] / slope
        a, b = lo[idx], hi[idx]
        bad = ~((snew > a) & (snew < b))
        snew[bad] = 0.5 * (a[bad] + b[bad])
        yn, _, _ = dp_step(fn, y0[idx], snew)
        gn = sgn * (emap.phi(yn) - level)
        s[idx], ys[idx], gs[idx], best[idx] = snew, yn, gn, yn
        up = gn >= 0
        hi[idx[up]] = snew[up]
        lo[idx[~up]] = snew[~up]
        done = (np.abs(gn) <= gtol) | (hi[idx] - lo[idx] <= 1e-15 * np.maximum(hi[idx], 1e-300))
        live[idx[done]] = False
    return best


def trace_field_line(fld, start, emap, tol=1e-8, **kw) -> FieldLine:
    """Trace one field line from a point on S0 to S1."""
    return trace_lines(fld, np.atleast_2d(start), emap, tol=tol, **kw)[0]


def _zdot(fld, emap, y):
    v = fld(y)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return np.einsum("ij,ij->i", emap.grad_phi(y), v)


def _refine_turn(fld, emap, y0, s_len, want_sign, iters=60):
    """Bisect a sub-step length where dz/ds changes sign, starting from y0."""
    fn = direction_field(fld)
    lo, hi = 0.0, s_len
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ym, _, _ = dp_step(fn, y0[None], np.array([mid]))
        if np.sign(_zdot(fld, emap, ym)[0]) == want_sign:
            lo = mid
        else:
            hi = mid
    ym, _, _ = dp_step(fn, y0[None], np.array([0.5 * (lo + hi)]))
    return ym[0]


def split_monotone(line: FieldLine, fld=None, emap=None) -> FieldLine:
    """Split a line into sections where z rises (+1), falls (-1) or is level (0).

    Turning points found by a sign change of successive z increments are
    refined by bisection on dz/ds when the field and embedding are given,
    otherwise by a parabola through the neighbouring samples. Refined turning
    samples are inserted into the line.
    """
    pts, z = line.points, line.z
    if len(z) < 2:
        return replace(line, sections=[(0, len(z) - 1, 1)])
    ds = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    dz = np.diff(z)
    sign = np.where(np.abs(dz) <= FLAT_SLOPE * np.maximum(ds, 1e-300), 0, np.sign(dz)).astype(int)
    # zero-length steps inherit the neighbouring sign
    for i in np.flatnonzero(ds == 0):
        sign[i] = sign[i - 1] if i > 0 else 0
    new_pts = [pts[0]]
    new_z = [z[0]]
    for k in range(len(dz)):
        if k > 0 and sign[k] != 0 and sign[k - 1] != 0 and sign[k] != sign[k - 1]:
            # extremum between samples k-1 and k+1
            tp = _turning_point(pts, z, k, sign[k - 1], fld, emap)
            if tp is not None:
                at = len(new_pts) if tp[2] else len(new_pts) - 1
                new_pts.insert(at, tp[0])
                new_z.insert(at, tp[1])
        new_pts.append(pts[k + 1])
        new_z.append(z[k + 1])
    new_pts = np.array(new_pts)
    new_z = np.array(new_z)
    return replace(line, points=new_pts, z=new_z, sections=sections_from_z(new_pts, new_z),
                   ref=None if line.ref is None or len(new_z) != len(line.z) else line.ref)


def sections_from_z(points, z):
    """Maximal runs of equal sign of the z increments, as (first, last, sigma)."""
    if len(z) < 2:
        return [(0, len(z) - 1, 1)]
    ds = np.linalg.norm(np.diff(points, axis=0), axis=1)
    dz = np.diff(z)
    sgn = np.where(np.abs(dz) <= FLAT_SLOPE * np.maximum(ds, 1e-300), 0, np.sign(dz)).astype(int)
    # zero-length steps (repeated samples) carry no direction of their own
    for i in np.flatnonzero(ds <= 1e-14):
        sgn[i] = sgn[i - 1] if i > 0 else (sgn[1] if len(sgn) > 1 else 1)
    sections = []
    start = 0
    for k in range(1, len(sgn) + 1):
        if k == len(sgn) or sgn[k] != sgn[start]:
            sections.append((start, k, int(sgn[start])))
            start = k
    return sections


def _turning_point(pts, z, k, prev_sign, fld, emap):
    """Refined extremum near sample k as (point, z, lies_after_sample_k).

    Returns None when no extremum distinct from sample k is found.
    """
    if fld is not None and emap is not None and hasattr(emap, "grad_phi"):
        zd = _zdot(fld, emap, pts[k:k + 1])[0]
        after = bool(np.sign(zd) == prev_sign)
        if after:
            y0, s_len = pts[k], np.linalg.norm(pts[k + 1] - pts[k])
        else:
            y0, s_len = pts[k - 1], np.linalg.norm(pts[k] - pts[k - 1])
        yt = _refine_turn(fld, emap, y0, s_len, prev_sign)
        zt = float(emap.phi(yt[None])[0])
        return yt, zt, after
    s = np.array([0.0, np.linalg.norm(pts[k] - pts[k - 1]),
                  np.linalg.norm(pts[k] - pts[k - 1]) + np.linalg.norm(pts[k + 1] - pts[k])])
    c = np.polyfit(s, z[k - 1:k + 2], 2)
    if c[0] == 0:
        return None
    st = -c[1] / (2 * c[0])
    if not s[0] < st < s[2] or np.isclose(st, s[1]):
        return None
    after = bool(st > s[1])
    if after:
        t = (st - s[1]) / (s[2] - s[1])
        p = pts[k] + t * (pts[k + 1] - pts[k])
    else:
        t = (st - s[0]) / (s[1] - s[0])
        p = pts[k - 1] + t * (pts[k] - pts[k - 1])
    return p, float(np.polyval(c, st)), after


def level_crossing(line: FieldLine, level: float):
    """Point where the line first reaches ``level`` (linear between samples)."""
    z = line.z
    if level <= z[0]:
        return line.points[0]
    k = int(np.argmax(z >= level - LEVEL_TOL))
    if z[k] < level - LEVEL_TOL:
        raise TracingError("line never reaches the requested level")
    if k == 0 or abs(z[k] - level) <= LEVEL_TOL:
        return line.points[k]
    t = (level - z[k - 1]) / (z[k] - z[k - 1])
    return line.points[k - 1] + t * (line.points[k] - line.points[k - 1])


def field_line_mapping(fld, grid_nodes, emap, level=1.0, tol=1e-8, lines=None) -> DiscreteMapping:
    """Reference (x1, x2) positions where lines from D0 nodes first reach ``level``.

    Non-monotone lines are rejected and reported in ``failures``.
    """
    nodes = np.asarray(grid_nodes, dtype=float)
    if level <= 0.0:
        return DiscreteMapping(grid=nodes, images=nodes.copy(), level=float(level))
    if lines is None:
        lines = trace_lines(fld, emap.start_points(nodes), emap, tol=tol, raise_on_failure=False)
    images = np.full((len(nodes), 2), np.nan)
    failures = {}
    pts = []
    which = []
    for i, ln in enumerate(lines):
        if ln is None:
            failures[i] = "tracing failed"
        elif not ln.monotone:
            failures[i] = "line is not monotone in z"
        else:
            pts.append(level_crossing(ln, level))
            which.append(i)
    if pts:
        ref = emap.to_reference(np.array(pts))
        images[which] = ref[:, :2]
    return DiscreteMapping(grid=nodes, images=images, level=float(level), failures=failures)


def write_lines_csv(path, lines):
    """CSV with columns line_id, sample_index, y1, y2, y3, z (+ x1, x2, zref when mapped)."""
    mapped = all(ln is not None and ln.ref is not None for ln in lines)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["line_id", "sample_index", "y1", "y2", "y3", "z"]
        if mapped:
            head += ["x1", "x2", "zref"]
        w.writerow(head)
        for lid, ln in enumerate(lines):
            if ln is None:
                continue
            for k in range(len(ln)):
                row = [lid, k] + [repr(float(v)) for v in ln.points[k]] + [repr(float(ln.z[k]))]
                if mapped:
                    row += [repr(float(v)) for v in ln.ref[k]]
                w.writerow(row)


def read_lines_csv(path):
    rows = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        for rec in r:
            rows.setdefault(int(rec["line_id"]), []).append(rec)
    lines = []
    for lid in sorted(rows):
        recs = sorted(rows[lid], key=lambda d: int(d["sample_index"]))
        pts = np.array([[float(d["y1"]), float(d["y2"]), float(d["y3"])] for d in recs])
        z = np.array([float(d["z"]) for d in recs])
        ref = None
        if "x1" in recs[0]:
            ref = np.array([[float(d["x1"]), float(d["x2"]), float(d["zref"])] for d in recs])
        lines.append(FieldLine(points=pts, z=z, ref=ref))
    return lines


__all__ = [
    "FieldLine", "DiscreteMapping", "TracingError", "trace_lines", "trace_field_line",
    "split_monotone", "sections_from_z", "field_line_mapping", "level_crossing", "write_lines_csv",
    "read_lines_csv", "dp_step", "direction_field",
]
