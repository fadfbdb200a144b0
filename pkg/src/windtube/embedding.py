"""
Inverse embedding of a tubular domain onto the reference cylinder.

A point ``y`` is sent to ``(x1, x2, z)`` where ``z = phi(y)`` and ``(x1, x2)``
are the harmonic surface coordinates of the foot point reached by following
``grad(phi)`` backwards to S0. Two implementations share one interface:

``CylinderEmbedding``
    closed form for straight circular cylinders, where phi is linear in the
    axial coordinate and the surface coordinates are the scaled identity;
``EmbeddingMap``
    the finite element construction for any meshed domain, either tracing
    every query (``exact``) or interpolating cached vertex values (``bulk``).

The interface used by the tracer and the winding code is ``phi``,
``grad_phi``, ``project``, ``to_reference``, ``start_points``,
``surface_jacobian``, ``s0_normal``, ``domain`` and ``length_scale``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .fields import BraidedField
from .geometry import TubularDomain
from .harmonic import (SurfaceCoords, ScalarFieldP1, VectorFieldNodal, gradient_field, solve_phi,
                       solve_surface_coords)
from .mesh import Mesh, generate_mesh
from .tracing import FieldLine, TracingError, sections_from_z, trace_lines

EMBED_MODES = ("auto", "analytic", "exact", "bulk")


class MappingError(RuntimeError):
    """Reference coordinates could not be computed for some samples.

    ``partial`` holds the reference coordinates computed so far (NaN rows for
    failed samples) and ``failures`` maps sample index to a message.
    """

    def __init__(self, message, partial=None, failures=None):
        super().__init__(message)
        self.partial = partial
        self.failures = failures or {}


class CylinderEmbedding:
    """Closed-form inverse embedding of a straight circular cylinder."""

    mode = "analytic"

    def __init__(self, domain: TubularDomain):
        if domain.kind != "straight-cylinder":
            raise ValueError("CylinderEmbedding needs a straight-cylinder domain")
        self.domain = domain
        self.R = float(domain.radius_coeffs[0])
        self.H = float(domain.axial_length)
        self.u_field = BraidedField(kind="harmonic-u", evaluate=self._u, domain=domain,
                                    solenoidal=True)

    def _u(self, y):
        out = np.zeros_like(y)
        out[:, 2] = 1.0 / self.H
        return out

    @property
    def length_scale(self):
        return self.domain.length_scale

    def phi(self, y):
        return np.atleast_2d(y)[:, 2] / self.H

    def grad_phi(self, y):
        return self._u(np.atleast_2d(y))

    def project(self, y):
        return self.domain.project_inside(y)

    def surface_coords_at(self, p):
        return np.atleast_2d(p)[:, :2] / self.R

    def to_reference(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.column_stack([y[:, 0] / self.R, y[:, 1] / self.R, y[:, 2] / self.H])

    def start_points(self, nodes):
        nodes = np.atleast_2d(nodes)
        return np.column_stack([self.R * nodes[:, 0], self.R * nodes[:, 1], np.zeros(len(nodes))])

    def surface_jacobian(self, nodes):
        """Area of S0 per unit area of the reference disc."""
        return np.full(len(np.atleast_2d(nodes)), self.R ** 2)

    def s0_normal(self, nodes):
        return np.tile([0.0, 0.0, 1.0], (len(np.atleast_2d(nodes)), 1))


@dataclass(eq=False)
class EmbeddingMap:
    """Finite element inverse embedding.

    Attributes
    ----------
    phi_field, u, surface : solved potential, its recovered gradient and the
        harmonic coordinates on S0.
    mode : ``"exact"`` traces every query back to S0; ``"bulk"`` interpolates
        reference coordinates cached at mesh vertices.
    tol : tracing tolerance of the foot-point traces.
    """

    mesh: Mesh
    phi_field: ScalarFieldP1
    u: VectorFieldNodal
    surface: SurfaceCoords
    mode: str = "exact"
    tol: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("exact", "bulk"):
            raise ValueError("mode must be 'exact' or 'bulk'")
        self.domain = self.mesh.domain
        self.u_field = BraidedField(kind="harmonic-u", evaluate=self.u, domain=self.domain,
                                    discretized=True, solenoidal=True)
        self._grad = self.phi_field.element_gradients()
        sc = self.surface
        pts = sc.points
        self._s0_tri = pts[sc.triangles]
        self._s0_tree = cKDTree(self._s0_tri.mean(axis=1))
        c = sc.coords[sc.triangles]
        self._d0_tri = c
        self._d0_tree = cKDTree(c.mean(axis=1))
        self._vertex_ref = None

    @property
    def length_scale(self):
        return self.domain.length_scale if self.domain is not None else 1.0

    # ---- foliation ------------------------------------------------------

    def phi(self, y):
        """P1 potential; linear extrapolation from the nearest element outside the mesh."""
        return self.mesh.interpolate(self.phi_field.values, np.atleast_2d(y), clamp=False)[0]

    def grad_phi(self, y):
        idx, _, _ = self.mesh.locate(np.atleast_2d(y))
        return self._grad[idx]

    def project(self, y):
        if self.domain is None:
            return y, np.zeros(len(y))
        return self.domain.project_inside(y)

    # ---- S0 <-> D0 ---------------------------------------------------------

    def _s0_locate(self, p, k=8):
        """Containing S0 triangle and barycentrics of the in-plane projection."""
        _, cand = self._s0_tree.query(p, k=min(k, len(self._s0_tri)))
        cand = np.asarray(cand).reshape(len(p), -1)
        tri = self._s0_tri[cand]  # (n, k, 3, 3)
        a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
        bary = _bary3(p[:, None, :], a, b, c)
        score = bary.min(axis=2)
        best = np.argmax(score, axis=1)
        r = np.arange(len(p))
        return cand[r, best], bary[r, best]

    def surface_coords_at(self, p):
        """Harmonic (x1, x2) of points on S0 (P1 interpolation on the cap)."""
        p = np.atleast_2d(p)
        t, bary = self._s0_locate(p)
        bary = np.clip(bary, 0.0, None)
        bary /= bary.sum(axis=1, keepdims=True)
        c = self._d0_tri[t]
        return np.einsum("nk,nkd->nd", bary, c)

    def _d0_locate(self, nodes, k=8):
        _, cand = self._d0_tree.query(nodes, k=min(k, len(self._d0_tri)))
        cand = np.asarray(cand).reshape(len(nodes), -1)
        tri = self._d0_tri[cand]
        bary = _bary2(nodes[:, None, :], tri[..., 0, :], tri[..., 1, :], tri[..., 2, :])
        score = bary.min(axis=2)
        best = np.argmax(score, axis=1)
        r = np.arange(len(nodes))
        return cand[r, best], bary[r, best]

    def start_points(self, nodes):
        """Points of S0 whose surface coordinates are ``nodes``."""
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        t, bary = self._d0_locate(nodes)
        bary = np.clip(bary, 0.0, None)
        bary /= bary.sum(axis=1, keepdims=True)
        return np.einsum("nk,nkd->nd", bary, self._s0_tri[t])

    def surface_jacobian(self, nodes):
        """Area of S0 per unit area of D0 in the triangle containing each node."""
        t, _ = self._d0_locate(np.atleast_2d(nodes))
        return self.surface.area_ratio()[t]

    def s0_normal(self, nodes):
        """Unit normal of S0 pointing into the domain at the surface point of each node."""
        t, _ = self._d0_locate(np.atleast_2d(nodes))
        tri = self._s0_tri[t]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    # ---- F inverse ----------------------------------------------------------

    def foot_points(self, y):
        """Follow u backwards from each point to S0."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        lines = trace_lines(self.u_field, y, self, tol=self.tol, direction=-1, level=0.0,
                            dphi_max=None, dangle_max=None, split=False, hmax=0.25,
                            raise_on_failure=False)
        feet = np.full_like(y, np.nan)
        failures = {}
        for i, ln in enumerate(lines):
            if ln is None:
                failures[i] = "foot-point trace failed"
            else:
                feet[i] = ln.end
        return feet, failures

    def _exact(self, y):
        z = self.phi(y)
        out = np.full((len(y), 3), np.nan)
        out[:, 2] = z
        on_s0 = z <= 1e-12
        if np.any(on_s0):
            out[on_s0, :2] = self.surface_coords_at(y[on_s0])
            out[on_s0, 2] = 0.0
        rest = np.flatnonzero(~on_s0)
        failures = {}
        if rest.size:
            feet, fails = self.foot_points(y[rest])
            good = np.setdiff1d(np.arange(len(rest)), list(fails))
            out[rest[good], :2] = self.surface_coords_at(feet[good])
            failures = {int(rest[i]): m for i, m in fails.items()}
        return out, failures

    def vertex_reference(self):
        """Exact reference coordinates at all mesh vertices (computed once)."""
        if self._vertex_ref is None:
            ref, failures = self._exact(self.mesh.vertices)
            if failures:
                raise MappingError("foot-point traces failed at mesh vertices", ref, failures)
            self._vertex_ref = ref
        return self._vertex_ref

    def to_reference(self, y, mode=None):
        """Reference coordinates ``(x1, x2, z)`` of domain points.

        Raises
        ------
        MappingError
            When any foot-point trace fails; partial results are attached.
        """
        y = np.atleast_2d(np.asarray(y, dtype=float))
        mode = mode or self.mode
        if mode == "bulk":
            vr = self.vertex_reference()
            xy = self.mesh.interpolate(vr[:, :2], y)[0]
            return np.column_stack([xy, self.phi(y)])
        out, failures = self._exact(y)
        if failures:
            first = min(failures)
            raise MappingError(f"{len(failures)} point(s) could not be mapped; first: "
                               f"index {first}: {failures[first]}", out, failures)
        return out


def _bary2(p, a, b, c):
    v0, v1, v2 = b - a, c - a, p - a
    det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    l1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
    l2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
    return np.stack([1 - l1 - l2, l1, l2], axis=-1)


def _bary3(p, a, b, c):
    """Barycentrics of the orthogonal projection of p onto each triangle plane."""
    v0, v1, v2 = b - a, c - a, p - a
    d00 = np.sum(v0 * v0, -1)
    d01 = np.sum(v0 * v1, -1)
    d11 = np.sum(v1 * v1, -1)
    d20 = np.sum(v2 * v0, -1)
    d21 = np.sum(v2 * v1, -1)
    den = d00 * d11 - d01 * d01
    l1 = (d11 * d20 - d01 * d21) / den
    l2 = (d00 * d21 - d01 * d20) / den
    return np.stack([1 - l1 - l2, l1, l2], axis=-1)


def build_embedding(domain: TubularDomain, resolution: float | None = None, mode: str = "auto",
                    tol: float = 1e-8, origin_arc: float = 0.0, mesh: Mesh | None = None,
                    solver_rtol: float = 1e-10):
    """Solve for phi, u and the cap coordinates and wrap them as an embedding.

    ``mode="auto"`` uses the closed form on straight cylinders and bulk
    interpolation elsewhere.
    """
    if mode not in EMBED_MODES:
        raise ValueError(f"embedding mode must be one of {EMBED_MODES}")
    if mode == "analytic" or (mode == "auto" and domain.kind == "straight-cylinder" and mesh is None):
        return CylinderEmbedding(domain)
    if mode == "auto":
        mode = "bulk"
    if mesh is None:
        if resolution is None:
            raise ValueError("a mesh or a resolution is required")
        mesh = generate_mesh(domain, resolution)
    phi = solve_phi(mesh, rtol=solver_rtol)
    u = gradient_field(phi)
    sc = solve_surface_coords(mesh, origin_arc=origin_arc)
    return EmbeddingMap(mesh=mesh, phi_field=phi, u=u, surface=sc, mode=mode, tol=tol)


def map_curve(emap, line: FieldLine) -> FieldLine:
    """Attach reference coordinates to every sample and recompute the sections."""
    return map_curves(emap, [line])[0]


def map_curves(emap, lines):
    """Batched ``map_curve``; one call to ``to_reference`` for all samples."""
    counts = [len(ln) for ln in lines]
    pts = np.concatenate([ln.points for ln in lines]) if lines else np.zeros((0, 3))
    try:
        ref = emap.to_reference(pts)
    except (MappingError, TracingError) as exc:
        raise MappingError(f"curve mapping aborted: {exc}",
                           getattr(exc, "partial", None), getattr(exc, "failures", None)) from exc
    out = []
    start = 0
    for ln, n in zip(lines, counts):
        r = ref[start:start + n]
        start += n
        out.append(replace(ln, ref=r, sections=sections_from_z(ln.points, r[:, 2])))
    return out


__all__ = ["CylinderEmbedding", "EmbeddingMap", "MappingError", "build_embedding", "map_curve",
           "map_curves", "EMBED_MODES"]
