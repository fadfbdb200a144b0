"""
Field line helicity and the winding-gauge vector potential.

``field_line_helicity`` is the flux-weighted field line winding: the weight of
each D0 node is the magnetic flux through the matching patch of S0, i.e. the
normal field component times the S0 area per unit D0 area. It runs through
exactly the same code path as ``weighted_winding``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import generate_mesh
from .winding import (GridMismatchError, LineBundle, QuadratureGrid, WindingDistribution,
                      weighted_winding)

TWO_PI = 2.0 * math.pi


class NotSolenoidalError(ValueError):
    """Field line helicity requested for a field that fails the divergence check."""


@dataclass
class DivergenceReport:
    rms: float
    max: float
    scale: float
    tol: float
    n_elements: int

    @property
    def passed(self):
        return bool(self.rms < self.tol)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"divergence {status}: rms {self.rms:.3e}, max {self.max:.3e} "
                f"(relative to mean|b|/h = {self.scale:.3e}, tol {self.tol:g})")


_LOCAL_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
FACE_RULES = ("edge", "midpoint")
CHECK_MESH_DIVISIONS = 20


def check_solenoidal(b, mesh, tol: float = 1e-3, rule: str = "edge") -> DivergenceReport:
    """Element-wise divergence from face fluxes by the divergence theorem.

    ``rule="edge"`` averages ``b`` over the three edge midpoints of each face
    (exact for quadratic fields); ``rule="midpoint"`` uses the face centroid
    alone (exact for linear fields). RMS and max are reported relative to
    ``mean|b| / resolution``.
    """
    if rule not in FACE_RULES:
        raise ValueError(f"rule must be one of {FACE_RULES}")
    p = mesh.vertices[mesh.tets]  # (m, 4, 3)
    f = p[:, _LOCAL_FACES]  # (m, 4, 3, 3)
    cent = f.mean(axis=2)
    area_n = 0.5 * np.cross(f[:, :, 1] - f[:, :, 0], f[:, :, 2] - f[:, :, 0])
    # orient every face normal away from the opposite vertex
    outward = np.einsum("mfd,mfd->mf", area_n, cent - p) > 0
    area_n = np.where(outward[..., None], area_n, -area_n)
    if rule == "midpoint":
        bv = np.asarray(b(cent.reshape(-1, 3))).reshape(cent.shape)
        mag = np.linalg.norm(bv, axis=2)
    else:
        q = 0.5 * (f + np.roll(f, -1, axis=2))
        bq = np.asarray(b(q.reshape(-1, 3))).reshape(q.shape)
        bv = bq.mean(axis=2)
        mag = np.linalg.norm(bq, axis=3)
    flux = np.einsum("mfd,mfd->m", bv, area_n)
    div = flux / mesh.volumes()
    scale = float(np.mean(mag)) / mesh.resolution
    rel = div / scale
    return DivergenceReport(rms=float(np.sqrt(np.mean(rel ** 2))), max=float(np.abs(rel).max()),
                            scale=scale, tol=tol, n_elements=len(div))


@lru_cache(maxsize=4)
def _domain_check_mesh(domain):
    return generate_mesh(domain, domain.length_scale / CHECK_MESH_DIVISIONS)


def check_mesh_for(b, emap):
    """Mesh on which the divergence of ``b`` is checked.

    Mesh-interpolated fields are checked on the embedding's mesh, where they
    are piecewise linear; analytic fields on a cached mesh of the domain with
    ``length_scale / 20`` resolution.
    """
    mesh = getattr(emap, "mesh", None)
    if mesh is not None and getattr(b, "discretized", False):
        return mesh
    return _domain_check_mesh(emap.domain)


def helicity_weights(b, emap, grid: QuadratureGrid):
    """Per-node surface Jacobian J0 and normal field component on S0."""
    nodes = grid.nodes
    J0 = np.asarray(emap.surface_jacobian(nodes), dtype=float)
    if not np.all(J0 > 0):
        raise ValueError("surface Jacobian must be positive at every node")
    y0 = emap.start_points(nodes)
    bz = np.einsum("ij,ij->i", b(y0), emap.s0_normal(nodes))
    return J0, bz


def field_line_helicity(b, emap, grid: QuadratureGrid, probe=None, tol=1e-8,
                        bundle: LineBundle | None = None, sol_tol: float = 1e-3,
                        mesh=None) -> WindingDistribution:
    """Flux-weighted field line winding A_b.

    Raises
    ------
    NotSolenoidalError
        If the element divergence of ``b`` exceeds ``sol_tol``.
    """
    report = check_solenoidal(b, mesh if mesh is not None else check_mesh_for(b, emap), sol_tol)
    if not report.passed:
        raise NotSolenoidalError(str(report))
    J0, bz = helicity_weights(b, emap, grid)
    dist = weighted_winding(b, emap, grid, w=J0 * bz, probe=probe, tol=tol, bundle=bundle,
                            kind="Ab")
    dist.meta.update(divergence_rms=report.rms, J0=J0, bz0=bz)
    return dist


def total_helicity(Ab: WindingDistribution, bz0, J0) -> float:
    """Flux-weighted integral of A_b over D0."""
    bz0 = np.asarray(bz0, dtype=float)
    J0 = np.asarray(J0, dtype=float)
    grid = Ab.grid
    vals = Ab.full()
    if bz0.shape != (len(grid),) or J0.shape != (len(grid),):
        raise GridMismatchError("flux weights do not match the grid")
    if not np.all(np.isfinite(vals)):
        raise GridMismatchError("A_b is not available at every grid node")
    return float(np.sum(grid.weights * J0 * bz0 * vals))


def winding_gauge_potential(b, points, domain, quad_n: int = 24):
    """Cross-section integral ``(1/2pi) int b(x') x (x - x', 0) / |x - x'|^2 dA'``.

    Straight circular cylinders only. The integral over the disc through each
    point is taken in polar coordinates centred on the point, where the
    kernel times the area element is bounded: Gauss-Legendre in the distance
    out to the rim and the trapezoid rule in the direction.

    Returns an (n, 3) array of potentials at the physical ``points``.
    """
    if domain.kind != "straight-cylinder":
        raise ValueError("the winding gauge evaluator needs a straight cylinder")
    R = float(domain.radius_coeffs[0])
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(np.hypot(pts[:, 0], pts[:, 1]) >= R):
        raise ValueError("evaluation point outside the disc")
    g, gw = np.polynomial.legendre.leggauss(quad_n)
    m = 2 * quad_n
    psi = TWO_PI * np.arange(m) / m
    e = np.stack([np.cos(psi), np.sin(psi)], axis=1)  # (m, 2)
    out = np.zeros((len(pts), 3))
    for k, x in enumerate(pts):
        xe = e @ x[:2]
        rmax = -xe + np.sqrt(xe ** 2 - x[:2] @ x[:2] + R * R)
        rho = 0.5 * (g[None, :] + 1.0) * rmax[:, None]  # (m, q)
        w = 0.5 * gw[None, :] * rmax[:, None] * (TWO_PI / m)
        q = np.empty((m, quad_n, 3))
        q[..., 0] = x[0] + rho * e[:, 0:1]
        q[..., 1] = x[1] + rho * e[:, 1:2]
        q[..., 2] = x[2]
        bv = b(q.reshape(-1, 3)).reshape(m, quad_n, 3)
        # b x (x - x', 0) / |x - x'|^2 * rho  ==  -b x (e, 0)
        ex = np.broadcast_to(e[:, None, 0], (m, quad_n))
        ey = np.broadcast_to(e[:, None, 1], (m, quad_n))
        cross = np.stack([-bv[..., 2] * ey, bv[..., 2] * ex, bv[..., 0] * ey - bv[..., 1] * ex],
                         axis=-1)
        out[k] = -np.einsum("mq,mqd->d", w, cross) / TWO_PI
    return out


def line_integral(a_fn, points):
    """Trapezoid-rule integral of a vector potential along a polyline."""
    pts = np.atleast_2d(points)
    a = a_fn(pts)
    dl = np.diff(pts, axis=0)
    return float(np.sum(0.5 * np.einsum("ij,ij->i", a[:-1] + a[1:], dl)))


__all__ = ["DivergenceReport", "NotSolenoidalError", "check_solenoidal", "check_mesh_for",
           "helicity_weights",
           "field_line_helicity", "total_helicity", "winding_gauge_potential", "line_integral"]
