"""
Least-distorted field of a tubular domain.

``solve_phi`` solves Laplace's equation with phi = 0 on S0, phi = 1 on S1
and the natural no-flux condition on the side. ``solve_surface_coords``
builds the harmonic disc coordinates on S0 that fix which u-line is which
vertical line of the reference cylinder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, spsolve

from .mesh import Mesh, S0, TAGS, triangle_areas


class SolverError(RuntimeError):
    """Linear solve failed to converge or the mesh is unusable."""


@dataclass(eq=False)
class ScalarFieldP1:
    mesh: Mesh
    values: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    def __call__(self, points):
        return self.mesh.interpolate(self.values, points)[0]

    def element_gradients(self):
        """Constant gradient on each tetrahedron, shape (m, 3)."""
        g = self.mesh.element_gradients()
        return np.einsum("mk,mkd->md", self.values[self.mesh.tets], g)


@dataclass(eq=False)
class VectorFieldNodal:
    mesh: Mesh
    vectors: np.ndarray

    def __call__(self, points):
        return self.mesh.interpolate(self.vectors, points)[0]

    def magnitude(self):
        return np.linalg.norm(self.vectors, axis=1)


@dataclass
class NullAuditReport:
    min_ratio: float
    median_magnitude: float
    floor: float
    vertex: int
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"null audit {status}: min |u|/median = {self.min_ratio:.3e} "
                f"(floor {self.floor:g}) at vertex {self.vertex}")


def stiffness_matrix(mesh: Mesh):
    g = mesh.element_gradients()
    vol = mesh.volumes()
    ke = vol[:, None, None] * np.einsum("mid,mjd->mij", g, g)
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))


def solve_phi(mesh: Mesh, rtol: float = 1e-10, maxiter: int | None = None) -> ScalarFieldP1:
    """P1 Galerkin solution of the mixed Dirichlet/Neumann Laplace problem.

    Conjugate gradients with a Jacobi preconditioner on the interior unknowns.
    """
    for tag in TAGS:
        if not np.any(mesh.boundary_tags == TAGS.index(tag)):
            raise SolverError(f"mesh has no {tag} faces")
    K = stiffness_matrix(mesh)
    n = mesh.n_vertices
    bottom = mesh.tag_vertices("S0")
    top = mesh.tag_vertices("S1")
    if np.intersect1d(bottom, top).size:
        raise SolverError("S0 and S1 share vertices")
    phi = np.zeros(n)
    phi[top] = 1.0
    fixed = np.zeros(n, dtype=bool)
    fixed[bottom] = True
    fixed[top] = True
    free = np.flatnonzero(~fixed)
    A = K[free][:, free].tocsr()
    b = -K[free][:, fixed] @ phi[fixed]
    dinv = 1.0 / A.diagonal()
    M = sp.diags(dinv)
    x0 = mesh.ref_vertices[free, 2].copy() if mesh.ref_vertices is not None else None
    count = [0]

    def _cb(_):
        count[0] += 1

    maxiter = maxiter or 20 * len(free) + 100
    sol, info = cg(A, b, x0=x0, rtol=rtol, atol=0.0, M=M, maxiter=maxiter, callback=_cb)
    res = float(np.linalg.norm(A @ sol - b) / max(np.linalg.norm(b), 1e-300))
    if info > 0:
        raise SolverError(f"CG stopped after {info} iterations (relative residual {res:.2e})")
    if info < 0:
        raise SolverError(f"CG breakdown (code {info})")
    if not res <= 10 * rtol:
        raise SolverError(f"CG residual {res:.2e} above the requested {rtol:.1e}")
    phi[free] = sol
    return ScalarFieldP1(mesh, phi, residual=res, iterations=count[0])


def discrete_flux(phi: ScalarFieldP1):
    """Consistent (reaction) flux of grad(phi) into the domain through S0 and out through S1."""
    K = stiffness_matrix(phi.mesh)
    r = K @ phi.values
    f0 = -r[phi.mesh.tag_vertices("S0")].sum()
    f1 = r[phi.mesh.tag_vertices("S1")].sum()
    return float(f0), float(f1)


def dirichlet_energy(mesh: Mesh, values):
    K = stiffness_matrix(mesh)
    return float(values @ (K @ values))


def side_vertex_normals(mesh: Mesh):
    """Outward side normals at Sside vertices (analytic when the domain is known)."""
    verts = mesh.tag_vertices("Sside")
    if mesh.domain is not None:
        ref = mesh.ref_vertices[verts].copy()
        rho = np.hypot(ref[:, 0], ref[:, 1])
        ref[:, :2] /= rho[:, None]
        return verts, mesh.domain.side_normal(ref)
    faces = mesh.faces("Sside")
    p = mesh.vertices[faces]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    acc = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        np.add.at(acc, faces[:, k], fn)
    nrm = acc[verts]
    return verts, nrm / np.linalg.norm(nrm, axis=1, keepdims=True)


def gradient_field(phi: ScalarFieldP1, enforce_side: bool = True) -> VectorFieldNodal:
    """Volume-weighted average of element gradients at each vertex.

    With ``enforce_side`` the normal component is removed at side vertices,
    imposing the no-flux condition exactly on the recovered field.
    """
    mesh = phi.mesh
    ge = phi.element_gradients()
    vol = mesh.volumes()
    n = mesh.n_vertices
    acc = np.zeros((n, 3))
    wsum = np.zeros(n)
    for k in range(4):
        np.add.at(acc, mesh.tets[:, k], vol[:, None] * ge)
        np.add.at(wsum, mesh.tets[:, k], vol)
    u = acc / wsum[:, None]
    if enforce_side:
        verts, nrm = side_vertex_normals(mesh)
        u[verts] -= np.einsum("ij,ij->i", u[verts], nrm)[:, None] * nrm
    return VectorFieldNodal(mesh, u)


def check_nonnull(u: VectorFieldNodal, floor: float = 1e-3) -> NullAuditReport:
    """Flag interior vertices where |u| collapses relative to its median."""
    if not 0 < floor < 1:
        raise ValueError("floor must lie in (0, 1)")
    mag = u.magnitude()
    interior = u.mesh.interior_vertices()
    if interior.size == 0:
        interior = np.arange(len(mag))
    med = float(np.median(mag[interior]))
    ratios = mag[interior] / med if med > 0 else np.zeros(len(interior))
    i = int(np.argmin(ratios))
    return NullAuditReport(min_ratio=float(ratios[i]), median_magnitude=med, floor=floor,
                           vertex=int(interior[i]), passed=bool(ratios[i] >= floor))


# ---- surface coordinates on S0 ------------------------------------------


@dataclass(eq=False)
class SurfaceCoords:
    """Harmonic disc coordinates on a cap.

    ``vertices`` index into the parent mesh; ``triangles`` index into
    ``vertices`` and are oriented so their normals point into the domain.
    """

    mesh: Mesh
    vertices: np.ndarray
    triangles: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    boundary_loop: np.ndarray
    perimeter: float
    origin_arc: float

    @property
    def points(self):
        return self.mesh.vertices[self.vertices]

    @property
    def coords(self):
        return np.column_stack([self.x1, self.x2])

    def mapped_signed_areas(self):
        c = self.coords[self.triangles]
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def source_areas(self):
        return triangle_areas(self.points, self.triangles)

    def area_ratio(self):
        """Source (surface) area over mapped (disc) area per triangle."""
        return self.source_areas() / self.mapped_signed_areas()


def _boundary_loop(tris):
    """Ordered boundary cycle of a disc triangulation, following triangle orientation."""
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    be = e[counts[inv.ravel()] == 1]
    nxt = dict(zip(be[:, 0].tolist(), be[:, 1].tolist()))
    if len(nxt) != len(be):
        raise SolverError("cap boundary is not a simple cycle")
    start = int(be[:, 0].min())
    loop = [start]
    while True:
        v = nxt[loop[-1]]
        if v == start:
            break
        loop.append(v)
        if len(loop) > len(be):
            raise SolverError("cap boundary is not a simple cycle")
    if len(loop) != len(be):
        raise SolverError("cap is not a topological disc")
    return np.array(loop)


def surface_laplacian(points, tris):
    """Cotangent stiffness matrix of a triangulated surface (P1 Galerkin)."""
    p = points[tris]
    n = len(points)
    rows, cols, vals = [], [], []
    area2 = np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        # cotangent of the angle at vertex i weights edge (j, k)
        u = p[:, j] - p[:, i]
        v = p[:, k] - p[:, i]
        cot = np.einsum("ij,ij->i", u, v) / area2
        w = 0.5 * cot
        rows += [tris[:, j], tris[:, k], tris[:, j], tris[:, k]]
        cols += [tris[:, k], tris[:, j], tris[:, j], tris[:, k]]
        vals += [-w, -w, w, w]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def solve_surface_coords(mesh: Mesh, origin_arc: float = 0.0, tag: str = "S0") -> SurfaceCoords:
    """Harmonic (x1, x2) on a cap with boundary data (cos, sin) of 2 pi (s - origin_arc) / L.

    Raises
    ------
    SolverError
        If the cap is not a disc, origin_arc is outside [0, L) or any mapped
        triangle is flipped (insufficient resolution).
    """
    faces = mesh.faces(tag)
    verts, local = np.unique(faces, return_inverse=True)
    tris = local.reshape(-1, 3)
    if tag == "S0":
        # outward normal of S0 points out of the domain; reverse to point inwards
        tris = tris[:, [0, 2, 1]]
    pts = mesh.vertices[verts]
    loop = _boundary_loop(tris)
    seg = np.linalg.norm(pts[np.roll(loop, -1)] - pts[loop], axis=1)
    L = float(seg.sum())
    if not 0.0 <= origin_arc < L:
        raise SolverError(f"origin_arc must lie in [0, {L})")
    s = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    theta = 2 * math.pi * (s - origin_arc) / L
    K = surface_laplacian(pts, tris)
    n = len(pts)
    fixed = np.zeros(n, dtype=bool)
    fixed[loop] = True
    free = np.flatnonzero(~fixed)
    A = K[free][:, free].tocsc()
    out = []
    for bval in (np.cos(theta), np.sin(theta)):
        x = np.zeros(n)
        x[loop] = bval
        if free.size:
            x[free] = spsolve(A, -K[free][:, loop] @ bval)
        out.append(x)
    sc = SurfaceCoords(mesh=mesh, vertices=verts, triangles=tris, x1=out[0], x2=out[1],
                       boundary_loop=loop, perimeter=L, origin_arc=float(origin_arc))
    flipped = int(np.sum(sc.mapped_signed_areas() <= 0))
    if flipped:
        raise SolverError(f"{flipped} cap triangles flip under the harmonic map")
    return sc
