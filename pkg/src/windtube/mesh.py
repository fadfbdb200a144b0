"""
Structured tetrahedral meshes of tubular domains and point location on them.

The reference disc is triangulated by concentric rings (ring k carries 6k
vertices, the centre vertex is a regular hexagonal patch), extruded into
prisms and each prism is cut into three tetrahedra with a diagonal rule that
keeps neighbouring prisms conforming. The reference mesh is then pushed
through ``TubularDomain.embed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._locate import bucket_table, locate_bucketed
from .geometry import TubularDomain

TAGS = ("S0", "S1", "Sside")
S0, S1, SSIDE = 0, 1, 2


class MeshError(ValueError):
    """Mesh generation or point location failure."""


def disc_triangulation(n_rings: int):
    """Ring triangulation of the unit disc.

    Returns ``(points, triangles, boundary)`` where ``boundary`` lists the
    outer-ring vertex indices counter-clockwise starting at angle 0.
    """
    pts = [(0.0, 0.0)]
    ring_start = [0]
    for k in range(1, n_rings + 1):
        ring_start.append(len(pts))
        nk = 6 * k
        for j in range(nk):
            a = 2 * math.pi * j / nk
            pts.append((k / n_rings * math.cos(a), k / n_rings * math.sin(a)))
    pts = np.array(pts)
    tris = []
    for k in range(1, n_rings + 1):
        outer = list(range(ring_start[k], ring_start[k] + 6 * k))
        if k == 1:
            for j in range(6):
                tris.append((0, outer[j], outer[(j + 1) % 6]))
            continue
        inner = list(range(ring_start[k - 1], ring_start[k - 1] + 6 * (k - 1)))
        ni, no = len(inner), len(outer)
        i = j = 0
        while i < ni or j < no:
            next_in = (i + 1) / ni
            next_out = (j + 1) / no
            if i >= ni or (j < no and next_out <= next_in):
                tris.append((inner[i % ni], outer[j], outer[(j + 1) % no]))
                j += 1
            else:
                tris.append((inner[i], outer[j % no], inner[(i + 1) % ni]))
                i += 1
    tris = np.array(tris, dtype=np.int64)
    # counter-clockwise orientation
    a, b, c = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    boundary = np.arange(ring_start[n_rings], ring_start[n_rings] + 6 * n_rings)
    return pts, tris, boundary


def signed_volumes(vertices, tets):
    p = vertices[tets]
    d = p[:, 1:] - p[:, :1]
    return np.einsum("ij,ij->i", d[:, 0], np.cross(d[:, 1], d[:, 2])) / 6.0


def triangle_areas(vertices, faces):
    p = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


@dataclass(eq=False)
class Mesh:
    """Tagged conforming tetrahedral mesh.

    ``boundary_tags`` holds indices into ``TAGS``. Boundary faces are
    oriented with outward normals. ``ref_vertices`` are the reference
    cylinder coordinates each vertex was generated from.
    """

    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray
    boundary_tags: np.ndarray
    resolution: float
    ref_vertices: np.ndarray
    domain: TubularDomain | None = None
    n_rings: int = 0
    n_layers: int = 0
    disc_points: np.ndarray | None = None
    disc_tris: np.ndarray | None = None
    _locator: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    def volumes(self):
        return signed_volumes(self.vertices, self.tets)

    def total_volume(self):
        return float(self.volumes().sum())

    def faces(self, tag):
        return self.boundary_faces[self.boundary_tags == TAGS.index(tag)]

    def face_areas(self, tag=None):
        f = self.boundary_faces if tag is None else self.faces(tag)
        return triangle_areas(self.vertices, f)

    def tag_vertices(self, tag):
        return np.unique(self.faces(tag))

    def interior_vertices(self):
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[np.unique(self.boundary_faces)] = False
        return np.flatnonzero(mask)

    def element_gradients(self):
        """Gradients of the four P1 basis functions per element, shape (m, 4, 3)."""
        if "grads" not in self._locator:
            p = self.vertices[self.tets]
            D = (p[:, 1:] - p[:, :1])  # rows are edge vectors
            Dinv = np.linalg.inv(D)  # columns give gradients of l1..l3
            g123 = np.transpose(Dinv, (0, 2, 1))
            g0 = -g123.sum(axis=1, keepdims=True)
            self._locator["grads"] = np.concatenate([g0, g123], axis=1)
        return self._locator["grads"]

    # ---- point location -------------------------------------------------

    def _affine(self):
        if "Tinv" not in self._locator:
            p = self.vertices[self.tets]
            D = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))
            self._locator["Tinv"] = np.linalg.inv(D)
            self._locator["P0"] = p[:, 0].copy()
            self._locator["tree"] = cKDTree(p.mean(axis=1))
        return self._locator["Tinv"], self._locator["P0"], self._locator["tree"]

    def barycentric(self, tets, points):
        Tinv, P0, _ = self._affine()
        l123 = np.einsum("nij,nj->ni", Tinv[tets], points - P0[tets])
        return np.concatenate([1.0 - l123.sum(axis=1, keepdims=True), l123], axis=1)

    def _locate_structured(self, points, eps):
        """Location through the closed-form reference inverse.

        Mesh layers lie exactly in the planar cross-sections of the domain,
        so only the in-plane disc triangle has to be searched for, using a
        bucket grid over the reference disc.
        """
        if "buckets" not in self._locator:
            n_cells = 2 * self.n_rings
            self._locator["buckets"] = bucket_table(self.disc_points, self.disc_tris, n_cells,
                                                    0.5 / self.n_rings) + (n_cells,)
        start, tris, n_cells = self._locator["buckets"]
        Tinv, P0, _ = self._affine()
        x = self.domain.inverse(points)
        layer = np.clip(np.floor(x[:, 2] * self.n_layers).astype(np.int64), 0, self.n_layers - 1)
        rho = np.hypot(x[:, 0], x[:, 1])
        xy = x[:, :2] / np.maximum(rho, 1.0)[:, None]
        idx = np.zeros(len(points), dtype=np.int64)
        bary = np.zeros((len(points), 4))
        found = locate_bucketed(np.ascontiguousarray(points), np.ascontiguousarray(xy), layer,
                                start, tris, n_cells, len(self.disc_tris), Tinv, P0, eps, idx, bary)
        return idx, bary, found

    def _best_candidate(self, points, cand, eps):
        """Test candidates column by column, dropping points once they are hit."""
        m, k = cand.shape
        best_i = cand[:, 0].copy()
        best_b = np.zeros((m, 4))
        best_s = np.full(m, -np.inf)
        found = np.zeros(m, dtype=bool)
        todo = np.arange(m)
        for c in range(k):
            if not todo.size:
                break
            t = cand[todo, c]
            b = self.barycentric(t, points[todo])
            sc = b.min(axis=1)
            upd = sc > best_s[todo]
            sel = todo[upd]
            best_i[sel], best_b[sel], best_s[sel] = t[upd], b[upd], sc[upd]
            hit = sc >= -eps
            found[todo[hit]] = True
            todo = todo[~hit]
        return best_i, best_b, found

    def locate(self, points, k=12, eps=1e-10):
        """Containing element and barycentric coordinates for each point.

        Points outside the mesh are assigned the element whose barycentric
        coordinates are least negative; ``inside`` flags the exact hits.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        _, _, tree = self._affine()
        idx = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 4))
        inside = np.zeros(n, dtype=bool)
        todo = np.arange(n)
        score_struct = None
        if self.disc_tris is not None and self.domain is not None and n:
            i, b, found = self._locate_structured(points, eps)
            idx[found], bary[found], inside[found] = i[found], b[found], True
            # points just outside the polygonal boundary keep the structured guess;
            # only clearly wrong guesses go through the generic search
            miss = ~found
            idx[miss], bary[miss] = i[miss], b[miss]
            score = b.min(axis=1)
            todo = np.flatnonzero(miss & (score < -0.05))
            score_struct = score[todo]
        if len(todo):
            k = min(k, len(self.tets))
            _, cand = tree.query(points[todo], k=k)
            cand = np.asarray(cand).reshape(len(todo), k)
            i, b, found = self._best_candidate(points[todo], cand, eps)
            better = found if score_struct is None else found | (b.min(axis=1) > score_struct)
            if score_struct is None:
                better = np.ones(len(todo), dtype=bool)
            sel = todo[better]
            idx[sel], bary[sel], inside[sel] = i[better], b[better], found[better]
        return idx, bary, inside

    def interpolate(self, values, points, clamp=True):
        """P1 interpolation of vertex values (scalar or vector) at points."""
        idx, bary, _ = self.locate(points)
        if clamp:
            bary = np.clip(bary, 0.0, None)
            bary /= bary.sum(axis=1, keepdims=True)
        vals = np.asarray(values)[self.tets[idx]]
        if vals.ndim == 2:
            return np.einsum("nk,nk->n", bary, vals), idx
        return np.einsum("nk,nkd->nd", bary, vals), idx


def _split_prisms(bottom_tris, n_per_layer, n_layers):
    """Three tets per prism; diagonals chosen from global vertex order."""
    tris = np.sort(bottom_tris, axis=1)
    tets = []
    for layer in range(n_layers):
        a = tris[:, 0] + layer * n_per_layer
        b = tris[:, 1] + layer * n_per_layer
        c = tris[:, 2] + layer * n_per_layer
        a2, b2, c2 = a + n_per_layer, b + n_per_layer, c + n_per_layer
        tets.append(np.stack([a, b, c, a2], axis=1))
        tets.append(np.stack([b, c, a2, b2], axis=1))
        tets.append(np.stack([c, a2, b2, c2], axis=1))
    return np.concatenate(tets)


def _boundary_faces(tets, vertices):
    local = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = tets[:, local].reshape(-1, 3)
    opposite = tets[:, [0, 1, 2, 3]].reshape(-1)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = counts[inv.ravel()] == 1
    faces = faces[once]
    opp = opposite[once]
    p = vertices[faces]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    inward = np.einsum("ij,ij->i", nrm, vertices[opp] - p[:, 0]) > 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return faces


def generate_mesh(domain: TubularDomain, resolution: float) -> Mesh:
    """Mesh ``domain`` with characteristic edge length ``resolution``.

    Deterministic: the same domain and resolution give an identical mesh.
    """
    if not resolution > 0:
        raise MeshError("resolution must be positive")
    rmin = float(domain.radius(np.linspace(0, 1, 201)).min())
    if 2 * rmin / resolution < 4 - 1e-9:
        raise MeshError("resolution too coarse: fewer than 4 cells across the tube")
    n_rings = max(2, math.ceil(domain.max_radius / resolution - 1e-9))
    n_layers = max(1, math.ceil(domain.axial_length / resolution - 1e-9))
    pts2, tris2, _ = disc_triangulation(n_rings)
    npl = len(pts2)
    zs = np.linspace(0.0, 1.0, n_layers + 1)
    ref = np.concatenate([np.column_stack([pts2, np.full(npl, z)]) for z in zs])
    ref[:, 2] = np.repeat(zs, npl)
    tets = _split_prisms(tris2, npl, n_layers)
    ref_vol = signed_volumes(ref, tets)
    neg = ref_vol < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    verts = domain.embed(ref)
    vol = signed_volumes(verts, tets)
    if np.any(vol <= 0):
        raise MeshError(f"{int(np.sum(vol <= 0))} mapped tets have non-positive volume")
    faces = _boundary_faces(tets, verts)
    fz = ref[faces, 2]
    tags = np.full(len(faces), SSIDE, dtype=np.int64)
    tags[np.all(fz == 0.0, axis=1)] = S0
    tags[np.all(fz == 1.0, axis=1)] = S1
    return Mesh(vertices=verts, tets=tets, boundary_faces=faces, boundary_tags=tags,
                resolution=float(resolution), ref_vertices=ref, domain=domain,
                n_rings=n_rings, n_layers=n_layers, disc_points=pts2,
                disc_tris=np.sort(tris2, axis=1))
