"""
Independent reference computations used only by the tests.

None of these share code with the package: they solve reduced problems
(axisymmetric, brute force) by different discretisations.
"""

import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


def meridional_potential(radius=lambda z: 1.0 + z, dradius=lambda z: 1.0, n_s=200, n_t=200):
    """Axisymmetric Laplace solve on {0 <= rho <= radius(z), 0 <= z <= 1}.

    P1 elements on a structured triangulation of the (rho, z) meridian with
    the cylindrical weight rho (exact for linear rho), phi = 0 at z = 0,
    phi = 1 at z = 1, natural conditions elsewhere. Returns the node
    coordinates, the solution and the stiffness matrix.
    """
    s = np.linspace(0.0, 1.0, n_s + 1)
    t = np.linspace(0.0, 1.0, n_t + 1)
    S, T = np.meshgrid(s, t, indexing="ij")
    rho = S * radius(T)
    z = T
    idx = np.arange((n_s + 1) * (n_t + 1)).reshape(n_s + 1, n_t + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    tris = np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])
    P = np.column_stack([rho.ravel(), z.ravel()])
    p = P[tris]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    # gradients of barycentric functions
    g = np.empty((len(tris), 3, 2))
    for k in range(3):
        q1 = p[:, (k + 1) % 3]
        q2 = p[:, (k + 2) % 3]
        g[:, k, 0] = (q1[:, 1] - q2[:, 1]) / (2 * area)
        g[:, k, 1] = (q2[:, 0] - q1[:, 0]) / (2 * area)
    w = area * p[:, :, 0].mean(axis=1)
    ke = w[:, None, None] * np.einsum("mid,mjd->mij", g, g)
    n = len(P)
    K = sp.csr_matrix((ke.ravel(), (np.repeat(tris, 3, 1).ravel(), np.tile(tris, (1, 3)).ravel())),
                      shape=(n, n))
    bottom = idx[:, 0]
    top = idx[:, -1]
    phi = np.zeros(n)
    phi[top] = 1.0
    fixed = np.zeros(n, bool)
    fixed[bottom] = fixed[top] = True
    free = np.flatnonzero(~fixed)
    phi[free] = spsolve(K[free][:, free].tocsc(), -K[free][:, fixed] @ phi[fixed])
    return P, phi, K, bottom, top


def expanding_tube_foot_radius(top_rho=1.0, n=200):
    """Radius on the lower cap of the gradient line that reaches the top cap at ``top_rho``.

    The flux of grad(phi) through the disc of radius rho on a cap is constant
    along gradient lines (axisymmetric stream function), so the foot radius
    matches cumulative cap fluxes. Fluxes are the consistent nodal reactions.
    """
    P, phi, K, bottom, top = meridional_potential(n_s=n, n_t=n)
    r = K @ phi
    fb = -r[bottom]
    ft = r[top]
    rb = P[bottom, 0]
    rt = P[top, 0]
    # reaction at a node is spread over half the adjacent intervals; use the
    # cumulative sum at interval midpoints
    cb = np.concatenate([[0.0], np.cumsum(fb)])
    ct = np.concatenate([[0.0], np.cumsum(ft)])
    mb = np.concatenate([[0.0], 0.5 * (rb[:-1] + rb[1:]), [rb[-1]]])
    mt = np.concatenate([[0.0], 0.5 * (rt[:-1] + rt[1:]), [rt[-1]]])
    target = np.interp(top_rho, mt, ct) / ct[-1]
    return float(np.interp(target, cb / cb[-1], mb))


def brute_force_winding(ga, gb, refine=10):
    """Section-sum winding of two reference polylines by dense z sampling.

    ``ga`` and ``gb`` are (n, 3) arrays of (x1, x2, z). Each curve is cut into
    maximal runs of monotone z; for every pair of runs the relative angle is
    sampled on a uniform z grid ``refine`` times denser than the union of the
    sample heights and unwrapped with numpy.
    """
    def runs(g):
        dz = np.sign(np.diff(g[:, 2]))
        out, start = [], 0
        for k in range(1, len(dz) + 1):
            if k == len(dz) or dz[k] != dz[start]:
                out.append((g[start:k + 1], int(dz[start])))
                start = k
        return out

    total = 0.0
    for ra, sa in runs(ga):
        for rb, sb in runs(gb):
            if sa == 0 or sb == 0:
                continue
            lo = max(ra[:, 2].min(), rb[:, 2].min())
            hi = min(ra[:, 2].max(), rb[:, 2].max())
            if hi <= lo:
                continue
            m = refine * (len(ra) + len(rb))
            zz = np.linspace(lo, hi, m)
            A = ra[np.argsort(ra[:, 2])]
            B = rb[np.argsort(rb[:, 2])]
            dx = np.interp(zz, A[:, 2], A[:, 0]) - np.interp(zz, B[:, 2], B[:, 0])
            dy = np.interp(zz, A[:, 2], A[:, 1]) - np.interp(zz, B[:, 2], B[:, 1])
            th = np.unwrap(np.arctan2(dy, dx))
            total += sa * sb * (th[-1] - th[0])
    return total / (2 * math.pi)
