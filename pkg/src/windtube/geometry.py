"""
Tubular domains as embeddings of the unit reference cylinder.

Every built-in domain has the form

    y = c(z) + r(z) * (x1 * N1(z) + x2 * N2(z))

where ``c`` is a centreline (straight segment or circular arc), ``(N1, N2, T)``
is a right-handed orthonormal frame along it and ``r`` is a polynomial radius
profile. Reference points are ``(x1, x2, z)`` with ``x1**2 + x2**2 <= 1`` and
``0 <= z <= 1``. All maps are vectorised over leading ``(n, 3)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_GEOM = 1e-12

DOMAIN_KINDS = ("straight-cylinder", "expanding-tube", "curved-tube")


class DomainError(ValueError):
    """Invalid domain descriptor or degenerate embedding."""


@dataclass(frozen=True)
class Centerline:
    """Straight segment along +z (``bend_radius=None``) or a circular arc.

    The arc starts at the origin heading along +z and bends towards +x, with
    total turning angle ``angle`` and radius of curvature ``bend_radius``.
    """

    length: float = 1.0
    bend_radius: float | None = None

    @property
    def angle(self) -> float:
        if self.bend_radius is None:
            return 0.0
        return self.length / self.bend_radius

    def frame(self, t):
        """Position, tangent, N1, N2 and their t-derivatives at parameters t in [0, 1]."""
        t = np.asarray(t, dtype=float)
        n = t.shape[0]
        L = self.length
        if self.bend_radius is None:
            pos = np.zeros((n, 3))
            pos[:, 2] = L * t
            T = np.tile([0.0, 0.0, 1.0], (n, 1))
            N1 = np.tile([1.0, 0.0, 0.0], (n, 1))
            N2 = np.tile([0.0, 1.0, 0.0], (n, 1))
            dpos = np.tile([0.0, 0.0, L], (n, 1))
            dN1 = np.zeros((n, 3))
            dN2 = np.zeros((n, 3))
            return pos, T, N1, N2, dpos, dN1, dN2
        R = self.bend_radius
        A = self.angle
        s, c = np.sin(A * t), np.cos(A * t)
        zero = np.zeros(n)
        one = np.ones(n)
        pos = np.stack([R * (1 - c), zero, R * s], axis=1)
        T = np.stack([s, zero, c], axis=1)
        N1 = np.stack([c, zero, -s], axis=1)
        N2 = np.stack([zero, one, zero], axis=1)
        dpos = R * A * T
        dN1 = -A * T
        dN2 = np.zeros((n, 3))
        return pos, T, N1, N2, dpos, dN1, dN2

    def closest_param(self, y):
        """Parameter t of the cross-section plane containing each point y."""
        y = np.atleast_2d(y)
        if self.bend_radius is None:
            return y[:, 2] / self.length
        R = self.bend_radius
        return np.arctan2(y[:, 2], R - y[:, 0]) / self.angle

    def samples(self, n=400):
        t = np.linspace(0.0, 1.0, n)
        return self.frame(t)[0]


@dataclass(frozen=True)
class TubularDomain:
    """Analytic embedding of the reference cylinder.

    ``radius_coeffs`` are polynomial coefficients of r(z) in increasing
    powers of the reference axial coordinate.
    """

    kind: str
    centerline: Centerline
    radius_coeffs: tuple[float, ...]
    descriptor: dict = field(default_factory=dict, compare=False)

    def radius(self, z):
        z = np.asarray(z, dtype=float)
        return np.polynomial.polynomial.polyval(z, self.radius_coeffs)

    def radius_derivative(self, z):
        z = np.asarray(z, dtype=float)
        d = np.polynomial.polynomial.polyder(self.radius_coeffs)
        return np.polynomial.polynomial.polyval(z, d)

    @property
    def max_radius(self) -> float:
        return float(self.radius(np.linspace(0, 1, 201)).max())

    @property
    def length_scale(self) -> float:
        """Characteristic length used to make tolerances dimensionless."""
        return max(self.max_radius, 1e-300)

    @property
    def axial_length(self) -> float:
        return self.centerline.length

    def embed(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pos, _, N1, N2, _, _, _ = self.centerline.frame(x[:, 2])
        r = self.radius(x[:, 2])[:, None]
        return pos + r * (x[:, 0:1] * N1 + x[:, 1:2] * N2)

    def jacobian(self, x):
        """d(embed)/d(x1, x2, z), shape (n, 3, 3) with columns per reference axis."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, _, N1, N2, dpos, dN1, dN2 = self.centerline.frame(x[:, 2])
        r = self.radius(x[:, 2])[:, None]
        dr = self.radius_derivative(x[:, 2])[:, None]
        x1, x2 = x[:, 0:1], x[:, 1:2]
        col_z = dpos + dr * (x1 * N1 + x2 * N2) + r * (x1 * dN1 + x2 * dN2)
        return np.stack([r * N1, r * N2, col_z], axis=2)

    def inverse(self, y):
        """Reference coordinates of physical points (closed form per family)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        t = self.centerline.closest_param(y)
        pos, _, N1, N2, _, _, _ = self.centerline.frame(t)
        r = self.radius(t)
        d = y - pos
        x1 = np.einsum("ij,ij->i", d, N1) / r
        x2 = np.einsum("ij,ij->i", d, N2) / r
        return np.stack([x1, x2, t], axis=1)

    def project_inside(self, y):
        """Pull points back into the closed domain along reference radii.

        Returns the projected points and the reference radius before projection.
        """
        x = self.inverse(y)
        rho = np.hypot(x[:, 0], x[:, 1])
        out = rho > 1.0
        if np.any(out):
            x = x.copy()
            x[out, 0] /= rho[out]
            x[out, 1] /= rho[out]
            y = np.array(y, dtype=float, copy=True)
            y[out] = self.embed(x[out])
        return y, rho

    def side_normal(self, x):
        """Outward unit normal of the side boundary at reference points with rho = 1."""
        J = self.jacobian(x)
        g = np.linalg.solve(np.transpose(J, (0, 2, 1)), np.stack(
            [x[:, 0], x[:, 1], np.zeros(len(x))], axis=1)[..., None])[..., 0]
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def axial_normal(self, x):
        """Unit normal of the constant-z reference slices, pointing towards increasing z."""
        J = self.jacobian(x)
        e = np.zeros((len(x), 3, 1))
        e[:, 2, 0] = 1.0
        g = np.linalg.solve(np.transpose(J, (0, 2, 1)), e)[..., 0]
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def volume(self, n=24):
        """Analytic volume: integral of det(jacobian) over the reference cylinder."""
        g, w = np.polynomial.legendre.leggauss(n)
        r = 0.5 * (g + 1.0)
        wr = 0.5 * w
        z, wz = r, wr
        th = np.linspace(0.0, 2 * np.pi, 4 * n, endpoint=False)
        R, TH, Z = np.meshgrid(r, th, z, indexing="ij")
        x = np.stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel(), Z.ravel()], axis=1)
        det = np.linalg.det(self.jacobian(x)).reshape(R.shape)
        wts = (wr * r)[:, None, None] * (2 * np.pi / len(th)) * wz[None, None, :]
        return float(np.sum(det * wts))


def _radius_coeffs(desc, default):
    if "radius_coeffs" in desc:
        coeffs = tuple(float(c) for c in desc["radius_coeffs"])
    elif "radius" in desc:
        coeffs = (float(desc["radius"]),)
    else:
        coeffs = default
    if not coeffs:
        raise DomainError("empty radius profile")
    return coeffs


def build_domain(desc: dict) -> TubularDomain:
    """Build a tubular domain from a descriptor mapping.

    Recognised descriptors::

        {"kind": "straight-cylinder", "radius": 1.0, "length": 1.0}
        {"kind": "expanding-tube", "radius_coeffs": [1.0, 1.0], "length": 1.0}
        {"kind": "curved-tube", "bend_radius": 1.0, "angle": pi/2,
         "radius": 0.2}                       # or "radius_coeffs"

    Raises
    ------
    DomainError
        Unknown kind, non-positive radius, self-intersecting centreline or a
        degenerate Jacobian at a probe point.
    """
    desc = dict(desc)
    kind = desc.get("kind")
    if kind not in DOMAIN_KINDS:
        raise DomainError(f"unknown domain kind {kind!r}; expected one of {DOMAIN_KINDS}")
    if kind == "straight-cylinder":
        coeffs = _radius_coeffs(desc, (1.0,))
        if len(coeffs) != 1:
            raise DomainError("straight-cylinder takes a constant radius")
        center = Centerline(length=float(desc.get("length", 1.0)))
    elif kind == "expanding-tube":
        coeffs = _radius_coeffs(desc, (1.0, 1.0))
        center = Centerline(length=float(desc.get("length", 1.0)))
    else:
        coeffs = _radius_coeffs(desc, (0.2,))
        bend = float(desc.get("bend_radius", 1.0))
        angle = float(desc.get("angle", np.pi / 2))
        if bend <= 0 or angle <= 0:
            raise DomainError("curved-tube needs positive bend_radius and angle")
        center = Centerline(length=bend * angle, bend_radius=bend)
    if center.length <= 0:
        raise DomainError("domain length must be positive")
    dom = TubularDomain(kind=kind, centerline=center, radius_coeffs=coeffs, descriptor=desc)
    _check_domain(dom)
    return dom


def _check_domain(dom: TubularDomain, n_probe=1000, seed=0):
    zs = np.linspace(0.0, 1.0, 401)
    if np.any(dom.radius(zs) <= 0):
        raise DomainError("radius must be positive on [0, 1]")
    rmax = dom.max_radius
    if dom.centerline.bend_radius is not None and rmax >= dom.centerline.bend_radius:
        raise DomainError("tube radius reaches the centreline's radius of curvature")
    # self-intersection: non-adjacent centreline samples closer than 2 r_max
    pts = dom.centerline.samples(200)
    seg = dom.centerline.length / 199
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    idx = np.arange(len(pts))
    gap = np.abs(idx[:, None] - idx[None, :]) * seg
    nonadjacent = gap > np.pi * rmax + 2 * seg
    if np.any(d[nonadjacent] < 2 * rmax):
        raise DomainError("centreline comes within two tube radii of itself")
    rng = np.random.default_rng(seed)
    x = random_reference_points(n_probe, rng)
    det = np.linalg.det(dom.jacobian(x))
    if not np.all(det > 0):
        raise DomainError("embedding Jacobian degenerate or orientation-reversing")


def random_reference_points(n, rng, rho_max=1.0):
    """Uniform samples in the reference cylinder (area-uniform in the disc)."""
    rho = rho_max * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    z = rng.random(n)
    return np.stack([rho * np.cos(th), rho * np.sin(th), z], axis=1)
