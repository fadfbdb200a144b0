"""
Braided vector fields behind a single evaluation interface.

Analytic generators are written as a velocity ``w`` in reference-cylinder
coordinates with unit axial component and pushed forward through the domain
Jacobian, ``v(y) = J(x) w(x)`` with ``x = embed^-1(y)``. An in-plane ``w``
that vanishes at the reference side keeps ``v`` tangent to the side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import TubularDomain, random_reference_points
from .mesh import Mesh, SSIDE, S0, S1


class FieldError(ValueError):
    """Invalid field descriptor or braidedness violation."""


FIELD_KINDS = ("harmonic-u", "uniform-twist", "braid-composite", "perturbed", "scaled",
               "mesh-sampled", "affine", "s-curve")


@dataclass(eq=False)
class BraidedField:
    """Evaluable vector field on a tubular domain.

    ``discretized`` marks mesh-interpolated fields, whose side tangency only
    holds to discretisation accuracy.
    """

    kind: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    domain: TubularDomain | None = None
    params: dict = field(default_factory=dict)
    discretized: bool = False
    solenoidal: bool | None = None

    def __call__(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self.evaluate(points)

    def eval(self, points):
        return self(points)

    def scaled(self, factor, modulation=0.0):
        return make_field({"kind": "scaled", "factor": factor, "modulation": modulation},
                          self.domain, base=self, validate=False)


@dataclass
class ValidationReport:
    passed: bool
    n_probes: int
    max_side_ratio: float
    min_axial_s0: float
    min_axial_s1: float
    min_magnitude: float
    violations: list = field(default_factory=list)

    def first_violation(self):
        return self.violations[0] if self.violations else None

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        text = (f"braided validation {status}: {self.n_probes} probes, max |v.n|/|v| on side "
                f"{self.max_side_ratio:.2e}, min z.v/|v| on S0 {self.min_axial_s0:.3f}, "
                f"on S1 {self.min_axial_s1:.3f}")
        if self.violations:
            text += f"; first violation {self.violations[0]}"
        return text


# ---- reference-space generators -------------------------------------------


def _pushforward(domain: TubularDomain, w_ref: Callable[[np.ndarray], np.ndarray]):
    def evaluate(y):
        x = domain.inverse(y)
        J = domain.jacobian(x)
        return np.einsum("nij,nj->ni", J, w_ref(x))
    return evaluate


def _bump_z(z, z0, z1, profile):
    """Axial rate profile with unit integral over [z0, z1]."""
    dz = z1 - z0
    s = (z - z0) / dz
    inside = (s >= 0) & (s <= 1)
    if profile == "uniform":
        return np.where(inside, 1.0 / dz, 0.0)
    return np.where(inside, (1.0 - np.cos(2 * np.pi * s)) / dz, 0.0)


def _radial_profile(rho, a):
    if a is None:
        return np.ones_like(rho)
    q = np.clip(rho / a, 0.0, 1.0)
    return (1.0 - q * q) ** 3


def _radial_profile_derivative(rho, a):
    if a is None:
        return np.zeros_like(rho)
    q = np.clip(rho / a, 0.0, 1.0)
    return -6.0 * q * (1.0 - q * q) ** 2 / a


def twist_region_velocity(x, region):
    """In-plane reference velocity of one localized twist region."""
    cx, cy = region.get("center", (0.0, 0.0))
    a = region.get("radius")
    k = float(region["k"])
    z0, z1 = region.get("z", (0.0, 1.0))
    dx = x[:, 0] - cx
    dy = x[:, 1] - cy
    rho = np.hypot(dx, dy)
    rate = k * _bump_z(x[:, 2], z0, z1, region.get("profile", "smooth")) * _radial_profile(rho, a)
    return np.stack([-rate * dy, rate * dx], axis=1)


def _check_region(region):
    if "k" not in region:
        raise FieldError("twist region needs k")
    a = region.get("radius")
    cx, cy = region.get("center", (0.0, 0.0))
    if a is None:
        if (cx, cy) != (0.0, 0.0) and (cx, cy) != [0.0, 0.0]:
            raise FieldError("a whole-disc twist region must be centred on the axis")
    elif a <= 0 or np.hypot(cx, cy) + a > 1.0 + 1e-12:
        raise FieldError("twist region must lie inside the unit disc")
    z0, z1 = region.get("z", (0.0, 1.0))
    if not 0.0 <= z0 < z1 <= 1.0:
        raise FieldError("twist region z-interval must satisfy 0 <= z0 < z1 <= 1")


def composite_reference_velocity(regions):
    for r in regions:
        _check_region(r)

    def w(x):
        out = np.zeros_like(x)
        out[:, 2] = 1.0
        for r in regions:
            out[:, :2] += twist_region_velocity(x, r)
        return out
    return w


class InPlaneIsotopy:
    """Rotation of the reference disc about ``center`` by ``beta(z) g(rho)``.

    ``beta(z) = amplitude * sin(pi z)**2`` vanishes with its derivative at
    both end caps, so the deformation is end-vanishing.
    """

    def __init__(self, amplitude, center=(0.0, 0.0), radius=0.5):
        self.amplitude = float(amplitude)
        self.center = np.asarray(center, dtype=float)
        self.radius = radius
        if radius is not None and np.hypot(*self.center) + radius > 1.0 + 1e-12:
            raise FieldError("isotopy support must lie inside the unit disc")

    def beta(self, z):
        return self.amplitude * np.sin(np.pi * z) ** 2

    def dbeta(self, z):
        return self.amplitude * np.pi * np.sin(2 * np.pi * z)

    def _angle(self, p, z):
        d = p - self.center
        rho = np.hypot(d[:, 0], d[:, 1])
        return self.beta(z) * _radial_profile(rho, self.radius), d, rho

    def apply(self, x, inverse=False):
        ang, d, _ = self._angle(x[:, :2], x[:, 2])
        if inverse:
            ang = -ang
        c, s = np.cos(ang), np.sin(ang)
        out = x.copy()
        out[:, 0] = self.center[0] + c * d[:, 0] - s * d[:, 1]
        out[:, 1] = self.center[1] + s * d[:, 0] + c * d[:, 1]
        return out

    def jacobian(self, x):
        """Full 3x3 derivative of (p, z) -> (Psi_z(p), z)."""
        z = x[:, 2]
        ang, d, rho = self._angle(x[:, :2], z)
        c, s = np.cos(ang), np.sin(ang)
        R = np.stack([np.stack([c, -s], axis=1), np.stack([s, c], axis=1)], axis=1)
        Rd = np.stack([np.stack([-s, -c], axis=1), np.stack([c, -s], axis=1)], axis=1)
        Rdd = np.einsum("nij,nj->ni", Rd, d)
        gp = _radial_profile_derivative(rho, self.radius)
        safe = np.where(rho > 0, rho, 1.0)
        grad_ang = (self.beta(z) * gp / safe)[:, None] * d
        D = np.zeros((len(x), 3, 3))
        D[:, :2, :2] = R + Rdd[:, :, None] * grad_ang[:, None, :]
        D[:, :2, 2] = Rdd * (self.dbeta(z) * _radial_profile(rho, self.radius))[:, None]
        D[:, 2, 2] = 1.0
        return D


def perturbed_evaluator(domain: TubularDomain, base: Callable, iso: InPlaneIsotopy):
    def evaluate(y):
        xp = domain.inverse(y)
        z = xp[:, 2]
        x = iso.apply(xp, inverse=True)
        yb = domain.embed(x)
        vb = base(yb)
        xdot = np.linalg.solve(domain.jacobian(x), vb[..., None])[..., 0]
        xpdot = np.einsum("nij,nj->ni", iso.jacobian(x), xdot)
        out = np.einsum("nij,nj->ni", domain.jacobian(xp), xpdot)
        ends = (z <= 0.0) | (z >= 1.0)
        if np.any(ends):
            out[ends] = base(y[ends])
        return out
    return evaluate


def s_curve_evaluator(x_start=-0.6, span=1.2):
    """Non-monotone fixture on the unit cylinder.

    Lines follow ``y1 = x_start + span t``, ``y3 = z0 + t + sin(2 pi t)/pi``,
    which rise, fall back between t = 1/3 and t = 2/3, then rise again.
    """
    def evaluate(y):
        t = (y[:, 0] - x_start) / span
        out = np.zeros_like(y)
        out[:, 0] = span
        out[:, 2] = 1.0 + 2.0 * np.cos(2 * np.pi * t)
        return out
    return evaluate


S_CURVE_TURNING_HEIGHTS = (1.0 / 3 + np.sqrt(3) / (2 * np.pi), 2.0 / 3 - np.sqrt(3) / (2 * np.pi))


def read_field_csv(path, n_vertices=None):
    """Read ``vertex,v1,v2,v3`` rows (optional header) into an (n, 3) array."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append((int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3])))
            except (ValueError, IndexError):
                if rows:
                    raise FieldError(f"malformed field row {rec!r}")
                continue  # header
    if not rows:
        raise FieldError(f"no field rows in {path}")
    idx = np.array([r[0] for r in rows])
    n = n_vertices if n_vertices is not None else idx.max() + 1
    if idx.min() < 0 or idx.max() >= n:
        raise FieldError("vertex index out of range")
    vals = np.full((n, 3), np.nan)
    vals[idx] = np.array([r[1:] for r in rows])
    if np.isnan(vals).any():
        raise FieldError("field CSV does not cover every mesh vertex")
    return vals


def make_field(spec: dict, domain: TubularDomain, u=None, base: BraidedField | None = None,
               mesh: Mesh | None = None, validate: bool = True) -> BraidedField:
    """Build a field from a descriptor.

    Descriptors::

        {"kind": "harmonic-u"}                         # needs u
        {"kind": "uniform-twist", "k": 6.28}
        {"kind": "braid-composite", "regions": [
            {"center": [0.3, 0.0], "radius": 0.6, "k": 3.14, "z": [0.0, 0.5]}, ...]}
        {"kind": "perturbed", "base": {...}, "amplitude": 0.8,
         "center": [0.2, 0.1], "radius": 0.5}
        {"kind": "scaled", "base": {...}, "factor": 5.0, "modulation": 0.5}
        {"kind": "mesh-sampled", "path": "field.csv"}  # needs mesh
        {"kind": "affine", "matrix": [[...]], "offset": [...]}   # test fixtures
        {"kind": "s-curve"}                                       # non-monotone fixture

    Raises
    ------
    FieldError
        Bad descriptor, or braidedness validation fails (message names the
        first violating probe).
    """
    kind = spec.get("kind")
    if kind not in FIELD_KINDS:
        raise FieldError(f"unknown field kind {kind!r}")
    params = {k: v for k, v in spec.items() if k != "kind"}
    discretized = False
    solenoidal = None
    if kind == "harmonic-u":
        if u is None:
            raise FieldError("harmonic-u needs the solved gradient field")
        evaluate = u
        discretized = True
        solenoidal = True
    elif kind == "uniform-twist":
        k = float(spec.get("k", 2 * np.pi))
        region = {"k": k, "radius": None, "profile": "uniform"}
        evaluate = _pushforward(domain, composite_reference_velocity([region]))
        solenoidal = domain.kind == "straight-cylinder"
    elif kind == "braid-composite":
        regions = [dict(r) for r in spec.get("regions", [])]
        if not regions:
            raise FieldError("braid-composite needs at least one region")
        evaluate = _pushforward(domain, composite_reference_velocity(regions))
        solenoidal = domain.kind == "straight-cylinder"
    elif kind in ("perturbed", "scaled"):
        if base is None:
            if "base" not in spec:
                raise FieldError(f"{kind} needs a base field")
            base = make_field(spec["base"], domain, u=u, mesh=mesh, validate=False)
        discretized = base.discretized
        if kind == "perturbed":
            iso = InPlaneIsotopy(spec.get("amplitude", 1.0), spec.get("center", (0.0, 0.0)),
                                 spec.get("radius", 0.5))
            evaluate = perturbed_evaluator(domain, base, iso)
        else:
            factor = float(spec.get("factor", 1.0))
            mod = float(spec.get("modulation", 0.0))
            if factor <= 0 or abs(mod) >= 1:
                raise FieldError("scaling must stay positive")

            def evaluate(y, base=base, factor=factor, mod=mod):
                z = domain.inverse(y)[:, 2] if mod else 0.0
                return (factor * (1.0 + mod * np.sin(np.pi * z)))[..., None] * base(y) \
                    if mod else factor * base(y)
        params = {k: v for k, v in params.items() if k != "base"}
        params["base"] = {"kind": base.kind, **base.params}
    elif kind == "mesh-sampled":
        if mesh is None:
            raise FieldError("mesh-sampled needs a mesh")
        if "vectors" in spec:
            vec = np.asarray(spec["vectors"], dtype=float)
            params.pop("vectors")
        else:
            vec = read_field_csv(spec["path"], mesh.n_vertices)

        def evaluate(y, vec=vec):
            return mesh.interpolate(vec, y)[0]
        discretized = True
    elif kind == "affine":
        A = np.asarray(spec.get("matrix", np.zeros((3, 3))), dtype=float)
        b = np.asarray(spec.get("offset", [0.0, 0.0, 1.0]), dtype=float)

        def evaluate(y, A=A, b=b):
            return y @ A.T + b
        solenoidal = bool(abs(np.trace(A)) < 1e-14)
    else:
        evaluate = s_curve_evaluator(spec.get("x_start", -0.6), spec.get("span", 1.2))
        validate = False
    fld = BraidedField(kind=kind, evaluate=evaluate, domain=domain, params=params,
                       discretized=discretized, solenoidal=solenoidal)
    if validate:
        report = validate_braided(fld, mesh=None, n_probe=1000)
        if not report.passed:
            raise FieldError(f"field {kind} is not braided: {report.first_violation()}")
    return fld


def _boundary_probes(domain, n, rng):
    """Reference points on the side and on both caps."""
    n_side = n // 2
    n_cap = (n - n_side) // 2
    th = 2 * np.pi * rng.random(n_side)
    side = np.stack([np.cos(th), np.sin(th), rng.random(n_side)], axis=1)
    caps = []
    for z in (0.0, 1.0):
        p = random_reference_points(n_cap, rng)
        p[:, 2] = z
        caps.append(p)
    return side, caps[0], caps[1]


def validate_braided(fld: BraidedField, mesh: Mesh | None = None, n_probe: int = 1000,
                     n_interior: int = 1000, side_tol: float | None = None,
                     seed: int = 0) -> ValidationReport:
    """Check side tangency, positive axial flow on both caps and non-vanishing.

    Probe points are boundary-face centroids of ``mesh`` (pulled onto the
    analytic boundary) when a mesh is given, otherwise ``n_probe`` random
    analytic boundary points; ``n_interior`` random interior points are
    checked for non-vanishing in both cases.
    """
    dom = fld.domain
    rng = np.random.default_rng(seed)
    if side_tol is None:
        side_tol = 0.1 if fld.discretized else 1e-8
    if mesh is not None:
        ref = mesh.ref_vertices[mesh.boundary_faces].mean(axis=1)
        tags = mesh.boundary_tags
        side = ref[tags == SSIDE]
        rho = np.hypot(side[:, 0], side[:, 1])
        side[:, :2] /= rho[:, None]
        cap0 = ref[tags == S0]
        cap1 = ref[tags == S1]
    else:
        side, cap0, cap1 = _boundary_probes(dom, n_probe, rng)
    interior = random_reference_points(n_interior, rng, rho_max=1.0 - 1e-9)
    violations = []

    vs = fld(dom.embed(side))
    ns = dom.side_normal(side)
    mag = np.linalg.norm(vs, axis=1)
    ratio = np.abs(np.einsum("ij,ij->i", vs, ns)) / np.where(mag > 0, mag, 1.0)
    for i in np.flatnonzero(ratio > side_tol)[:10]:
        violations.append(("Sside", dom.embed(side[i:i + 1])[0].tolist(), float(ratio[i])))
    mins = []
    for name, cap in (("S0", cap0), ("S1", cap1)):
        v = fld(dom.embed(cap))
        zhat = dom.axial_normal(cap)
        m = np.linalg.norm(v, axis=1)
        a = np.einsum("ij,ij->i", v, zhat) / np.where(m > 0, m, 1.0)
        mins.append(float(a.min()))
        for i in np.flatnonzero(~(a > 0))[:10]:
            violations.append((name, dom.embed(cap[i:i + 1])[0].tolist(), float(a[i])))
    allpts = np.concatenate([side, cap0, cap1, interior])
    vmag = np.linalg.norm(fld(dom.embed(allpts)), axis=1)
    bad = ~(np.isfinite(vmag) & (vmag > 0))
    for i in np.flatnonzero(bad)[:10]:
        violations.append(("null", dom.embed(allpts[i:i + 1])[0].tolist(), float(vmag[i])))
    return ValidationReport(passed=not violations, n_probes=len(allpts),
                            max_side_ratio=float(ratio.max()) if len(ratio) else 0.0,
                            min_axial_s0=mins[0], min_axial_s1=mins[1],
                            min_magnitude=float(vmag.min()), violations=violations)
