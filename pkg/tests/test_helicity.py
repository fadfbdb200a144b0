import math

import numpy as np
import pytest

from windtube.embedding import build_embedding
from windtube.fields import BraidedField, make_field
from windtube.geometry import build_domain
from windtube.helicity import (NotSolenoidalError, check_mesh_for, check_solenoidal,
                               field_line_helicity, helicity_weights, line_integral,
                               total_helicity, winding_gauge_potential)
from windtube.mesh import generate_mesh
from windtube.winding import GridMismatchError, make_grid, trace_bundle, weighted_winding


@pytest.fixture(scope="module")
def straight_mesh(straight):
    return generate_mesh(straight, 0.1)


def test_twist_is_solenoidal(twist, straight_mesh):
    for rule in ("edge", "midpoint"):
        rep = check_solenoidal(twist, straight_mesh, rule=rule)
        assert rep.passed and rep.rms < 1e-10


def test_expanding_field_fails_with_unit_divergence(straight, straight_mesh):
    fld = make_field({"kind": "affine", "matrix": [[1, 0, 0], [0, 0, 0], [0, 0, 0]],
                      "offset": [0, 0, 1]}, straight, validate=False)
    rep = check_solenoidal(fld, straight_mesh)
    assert not rep.passed
    # divergence 1 everywhere, reported relative to mean|b| / h
    assert rep.max == pytest.approx(rep.rms, rel=1e-6)
    assert rep.rms * rep.scale == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(ValueError):
        check_solenoidal(fld, straight_mesh, rule="simpson")


def test_harmonic_u_is_solenoidal_on_the_cylinder_mesh(straight_mesh_map):
    rep = check_solenoidal(straight_mesh_map.u_field, straight_mesh_map.mesh)
    assert rep.passed and rep.rms < 1e-12


def test_check_mesh_choice(twist, cylinder_map, straight_mesh_map):
    assert check_mesh_for(straight_mesh_map.u_field, straight_mesh_map) is straight_mesh_map.mesh
    m1 = check_mesh_for(twist, cylinder_map)
    assert m1 is check_mesh_for(twist, straight_mesh_map)


def test_helicity_rejects_divergent_fields(straight, cylinder_map):
    fld = make_field({"kind": "affine", "matrix": [[1, 0, 0], [0, 0, 0], [0, 0, 0]],
                      "offset": [0, 0, 1]}, straight, validate=False)
    with pytest.raises(NotSolenoidalError):
        field_line_helicity(fld, cylinder_map, make_grid(4))


@pytest.mark.parametrize("k", [math.pi, 2 * math.pi, -3.0])
def test_twist_helicity_is_half_k(straight, cylinder_map, k):
    fld = make_field({"kind": "uniform-twist", "k": k}, straight)
    ab = field_line_helicity(fld, cylinder_map, make_grid(12))
    assert np.abs(ab.values / (k / 2) - 1).max() < 0.02
    assert ab.kind == "Ab"


def test_total_helicity_of_one_turn_and_its_mirror(straight, cylinder_map):
    grid = make_grid(12)
    out = {}
    for k in (2 * math.pi, -2 * math.pi):
        fld = make_field({"kind": "uniform-twist", "k": k}, straight)
        ab = field_line_helicity(fld, cylinder_map, grid)
        out[k] = total_helicity(ab, ab.meta["bz0"], ab.meta["J0"])
    assert out[2 * math.pi] == pytest.approx(math.pi ** 2, rel=0.03)
    assert out[-2 * math.pi] == -out[2 * math.pi]


def test_direct_double_quadrature_of_pair_windings(twist, cylinder_map):
    # H as the flux-weighted double sum of pairwise windings, assembled here by hand
    from windtube.winding import winding_matrix

    grid = make_grid(12)
    bundle = trace_bundle(twist, cylinder_map, grid.nodes)
    W = winding_matrix(bundle, bundle)
    J0, bz = helicity_weights(twist, cylinder_map, grid)
    flux = grid.weights * J0 * bz
    H_direct = flux @ W @ flux
    ab = field_line_helicity(twist, cylinder_map, grid, bundle=bundle)
    assert total_helicity(ab, bz, J0) == pytest.approx(H_direct, rel=1e-12)


def test_u_has_zero_helicity(straight_mesh_map):
    grid = make_grid(5)
    ab = field_line_helicity(straight_mesh_map.u_field, straight_mesh_map, grid,
                             tol=straight_mesh_map.tol)
    assert np.abs(ab.values).max() < 1e-4
    assert abs(total_helicity(ab, ab.meta["bz0"], ab.meta["J0"])) < 1e-4


def test_helicity_is_the_flux_weighted_winding_bitwise(twist, cylinder_map):
    grid = make_grid(8)
    bundle = trace_bundle(twist, cylinder_map, grid.nodes)
    ab = field_line_helicity(twist, cylinder_map, grid, bundle=bundle)
    J0, bz = helicity_weights(twist, cylinder_map, grid)
    wv = weighted_winding(twist, cylinder_map, grid, w=J0 * bz, bundle=bundle)
    assert np.array_equal(ab.values, wv.values)


def test_doubling_b_doubles_helicity_and_keeps_winding(twist, cylinder_map):
    grid = make_grid(8)
    ab1 = field_line_helicity(twist, cylinder_map, grid).values
    ab2 = field_line_helicity(twist.scaled(2.0), cylinder_map, grid).values
    assert np.abs(ab2 / (2 * ab1) - 1).max() <= 1e-6


def test_flux_weight_on_a_wide_cylinder():
    R = 1.5
    dom = build_domain({"kind": "straight-cylinder", "radius": R})
    emap = build_embedding(dom)
    fld = make_field({"kind": "uniform-twist", "k": 2.0}, dom)
    grid = make_grid(10)
    J0, bz = helicity_weights(fld, emap, grid)
    assert np.allclose(J0, R * R, rtol=1e-12)
    assert np.allclose(bz, 1.0, rtol=1e-12)
    ab = field_line_helicity(fld, emap, grid)
    # each pair winds k / (2 pi); the total flux is pi R^2
    assert np.abs(ab.values / (2.0 / 2 * R * R) - 1).max() < 0.02


def test_total_helicity_grid_mismatch(twist, cylinder_map):
    grid = make_grid(6)
    ab = field_line_helicity(twist, cylinder_map, grid)
    with pytest.raises(GridMismatchError):
        total_helicity(ab, ab.meta["bz0"][:-1], ab.meta["J0"])
    partial = field_line_helicity(twist, cylinder_map, grid, probe=np.array([0, 1]))
    with pytest.raises(GridMismatchError):
        total_helicity(partial, ab.meta["bz0"], ab.meta["J0"])


# ---- winding gauge ---------------------------------------------------------------------


def test_uniform_axial_field_gives_the_rotational_gauge(straight):
    b = BraidedField(kind="axial", evaluate=lambda y: np.tile([0.0, 0.0, 1.0], (len(y), 1)),
                     domain=straight)
    pts = np.array([[0.0, 0.0, 0.5], [0.3, -0.2, 0.1], [-0.6, 0.5, 0.9], [0.85, 0.0, 0.3]])
    a = winding_gauge_potential(b, pts, straight)
    expected = np.column_stack([-pts[:, 1] / 2, pts[:, 0] / 2, np.zeros(len(pts))])
    assert np.abs(a - expected).max() < 1e-3


def test_gauge_needs_interior_points_on_a_straight_cylinder(twist, straight, expanding):
    with pytest.raises(ValueError):
        winding_gauge_potential(twist, [[1.2, 0.0, 0.5]], straight)
    with pytest.raises(ValueError):
        winding_gauge_potential(twist, [[0.2, 0.0, 0.5]], expanding)


def test_line_integral_of_a_gradient_is_the_potential_difference():
    pts = np.column_stack([np.cos(np.linspace(0, 2, 200)), np.sin(np.linspace(0, 2, 200)),
                           np.linspace(0, 1, 200)])
    # a = grad(x y + z)
    val = line_integral(lambda p: np.column_stack([p[:, 1], p[:, 0], np.ones(len(p))]), pts)
    f = lambda p: p[0] * p[1] + p[2]  # noqa: E731
    assert val == pytest.approx(f(pts[-1]) - f(pts[0]), abs=1e-4)
