import json
import math

import numpy as np
import pytest

from windtube.io import (DISTRIBUTION_HEADER, read_distribution_csv, read_vtk_scalars,
                         sha256_file, write_distribution_csv, write_sidecar, write_vtk_boundary,
                         write_vtk_mesh)
from windtube.mesh import generate_mesh
from windtube.winding import WindingDistribution, make_grid


@pytest.fixture(scope="module")
def small_mesh(straight):
    return generate_mesh(straight, 0.3)


def test_vtk_mesh_arrays_round_trip(tmp_path, small_mesh):
    phi = small_mesh.vertices[:, 2] / 3.0
    path = tmp_path / "mesh.vtk"
    write_vtk_mesh(path, small_mesh, {"phi": phi, "u_mag": np.ones(small_mesh.n_vertices)})
    text = path.read_text()
    assert f"POINTS {small_mesh.n_vertices} double" in text
    assert f"CELL_TYPES {len(small_mesh.tets)}" in text
    arrays = read_vtk_scalars(path)
    assert np.array_equal(arrays["phi"], phi)
    assert np.all(arrays["u_mag"] == 1.0)
    with pytest.raises(ValueError):
        write_vtk_mesh(tmp_path / "bad.vtk", small_mesh, {"phi": phi[:-1]})


def test_vtk_boundary_tags(tmp_path, small_mesh):
    path = tmp_path / "boundary.vtk"
    write_vtk_boundary(path, small_mesh)
    tags = read_vtk_scalars(path)["boundary_tag"]
    assert np.array_equal(tags, small_mesh.boundary_tags)
    assert set(np.unique(tags)) == {0, 1, 2}
    assert "\n5\n" in path.read_text()


def _dist():
    grid = make_grid(3)
    vals = np.linspace(-1, 2, len(grid)) * math.pi
    return WindingDistribution(grid=grid, values=vals, kind="Lv", points=grid.nodes,
                               node_index=np.arange(len(grid)))


def test_distribution_csv_round_trip(tmp_path):
    dist = _dist()
    path = tmp_path / "Lv.csv"
    write_distribution_csv(path, dist)
    assert path.read_text().splitlines()[0] == ",".join(DISTRIBUTION_HEADER)
    rows = read_distribution_csv(path)
    assert np.array_equal(rows[:, :2], dist.points)
    assert np.array_equal(rows[:, 4], dist.grid.weights)
    assert np.array_equal(rows[:, 5], dist.values)
    assert np.allclose(rows[:, 2], np.hypot(*dist.points.T), rtol=0, atol=1e-15)
    assert np.all((rows[:, 3] >= 0) & (rows[:, 3] < 2 * math.pi))


def test_off_grid_probes_get_zero_weight(tmp_path):
    grid = make_grid(3)
    dist = WindingDistribution(grid=grid, values=np.array([0.5]), kind="Lv",
                               points=np.array([[0.1, -0.2]]), node_index=np.array([-1]))
    write_distribution_csv(tmp_path / "p.csv", dist)
    assert read_distribution_csv(tmp_path / "p.csv")[0, 4] == 0.0


def test_distribution_csv_rejects_a_foreign_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_distribution_csv(p)


def test_sidecar_records_checksums(tmp_path):
    art = tmp_path / "Lv.csv"
    write_distribution_csv(art, _dist())
    cfg = {"grid": {"n_r": np.int64(3)}, "tolerances": {"trace": np.float64(1e-8)}}
    record = write_sidecar(tmp_path / "wind.json", cfg, {"distribution": art},
                           {"H": float("nan"), "values": np.arange(2.0)})
    loaded = json.loads((tmp_path / "wind.json").read_text())
    assert loaded == record
    assert loaded["artifacts"]["distribution"] == {"file": "Lv.csv", "sha256": sha256_file(art)}
    assert loaded["config"] == {"grid": {"n_r": 3}, "tolerances": {"trace": 1e-8}}
    assert loaded["results"]["H"] == "nan"
    assert loaded["results"]["values"] == [0.0, 1.0]


def test_sha256_of_known_bytes(tmp_path):
    p = tmp_path / "abc"
    p.write_bytes(b"abc")
    assert sha256_file(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
