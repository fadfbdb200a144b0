"""
Artifact writers: legacy VTK meshes, distribution CSV files and JSON sidecars.

Floats are written with ``repr``, the shortest decimal string that reads
back to the same double, so identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math

import numpy as np

from .mesh import TAGS, Mesh

DISTRIBUTION_HEADER = ("x1", "x2", "r", "theta", "weight", "value")


def _fmt(v) -> str:
    return repr(float(v))


def write_vtk_mesh(path, mesh: Mesh, point_data: dict | None = None, title="windtube mesh"):
    """Legacy ASCII unstructured grid of the tetrahedra (cell type 10)."""
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for p in mesh.vertices:
            fh.write(" ".join(_fmt(c) for c in p) + "\n")
        m = len(mesh.tets)
        fh.write(f"CELLS {m} {5 * m}\n")
        for t in mesh.tets:
            fh.write("4 " + " ".join(str(int(i)) for i in t) + "\n")
        fh.write(f"CELL_TYPES {m}\n")
        fh.write("10\n" * m)
        if point_data:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            for name, values in point_data.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (mesh.n_vertices,):
                    raise ValueError(f"point data {name!r} needs one value per vertex")
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in values:
                    fh.write(_fmt(v) + "\n")


def write_vtk_boundary(path, mesh: Mesh, title="windtube boundary"):
    """Boundary triangles (cell type 5) with the integer cell array ``boundary_tag``.

    Tags: 0 = S0 (lower cap), 1 = S1 (upper cap), 2 = side.
    """
    faces = mesh.boundary_faces
    used, local = np.unique(faces, return_inverse=True)
    local = local.reshape(-1, 3)
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title} (tags {', '.join(TAGS)})\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(used)} double\n")
        for p in mesh.vertices[used]:
            fh.write(" ".join(_fmt(c) for c in p) + "\n")
        m = len(local)
        fh.write(f"CELLS {m} {4 * m}\n")
        for f in local:
            fh.write("3 " + " ".join(str(int(i)) for i in f) + "\n")
        fh.write(f"CELL_TYPES {m}\n")
        fh.write("5\n" * m)
        fh.write(f"CELL_DATA {m}\nSCALARS boundary_tag int 1\nLOOKUP_TABLE default\n")
        for t in mesh.boundary_tags:
            fh.write(f"{int(t)}\n")


def read_vtk_scalars(path):
    """Named scalar arrays of a legacy ASCII file written by this module."""
    out = {}
    with open(path) as fh:
        lines = fh.read().split("\n")
    i = 0
    count = None
    while i < len(lines):
        parts = lines[i].split()
        if parts and parts[0] in ("POINT_DATA", "CELL_DATA"):
            count = int(parts[1])
        elif parts and parts[0] == "SCALARS":
            name = parts[1]
            vals = [float(x) for x in lines[i + 2:i + 2 + count]]
            out[name] = np.array(vals)
            i += 1 + count
        i += 1
    return out


def write_distribution_csv(path, dist, weights=None):
    """One row per probe: ``x1,x2,r,theta,weight,value``.

    ``weight`` is the quadrature weight of the probe's grid node (0 for
    off-grid probes) unless ``weights`` is given.
    """
    pts = np.asarray(dist.points, dtype=float)
    if weights is None:
        w = np.where(dist.node_index >= 0, dist.grid.weights[np.maximum(dist.node_index, 0)], 0.0)
    else:
        w = np.asarray(weights, dtype=float)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(DISTRIBUTION_HEADER)
        for (x1, x2), wk, v in zip(pts, w, dist.values):
            r = math.hypot(x1, x2)
            th = math.atan2(x2, x1) % (2 * math.pi)
            wr.writerow([_fmt(x1), _fmt(x2), _fmt(r), _fmt(th), _fmt(wk), _fmt(v)])


def read_distribution_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = next(rd)
        if tuple(head) != DISTRIBUTION_HEADER:
            raise ValueError(f"unexpected header {head}")
        rows = [[float(v) for v in rec] for rec in rd]
    return np.array(rows).reshape(-1, len(DISTRIBUTION_HEADER))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_sidecar(path, config: dict, artifacts: dict, results: dict | None = None):
    """JSON record of the effective config, results and sha256 of each artifact.

    ``artifacts`` maps a label to a file path; checksums are computed here.
    """
    record = {
        "config": _jsonable(config),
        "results": _jsonable(results or {}),
        "artifacts": {label: {"file": str(p.name if hasattr(p, "name") else p),
                              "sha256": sha256_file(p)}
                      for label, p in sorted(artifacts.items())},
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


__all__ = ["write_vtk_mesh", "write_vtk_boundary", "read_vtk_scalars", "write_distribution_csv",
           "read_distribution_csv", "write_sidecar", "sha256_file", "DISTRIBUTION_HEADER"]
