"""
Command-line front end.

A run is described by a TOML file with the sections ``[domain]``, ``[field]``,
``[mesh]``, ``[grid]``, ``[tolerances]``, ``[embedding]`` and ``[run]``;
command-line flags override the file. Every run records its full effective
configuration in a JSON sidecar. Exit codes: 0 success, 2 configuration
error, 3 numerical failure, 4 validation failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .embedding import EMBED_MODES, MappingError, build_embedding
from .fields import FieldError, make_field, validate_braided
from .geometry import DOMAIN_KINDS, DomainError, build_domain
from .harmonic import SolverError, check_nonnull, discrete_flux, gradient_field, solve_phi
from .helicity import (NotSolenoidalError, check_mesh_for, check_solenoidal, field_line_helicity,
                       total_helicity)
from .io import write_distribution_csv, write_sidecar, write_vtk_boundary, write_vtk_mesh
from .mesh import MeshError, generate_mesh
from .tracing import TracingError, write_lines_csv
from .winding import (SingularPairError, field_line_winding, make_grid, set_workers,
                      trace_bundle)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

COMMANDS = ("solve", "trace", "wind", "helicity", "verify")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 2, 3, 4

DEFAULTS = {
    "domain": {"kind": "straight-cylinder"},
    "field": {"kind": "uniform-twist", "k": 2 * math.pi},
    "mesh": {"resolution": 0.1},
    "grid": {"n_r": 24, "kind": "area"},
    "tolerances": {"trace": 1e-8, "solver": 1e-10, "solenoidal": 1e-3, "null_floor": 1e-3},
    "embedding": {"mode": "auto", "origin_arc": 0.0},
    "run": {"command": "wind", "out": "windtube-out", "threads": 0},
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class ValidationFailure(RuntimeError):
    """Inputs or results fail a correctness check."""


NUMERICAL_ERRORS = (SolverError, TracingError, MappingError, SingularPairError, MeshError,
                    FloatingPointError, np.linalg.LinAlgError)


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("field", "domain"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive(value, name):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number") from None
    if not (v > 0 and math.isfinite(v)):
        raise ConfigError(f"{name} must be positive, got {value!r}")
    return v


def normalize_config(raw: dict) -> dict:
    """Fill defaults and validate. Raises ``ConfigError`` before any computation."""
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    if cfg["domain"].get("kind") not in DOMAIN_KINDS:
        raise ConfigError(f"domain kind must be one of {DOMAIN_KINDS}")
    if "kind" not in cfg["field"]:
        raise ConfigError("field needs a kind")
    cfg["mesh"]["resolution"] = _positive(cfg["mesh"]["resolution"], "mesh.resolution")
    g = cfg["grid"]
    if g["kind"] not in ("area", "polar"):
        raise ConfigError("grid.kind must be 'area' or 'polar'")
    if not isinstance(g["n_r"], int) or isinstance(g["n_r"], bool) or g["n_r"] < 2:
        raise ConfigError("grid.n_r must be an integer >= 2")
    if "n_theta" in g and (not isinstance(g["n_theta"], int) or g["n_theta"] < 3):
        raise ConfigError("grid.n_theta must be an integer >= 3")
    for name in ("trace", "solver", "solenoidal"):
        cfg["tolerances"][name] = _positive(cfg["tolerances"][name], f"tolerances.{name}")
    floor = float(cfg["tolerances"]["null_floor"])
    if not 0 < floor < 1:
        raise ConfigError("tolerances.null_floor must lie in (0, 1)")
    cfg["tolerances"]["null_floor"] = floor
    if cfg["embedding"]["mode"] not in EMBED_MODES:
        raise ConfigError(f"embedding.mode must be one of {EMBED_MODES}")
    cfg["embedding"]["origin_arc"] = float(cfg["embedding"]["origin_arc"])
    run = cfg["run"]
    if run["command"] not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}")
    threads = run["threads"]
    if not isinstance(threads, int) or threads < 0:
        raise ConfigError("run.threads must be a non-negative integer (0 = all cores)")
    run["out"] = str(run["out"])
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc


def resolve_threads(flag, cfg_threads):
    """Worker count: flag, then WINDTUBE_THREADS, then the config, then all cores."""
    if flag is not None:
        n = flag
    elif os.environ.get("WINDTUBE_THREADS"):
        try:
            n = int(os.environ["WINDTUBE_THREADS"])
        except ValueError:
            raise ConfigError("WINDTUBE_THREADS must be an integer") from None
    else:
        n = cfg_threads
    if n < 0:
        raise ConfigError("thread count must be non-negative")
    return n or (os.cpu_count() or 1)


def _apply_threads(n):
    set_workers(n)


class Run:
    """One pipeline execution; tracks written files so failures can remove them."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.out = Path(cfg["run"]["out"])
        self.written = []
        self.stage = "setup"
        self.results = {}

    def path(self, name):
        p = self.out / name
        self.written.append(p)
        return p

    def cleanup(self):
        for p in self.written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass

    # ---- stages --------------------------------------------------------------

    def domain(self):
        self.stage = "domain"
        return build_domain(self.cfg["domain"])

    def embedding(self, dom):
        self.stage = "embedding"
        e = self.cfg["embedding"]
        return build_embedding(dom, resolution=self.cfg["mesh"]["resolution"], mode=e["mode"],
                               tol=self.cfg["tolerances"]["trace"], origin_arc=e["origin_arc"],
                               solver_rtol=self.cfg["tolerances"]["solver"])

    def field(self, dom, emap):
        self.stage = "field"
        spec = self.cfg["field"]
        mesh = getattr(emap, "mesh", None)
        if mesh is None and spec["kind"] == "mesh-sampled":
            mesh = generate_mesh(dom, self.cfg["mesh"]["resolution"])
        try:
            fld = make_field(spec, dom, u=emap.u_field, mesh=mesh, validate=False)
        except (FieldError, OSError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"field: {exc}") from exc
        if spec["kind"] != "s-curve":
            report = validate_braided(fld)
            if not report.passed:
                raise ValidationFailure(f"field is not braided: {report.first_violation()}")
        return fld

    def grid(self):
        g = self.cfg["grid"]
        return make_grid(g["n_r"], kind=g["kind"], n_theta=g.get("n_theta"))

    # ---- commands ------------------------------------------------------------

    def solve(self):
        dom = self.domain()
        self.stage = "mesh"
        mesh = generate_mesh(dom, self.cfg["mesh"]["resolution"])
        self.stage = "solve"
        phi = solve_phi(mesh, rtol=self.cfg["tolerances"]["solver"])
        u = gradient_field(phi)
        self.stage = "null-audit"
        audit = check_nonnull(u, self.cfg["tolerances"]["null_floor"])
        f0, f1 = discrete_flux(phi)
        self.results.update(n_vertices=mesh.n_vertices, n_elements=len(mesh.tets),
                            cg_iterations=phi.iterations, cg_residual=phi.residual,
                            flux_in=f0, flux_out=f1, null_audit=str(audit))
        if not audit.passed:
            raise ValidationFailure(str(audit))
        self.stage = "write"
        write_vtk_mesh(self.path("mesh.vtk"), mesh, {"phi": phi.values, "u_mag": u.magnitude()})
        write_vtk_boundary(self.path("boundary.vtk"), mesh)
        return {"mesh": self.out / "mesh.vtk", "boundary": self.out / "boundary.vtk"}

    def trace(self):
        dom = self.domain()
        emap = self.embedding(dom)
        fld = self.field(dom, emap)
        grid = self.grid()
        self.stage = "trace"
        bundle = trace_bundle(fld, emap, grid.nodes, tol=self.cfg["tolerances"]["trace"])
        self.results.update(n_lines=len(bundle), n_nonmonotone=int((~bundle.monotone).sum()))
        self.stage = "write"
        write_lines_csv(self.path("lines.csv"), bundle.lines)
        return {"lines": self.out / "lines.csv"}

    def _bundle(self):
        dom = self.domain()
        emap = self.embedding(dom)
        fld = self.field(dom, emap)
        grid = self.grid()
        self.stage = "trace"
        bundle = trace_bundle(fld, emap, grid.nodes, tol=self.cfg["tolerances"]["trace"])
        return dom, emap, fld, grid, bundle

    def wind(self):
        dom, emap, fld, grid, bundle = self._bundle()
        self.stage = "wind"
        dist = field_line_winding(fld, emap, grid, bundle=bundle)
        self.results.update(kind="Lv", min=float(dist.values.min()), max=float(dist.values.max()),
                            weighted_mean=float(np.sum(grid.weights * dist.values) / math.pi))
        self.stage = "write"
        write_distribution_csv(self.path("Lv.csv"), dist)
        return {"distribution": self.out / "Lv.csv"}

    def helicity(self):
        dom, emap, fld, grid, bundle = self._bundle()
        self.stage = "solenoidal-check"
        mesh = check_mesh_for(fld, emap)
        report = check_solenoidal(fld, mesh, self.cfg["tolerances"]["solenoidal"])
        self.results.update(divergence=str(report))
        if not report.passed:
            raise ValidationFailure(str(report))
        self.stage = "helicity"
        dist = field_line_helicity(fld, emap, grid, bundle=bundle,
                                   sol_tol=self.cfg["tolerances"]["solenoidal"], mesh=mesh)
        H = total_helicity(dist, dist.meta["bz0"], dist.meta["J0"])
        self.results.update(kind="Ab", total_helicity=H, min=float(dist.values.min()),
                            max=float(dist.values.max()))
        self.stage = "write"
        write_distribution_csv(self.path("Ab.csv"), dist)
        return {"distribution": self.out / "Ab.csv"}

    def verify(self):
        from .verify import run_suite

        self.stage = "verify"
        results = run_suite()
        for r in results:
            print(r.row())
        self.results.update(checks=[r.as_dict() for r in results])
        self.stage = "write"
        if not all(r.passed for r in results):
            failed = ", ".join(r.name for r in results if not r.passed)
            raise ValidationFailure(f"verification failed: {failed}")
        return {}

    def execute(self):
        command = self.cfg["run"]["command"]
        self.out.mkdir(parents=True, exist_ok=True)
        artifacts = getattr(self, command)()
        self.stage = "write"
        sidecar = self.path(f"{command}.json")
        write_sidecar(sidecar, self.cfg, artifacts, self.results)
        return sidecar


def build_parser():
    p = argparse.ArgumentParser(prog="windtube", description=__doc__.strip().split("\n")[0])
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--command", choices=COMMANDS, help="pipeline to run (overrides [run].command)")
    p.add_argument("--out", help="output directory (overrides [run].out)")
    p.add_argument("--threads", type=int, help="worker count; falls back to WINDTUBE_THREADS")
    p.add_argument("--tol-trace", type=float, help="field line tracing tolerance")
    p.add_argument("--grid-nr", type=int, help="number of radial quadrature rings")
    return p


def _error(stage, exc, code, out=None):
    record = {"status": "error", "exit_code": code, "stage": stage,
              "error": type(exc).__name__, "message": str(exc)}
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = "config"
    out = Path(args.out) if args.out else None
    try:
        raw = load_config(args.config) if args.config else {}
        raw = copy.deepcopy(raw)
        run = raw.setdefault("run", {})
        if args.command:
            run["command"] = args.command
        if args.out:
            run["out"] = args.out
        if args.tol_trace is not None:
            raw.setdefault("tolerances", {})["trace"] = args.tol_trace
        if args.grid_nr is not None:
            raw.setdefault("grid", {})["n_r"] = args.grid_nr
        cfg = normalize_config(raw)
        cfg["run"]["threads"] = resolve_threads(args.threads, cfg["run"]["threads"])
        out = Path(cfg["run"]["out"])
        _apply_threads(cfg["run"]["threads"])
    except ConfigError as exc:
        return _error(stage, exc, EXIT_CONFIG, out)
    job = Run(cfg)
    stale = out / "error.json"
    if stale.exists():
        stale.unlink()
    try:
        sidecar = job.execute()
    except (ConfigError, DomainError) as exc:
        job.cleanup()
        return _error(job.stage, exc, EXIT_CONFIG, out)
    except (ValidationFailure, NotSolenoidalError) as exc:
        job.cleanup()
        return _error(job.stage, exc, EXIT_VALIDATION, out)
    except NUMERICAL_ERRORS as exc:
        job.cleanup()
        return _error(job.stage, exc, EXIT_NUMERICAL, out)
    except (ValueError, RuntimeError, OSError) as exc:
        job.cleanup()
        return _error(job.stage, exc, EXIT_NUMERICAL, out)
    print(f"wrote {sidecar}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
