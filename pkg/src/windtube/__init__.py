"""Field line winding and helicity of braided vector fields in tubular domains."""

from .embedding import CylinderEmbedding, EmbeddingMap, build_embedding, map_curve, map_curves
from .fields import BraidedField, make_field, validate_braided
from .geometry import TubularDomain, build_domain
from .harmonic import check_nonnull, gradient_field, solve_phi, solve_surface_coords
from .helicity import (check_solenoidal, field_line_helicity, total_helicity,
                       winding_gauge_potential)
from .mesh import Mesh, generate_mesh
from .tracing import FieldLine, trace_field_line, trace_lines
from .winding import (field_line_winding, make_grid, pairwise_winding, trace_bundle,
                      weighted_winding)

__version__ = "0.1.0"

__all__ = [
    "BraidedField", "CylinderEmbedding", "EmbeddingMap", "FieldLine", "Mesh", "TubularDomain",
    "build_domain", "build_embedding", "check_nonnull", "check_solenoidal",
    "field_line_helicity", "field_line_winding", "generate_mesh", "gradient_field", "make_field",
    "make_grid", "map_curve", "map_curves", "pairwise_winding", "solve_phi",
    "solve_surface_coords", "total_helicity", "trace_bundle", "trace_field_line", "trace_lines",
    "validate_braided", "weighted_winding", "winding_gauge_potential",
]
