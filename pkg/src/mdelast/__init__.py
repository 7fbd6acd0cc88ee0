"""Mixed-dimensional linear elasticity with thin inclusions.

Conforming mixed finite elements with weakly enforced stress symmetry on a
hierarchy of manifolds (bulk, line inclusions, junction points) coupled
through codimension-one interfaces, plus the verification harness that turns
the stability and convergence theory into executable checks.
"""

from mdelast.geometry import (
    GeometryError,
    Interface,
    Manifold,
    MixedDimGeometry,
    decompose,
    epsilon_max,
    load_geometry,
    validate,
)
from mdelast.meshing import MeshError, MixedMesh, build_mesh, refine, trace_cells
from mdelast.elements import (
    FamilyChoice,
    SpaceSet,
    UnsupportedFamilyError,
    build_spaces,
    canonical_interpolate,
)
from mdelast.fields import MixedField
from mdelast.mdops import (
    curl_matrix,
    divergence_matrix,
    jump,
    md_curl,
    md_divergence,
    md_gradient,
    skw_apply,
)
from mdelast.assembly import (
    MaterialLaw,
    SaddleSystem,
    assemble_a,
    assemble_b,
    assemble_rhs,
    assemble_system,
    compliance_apply,
    interface_compliance,
    load_config,
)
from mdelast.solver import (
    SolutionFields,
    SolveError,
    postprocess_stress,
    solve,
    weighted_norms,
    write_vtk,
)
from mdelast.verify import (
    LCG,
    ManufacturedCase,
    complex_check,
    conservation_check,
    convergence_study,
    infsup_estimate,
    manufactured_case,
    strong_form_residual,
    weak_symmetry_check,
)

__all__ = [
    "FamilyChoice",
    "GeometryError",
    "Interface",
    "LCG",
    "Manifold",
    "ManufacturedCase",
    "MaterialLaw",
    "MeshError",
    "MixedDimGeometry",
    "MixedField",
    "MixedMesh",
    "SaddleSystem",
    "SolutionFields",
    "SolveError",
    "SpaceSet",
    "UnsupportedFamilyError",
    "assemble_a",
    "assemble_b",
    "assemble_rhs",
    "assemble_system",
    "build_mesh",
    "build_spaces",
    "canonical_interpolate",
    "complex_check",
    "compliance_apply",
    "conservation_check",
    "convergence_study",
    "curl_matrix",
    "decompose",
    "divergence_matrix",
    "epsilon_max",
    "infsup_estimate",
    "interface_compliance",
    "jump",
    "load_config",
    "load_geometry",
    "manufactured_case",
    "md_curl",
    "md_divergence",
    "md_gradient",
    "postprocess_stress",
    "refine",
    "skw_apply",
    "solve",
    "strong_form_residual",
    "trace_cells",
    "validate",
    "weak_symmetry_check",
    "weighted_norms",
    "write_vtk",
]

__version__ = "0.1.0"
