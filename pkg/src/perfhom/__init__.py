"""Constructive homogenization of a Poisson transmission problem in a
partially perforated planar domain.

The package builds the full approximation pipeline:

- ``mesh``: periodicity-cell, semi-infinite-strip, macroscopic, and
  fine-scale triangulations with region tags and duplicated interfaces;
- ``fem``: P1 assembly, affine constraints, sparse solves, and split
  error norms;
- ``cell``: periodic cell correctors and effective coefficients;
- ``layer``: strip boundary-layer correctors with exponential-decay
  verification and interface transmission constants;
- ``homogenized``: effective interface problems for the leading and
  first-order macroscopic fields, with superconvergent interface traces;
- ``corrector``: two-scale composite approximations (flat and
  oscillating interface) and error reports against fine solves;
- ``direct``: the fine-scale reference solver;
- ``cli``: configuration, convergence studies with fitted rates, and the
  ``perfhom`` command-line entry point.
"""

from .cell import (
    CellSolution,
    EffectiveCoefficients,
    cell_means,
    check_symmetries,
    effective_coefficients,
    solve_cell,
)
from .cli import (
    RateFit,
    StageError,
    StudyConfig,
    StudyReport,
    fit_rate,
    run_study,
)
from .corrector import (
    CompositeField,
    CutOff,
    assemble_A1,
    assemble_U_osc,
    error_report,
    interpolate_field,
    v0_field,
)
from .direct import GALERKIN_TOL, solve_fine_flat, solve_fine_osc
from .fem import (
    BACKEND,
    ConstraintError,
    ConstraintSet,
    DiffusionTensor,
    ErrorNorms,
    FemFunction,
    SolverError,
    error_norms,
    nodal_error_norms,
)
from .homogenized import (
    DEFAULT_MACRO_H,
    InterfaceTraces,
    MacroModel,
    MacroSolution,
    ThetaHat,
    solve_v0,
    solve_v1_flat,
    source_fields,
    theta_hat,
)
from .layer import (
    DecayEstimate,
    LayerSolution,
    TruncationError,
    curve_flux_constant,
    estimate_decay,
    far_residual,
    fit_decay,
    flat_flux_constant,
    second_order_constants,
    solve_layer,
    truncation_check,
)
from .mesh import (
    GeometryError,
    HoleSpec,
    InterfaceCurve,
    MeshBudgetError,
    REGION_MINUS,
    REGION_PLUS,
    TriMesh,
    build_cell_mesh,
    build_eps_mesh,
    build_macro_mesh,
    build_strip_mesh,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CellSolution",
    "CompositeField",
    "ConstraintError",
    "ConstraintSet",
    "CutOff",
    "DEFAULT_MACRO_H",
    "DecayEstimate",
    "DiffusionTensor",
    "EffectiveCoefficients",
    "ErrorNorms",
    "FemFunction",
    "GALERKIN_TOL",
    "GeometryError",
    "HoleSpec",
    "InterfaceCurve",
    "InterfaceTraces",
    "LayerSolution",
    "MacroModel",
    "MacroSolution",
    "MeshBudgetError",
    "RateFit",
    "REGION_MINUS",
    "REGION_PLUS",
    "SolverError",
    "StageError",
    "StudyConfig",
    "StudyReport",
    "ThetaHat",
    "TriMesh",
    "TruncationError",
    "assemble_A1",
    "assemble_U_osc",
    "build_cell_mesh",
    "build_eps_mesh",
    "build_macro_mesh",
    "build_strip_mesh",
    "cell_means",
    "check_symmetries",
    "curve_flux_constant",
    "effective_coefficients",
    "error_norms",
    "error_report",
    "estimate_decay",
    "far_residual",
    "fit_decay",
    "fit_rate",
    "flat_flux_constant",
    "interpolate_field",
    "nodal_error_norms",
    "run_study",
    "second_order_constants",
    "solve_cell",
    "solve_fine_flat",
    "solve_fine_osc",
    "solve_layer",
    "solve_v0",
    "solve_v1_flat",
    "source_fields",
    "theta_hat",
    "truncation_check",
    "v0_field",
    "__version__",
]
