"""Two-scale compliance optimization of perforated elastic plates.

Macroscopic linear elasticity on adaptive quadrilateral meshes over
microstructured cells (rotated crosses of stiff material), with
homogenized cell responses, a dual-weighted error estimator that
separates discretization from model reduction effects, per-element
design optimization, and an adaptive refine/optimize driver.
"""

from .config import RunConfig, load_config
from .estimator import ErrorBreakdown, assemble_indicators, estimate
from .fem import DisplacementField, MacroProblem
from .laminate import (alternating_optimize, layer_tensor_entries,
                       newton_invert)
from .mesh import QuadMesh, mark_bulk
from .microcell import MicroParams, axis_tensor, effective_tensor
from .optimize import (AdaptiveResult, DesignState, DirectCellEvaluator,
                       TableCellEvaluator, adaptive_loop, initial_design,
                       optimize)
from .scenario import Scenario, make_scenario
from .tensor import IsotropicMaterial

__all__ = [
    "AdaptiveResult", "DesignState", "DirectCellEvaluator",
    "DisplacementField", "ErrorBreakdown", "IsotropicMaterial",
    "MacroProblem", "MicroParams", "QuadMesh", "RunConfig", "Scenario",
    "TableCellEvaluator", "adaptive_loop", "alternating_optimize",
    "assemble_indicators", "axis_tensor", "effective_tensor", "estimate",
    "initial_design", "layer_tensor_entries", "load_config", "mark_bulk",
    "make_scenario", "newton_invert", "optimize",
]
