"""Two-scale phase-field topology optimization for plane linear elasticity.

The package couples a macroscopic topology field (phi) with a microscopic
stiffness-grading field (chi), minimizing compliance under a volume
constraint and a global p-norm von Mises stress penalty, and exports the
optimized layout as threshold-split, extruded STL geometry.
"""

from gradtopo.config import (RunConfig, benchmark_config, cantilever_config,
                             load_config, validate)
from gradtopo.mesh import Mesh, build_rect_mesh
from gradtopo.material import MaterialModel
from gradtopo.optimizer import Optimizer, OptimizerState, run

__all__ = [
    "RunConfig",
    "cantilever_config",
    "benchmark_config",
    "load_config",
    "validate",
    "Mesh",
    "build_rect_mesh",
    "MaterialModel",
    "Optimizer",
    "OptimizerState",
    "run",
]
