"""Discontinuous Galerkin solvers for -Lap_Gamma u + u = f on closed implicit surfaces."""
from .errors import (DegenerateInput, DegenerateJacobian, IllConditionedLift, NoConvergence,
                     OutOfTube, SingularMass, SurfaceDGError)
from .geometry import ImplicitSurface, LevelSet, Sphere, Torus
from .mesh import SurfaceMesh, base_mesh, icosphere, refine, torus_base
from .curved import CurvedMesh, GeoDiagnostics, geometric_diagnostics
from .dgspace import DGField, DGSpace, DoFMap, VectorDGField, dg_norm, interpolate
from .methods import SCHEMES, LinearSystem, MethodConfig, assemble, penalty, stabilization_matrix
from .analysis import (ErrorReport, SolveOptions, convergence_study, eoc, error_norms,
                       geometry_study, solve)

__version__ = "0.1.0"
