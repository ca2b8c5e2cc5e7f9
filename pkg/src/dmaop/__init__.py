"""Numerical optimal transport on triangulated domains.

Solves Monge's problem with quadratic cost by minimizing a convex
volume-weighted penalty over piecewise-affine potentials subject to
supporting-hyperplane, target-membership and positive-semidefiniteness
constraints, then reconstructs the convex potential whose gradient is
the transport map.
"""

from .discretization import (
    ConstraintResiduals,
    DecisionVector,
    discrete_jacobian,
    discrete_jacobians,
    hyperplane_matrix,
    objective,
    penalty_arguments,
    residuals,
    restriction_cost,
)
from .errors import BarrierDomainError, DegenerateSimplexError, InputError
from .mesh import (
    Mesh,
    MeshQualityReport,
    load_mesh,
    locate,
    quality,
    save_mesh,
    triangulate_polygon,
)
from .potential import (
    OptimizationPotential,
    build_potential,
    gradient_field,
    hessian_field,
)
from .problem import (
    DiscTarget,
    GaussianFlooredDensity,
    GridDensity,
    PolygonTarget,
    ProblemInstance,
    UniformDensity,
    instance_from_config,
    mass_normalize,
    source_mass,
    target_mass,
)
from .solver import (
    Solution,
    SolveReport,
    SolverOptions,
    epigraph_assemble,
    feasible_init,
    load_solution,
    save_solution,
    solve,
)
from .transport import (
    DiscreteMap,
    QuadraticReference,
    StudyResult,
    StudyRow,
    assignment_oracle,
    convergence_study,
    cyclical_check,
    discrete_map,
    displacement,
    identity_reference,
    scaling_reference,
    translation_reference,
    two_sided_cost,
)

__version__ = "0.1.0"
