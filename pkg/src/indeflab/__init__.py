"""Numerical laboratory for superlinear indefinite elliptic problems.

Discretizes the semilinear problem L u = lambda*u + a(x)*u^r with mixed
boundary conditions, traces positive-solution branches to numerical
blow-up, and verifies the quantitative boundary-distance estimates
(weak Harnack inequality, blow-up rate lower bound, rescaling flatness,
sublevel-measure decay, eigenvalue contradiction quantities, measure
density, critical exponents).
"""

from .config import ExperimentConfig, parse_config
from .continuation import (
    Branch,
    BlowupSequence,
    StepControl,
    StopRule,
    blowup_sequence,
    detect_turning,
    trace,
)
from .eigen import EigenPair, boundary_flux, principal_dirichlet, principal_weighted
from .errors import (
    AssemblyError,
    ConfigError,
    ConvergenceError,
    EllipticityError,
    HypothesisViolation,
    InvalidDomainError,
    SingularJacobianError,
)
from .estimates import (
    EstimateConfig,
    blowup_exponent,
    bounds_transfer,
    check_blowup_estimate,
    check_weak_harnack,
    collar_inclusion,
    critical_exponents,
    eigen_identity,
    flatness,
    harnack_ratio,
    lq_norm,
    rescale,
    sublevel_decay,
)
from .geometry import (
    DistanceField,
    DomainSpec,
    Grid,
    WeightField,
    WeightSpec,
    build_grid,
    build_weight,
    distance_field,
    fit_density_constant,
    measure_density,
    rescaled_domain_contains_ball,
    sublevel_measure,
    validate_boundary_components,
)
from .newton import ProblemInstance, Solution, jacobian, newton, sub_super_init
from .operators import (
    BoundarySpec,
    DiffusionTensor,
    DiscreteOperator,
    apply_operator,
    assemble,
    build_boundary,
    build_diffusion,
    ellipticity_constant,
    green_identity_defect,
    residual,
)
from .pipelines import RunManifest, run

__version__ = "0.1.0"
