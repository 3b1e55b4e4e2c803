"""Viscosity-limit solver and verifier for degenerate elliptic systems ``A:D^2u = f``."""

from .domain_grid import (
    ConvexDomain,
    GridFunction,
    ProblemGrid,
    build_grid,
    divergence,
    from_csv,
    gradient,
    inner_product,
    l2_norm,
    to_csv,
)
from .errors import (
    BandEmpty,
    CompatibilityViolation,
    DegeneratePencil,
    DegensolveError,
    DimensionMismatch,
    EmptyInterior,
    EstimateBlowup,
    GridMismatch,
    NonConvergence,
    NotCertified,
    ShapeMismatch,
    SigmaFull,
    TensorValidationError,
    TestMapNotInSigma,
    WrongDomain,
)
from .problem import FIXTURE_NAMES, Problem, load_fixture, problem_from_json
from .tensor_algebra import (
    Certification,
    QuadraticForm,
    SHDecomposition,
    SubspacePair,
    analyze_tensor,
    check_sh,
    lh_constant,
    rank_one_certify,
    spectral_split,
    subspace_pair,
    tensor_from_json,
    tensor_to_json,
    validate,
)
from .verification import TestMap, VerificationReport, example2_oracle, poincare_sup, verify_solution
from .viscosity_solver import EpsilonSchedule, SolveReport, compatibility_check, solve_degenerate, solve_epsilon

__version__ = "0.1.0"
