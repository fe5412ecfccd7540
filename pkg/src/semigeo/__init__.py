"""Desk-scale Eulerian simulator for the incompressible semi-geostrophic
equations: one variable-coefficient div-curl solve per forward Euler step,
with convexity, energy, and support diagnostics."""

from .coriolis import (
    CoriolisField,
    PerturbationError,
    assemble_coriolis_coefficient,
    constant_coriolis,
    coriolis_transport_data,
    kf_inverse,
    linear_coriolis,
    make_coriolis_field,
    make_coriolis_step,
    step_coriolis,
)
from .diagnostics import (
    DiagnosticsRecord,
    PushforwardHistogram,
    curl_residual,
    emit_record,
    energy,
    pushforward_histogram,
    support_bound_check,
)
from .divcurl import (
    DarcyProblem,
    DarcySolution,
    DivCurlData,
    EllipticityError,
    SingularTensorError,
    SolverConvergenceError,
    invert_3x3,
    recover_velocity,
    reduce_to_darcy,
    solve_darcy,
    solve_divcurl,
    verify_estimate,
)
from .grid import (
    GridSpec,
    ScalarField,
    TensorField,
    VectorField,
    curl,
    divergence,
    gradient,
    hessian,
    lp_norm,
    min_hessian_eigenvalue,
    sobolev_norm,
)
from .stepper import (
    ConvexityError,
    GeopotentialState,
    RunResult,
    SchemeConfig,
    SchemeConstants,
    compute_constants,
    growth_bound_check,
    init_state,
    mean_tilt,
    run,
    step,
    transport_data,
)

__version__ = "0.1.0"
