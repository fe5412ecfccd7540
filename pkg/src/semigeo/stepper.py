"""Forward Euler scheme for the active transport of a convex geopotential.

Each step assembles the transport source f = J(grad P - x) and the
coefficient A = D2P, solves the div-curl system for the velocity through the
scalar reduction, and updates the potential by P <- P - eps * q.  Because the
state stores the potential itself, the transported field grad P stays a
discrete gradient exactly; conservativity never has to be monitored, only
asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .divcurl import (
    DarcySolution,
    DivCurlData,
    EllipticityError,
    SolverConvergenceError,
    reduce_to_darcy,
    solve_darcy,
    verify_estimate,
)
from .grid import (
    GridSpec,
    ScalarField,
    TensorField,
    VectorField,
    gradient,
    hessian,
    min_hessian_eigenvalue,
    sobolev_norm,
)

__all__ = [
    "ConvexityError",
    "GeopotentialState",
    "SchemeConstants",
    "SchemeConfig",
    "GrowthCheck",
    "RunResult",
    "apply_rotation",
    "preset_potential",
    "init_state",
    "mean_tilt",
    "compute_constants",
    "transport_data",
    "step",
    "run",
    "growth_bound_check",
]


class ConvexityError(ValueError):
    """Geopotential lost (or never had) uniform convexity."""

    def __init__(self, message, cell=None, eigenvalue=None):
        super().__init__(message)
        self.cell = cell
        self.eigenvalue = eigenvalue


def apply_rotation(v: np.ndarray) -> np.ndarray:
    """The rotation matrix J applied per cell: (v1, v2, v3) -> (-v2, v1, 0)."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    out[..., 2] = 0.0
    return out


@dataclass(frozen=True)
class GeopotentialState:
    """Mean-zero generalised geopotential with cached derivatives.

    Caches are rebuilt on every update; lambda0 is the convexity modulus of
    the initial state, carried along the trajectory.
    """

    p: ScalarField
    time: float
    grad_p: VectorField
    hess: TensorField
    lambda_min: float
    lambda_argmin: tuple[int, int, int]
    lambda0: float

    @property
    def spec(self) -> GridSpec:
        return self.p.spec


def _build_state(values: np.ndarray, spec: GridSpec, time: float,
                 lambda0: float | None = None) -> GeopotentialState:
    vals = np.asarray(values, dtype=float) - float(np.mean(values))
    p = ScalarField(spec, vals)
    grad_p = gradient(p)
    hess = hessian(p)
    lam, cell = min_hessian_eigenvalue(hess)
    if lambda0 is None:
        if lam <= 0.0:
            raise ConvexityError(
                f"initial potential is not uniformly convex: smallest Hessian "
                f"eigenvalue {lam:.6e} at cell {cell}",
                cell=cell,
                eigenvalue=lam,
            )
        lambda0 = lam
    return GeopotentialState(
        p=p, time=time, grad_p=grad_p, hess=hess,
        lambda_min=lam, lambda_argmin=cell, lambda0=float(lambda0),
    )


def preset_potential(name: str, spec: GridSpec, *, tilt=None, quad=None,
                     delta: float = 0.01, k: int = 1) -> np.ndarray:
    """Sample one of the built-in initial potentials on the grid.

    identity:   |x|^2 / 2
    tilt:       |x|^2 / 2 + a.x
    quadratic:  x^T Q x / 2 for SPD Q (diagonal given as a 3-vector)
    bump:       |x|^2 / 2 + delta * prod_i sin(k pi xi_i), xi in unit coords
    """
    x = spec.cell_centers()
    base = 0.5 * np.sum(x**2, axis=-1)
    if name == "identity":
        return base
    if name == "tilt":
        a = np.asarray(tilt if tilt is not None else (0.1, 0.0, 0.0), dtype=float)
        return base + np.einsum("...a,a->...", x, a)
    if name == "quadratic":
        q = np.asarray(quad if quad is not None else (2.0, 1.0, 0.5), dtype=float)
        if q.shape == (3,):
            q = np.diag(q)
        if q.shape != (3, 3):
            raise ValueError("quadratic preset needs a 3-vector diagonal or a 3x3 matrix")
        return 0.5 * np.einsum("...a,ab,...b->...", x, q, x)
    if name == "bump":
        xi = [(x[..., a] - spec.origin[a]) / spec.extents[a] for a in range(3)]
        wave = np.prod([np.sin(k * np.pi * c) for c in xi], axis=0)
        return base + float(delta) * wave
    raise ValueError(f"unknown preset {name!r}")


def init_state(source, spec: GridSpec | None = None, *, time: float = 0.0,
               **preset_params) -> GeopotentialState:
    """Build the initial state from a preset name, a ScalarField, or raw values.

    Rejects potentials that are not uniformly convex on the grid, reporting
    the offending cell and eigenvalue.
    """
    if isinstance(source, str):
        if spec is None:
            raise ValueError("a GridSpec is required with a preset name")
        values = preset_potential(source, spec, **preset_params)
    elif isinstance(source, ScalarField):
        spec = source.spec
        values = source.values
    else:
        if spec is None:
            raise ValueError("a GridSpec is required with raw values")
        values = np.asarray(source, dtype=float)
    return _build_state(values, spec, time)


def mean_tilt(s: GeopotentialState) -> np.ndarray:
    """Volume mean of grad P - x; recovers a exactly on tilt-type states."""
    return np.array([
        float(np.mean(s.grad_p.values[..., a] - s.spec.cell_centers()[..., a]))
        for a in range(3)
    ])


@dataclass(frozen=True)
class SchemeConstants:
    """Scheme parameters; tau_star is indicative, computable only up to the
    configured constants c_star and c_m."""

    lambda0: float
    omega: float
    m_star: float
    c_star: float
    c_m: float
    kappa: float
    tau_star: float
    p: float


def compute_constants(s: GeopotentialState, p: float = 4.0, c_star: float = 1.0,
                      c_m: float = 1.0) -> SchemeConstants:
    """Evaluate the discrete scheme constants and the guaranteed horizon.

    tau_star = log(1 + lambda0 / (6 c_m (kappa + |grad P0|_{W^3,p}))) / (1 + 2 c_star)
    with kappa = (omega + 2 c_star |domain|^{1/p}) / (1 + 2 c_star) and omega
    the W^{3,p} size of the rotation field J x, realised through the
    horizontal quadratic whose gradient matches it.
    """
    if p <= 3.0:
        raise ValueError(f"Lebesgue exponent must exceed 3, got {p}")
    if c_star <= 0.0 or c_m <= 0.0:
        raise ValueError("c_star and c_m must be positive")
    spec = s.spec
    x = spec.cell_centers()
    horizontal = ScalarField(spec, 0.5 * (x[..., 0] ** 2 + x[..., 1] ** 2))
    omega = sobolev_norm(horizontal, 3, p)
    grad_norm = sobolev_norm(s.p, 3, p)

    hv = s.hess.values
    frob = np.sqrt(np.sum(hv**2, axis=(-2, -1)))
    alpha = 1.0 - 3.0 / p
    quotient = 0.0
    for a in range(3):
        sl_hi = [slice(None)] * 3
        sl_lo = [slice(None)] * 3
        sl_hi[a] = slice(1, None)
        sl_lo[a] = slice(None, -1)
        d = hv[tuple(sl_hi)] - hv[tuple(sl_lo)]
        dn = np.sqrt(np.sum(d**2, axis=(-2, -1)))
        quotient = max(quotient, float(np.max(dn)) / spec.spacing[a] ** alpha)
    m_star = float(np.max(frob)) + quotient + s.lambda0 / 6.0

    volume_term = spec.volume ** (1.0 / p)
    kappa = (omega + 2.0 * c_star * volume_term) / (1.0 + 2.0 * c_star)
    tau_star = math.log1p(s.lambda0 / (6.0 * c_m * (kappa + grad_norm))) / (1.0 + 2.0 * c_star)
    return SchemeConstants(
        lambda0=s.lambda0, omega=omega, m_star=m_star, c_star=c_star,
        c_m=c_m, kappa=kappa, tau_star=tau_star, p=p,
    )


def transport_data(s: GeopotentialState) -> DivCurlData:
    """Coefficient and curl-source of the velocity system at this state:
    A = D2P and f = J(grad P - x)."""
    x = s.spec.cell_centers()
    f = apply_rotation(s.grad_p.values - x)
    return DivCurlData(a=s.hess, f=VectorField(s.spec, f))


def step(s: GeopotentialState, epsilon: float, tol: float = 1e-10,
         maxiter: int | None = None) -> tuple[GeopotentialState, DarcySolution]:
    """One forward Euler step: solve for q, update P <- P - eps q.

    The new transported field is grad(P - eps q), a discrete gradient by
    construction.  Raises ConvexityError or SolverConvergenceError with the
    state unchanged when the step cannot be taken.
    """
    if s.lambda_min <= 0.0:
        raise ConvexityError(
            f"cannot step: Hessian eigenvalue {s.lambda_min:.6e} at cell "
            f"{s.lambda_argmin} is not positive",
            cell=s.lambda_argmin,
            eigenvalue=s.lambda_min,
        )
    sol = solve_darcy(reduce_to_darcy(transport_data(s)), tol=tol, maxiter=maxiter)
    new_vals = s.p.values - epsilon * sol.q.values
    new_state = _build_state(new_vals, s.spec, s.time + epsilon, lambda0=s.lambda0)
    return new_state, sol


@dataclass(frozen=True)
class SchemeConfig:
    """Time discretisation and run policy.

    Exactly one of epsilon / n_steps may be left unset when a horizon is
    available; the other is derived.  auto_horizon uses the computed tau_star.
    """

    epsilon: float | None = None
    n_steps: int | None = None
    horizon: float | None = None
    auto_horizon: bool = False
    tol: float = 1e-10
    maxiter: int | None = None
    convexity_floor: bool = True
    floor_fraction: float = 0.5
    record_every: int = 1

    def __post_init__(self):
        if self.epsilon is None and self.n_steps is None:
            raise ValueError("one of epsilon or n_steps is required")
        if self.epsilon is not None and self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.n_steps is not None and self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.horizon is not None and self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.horizon is None and not self.auto_horizon:
            if self.epsilon is None or self.n_steps is None:
                raise ValueError("without a horizon both epsilon and n_steps are required")
        if self.horizon is not None and self.auto_horizon:
            raise ValueError("give either an explicit horizon or auto_horizon, not both")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")


@dataclass
class RunResult:
    states: list
    records: list
    solutions: list
    halt_reason: str
    constants: SchemeConstants
    epsilon: float
    n_steps: int


def _resolve_schedule(config: SchemeConfig, constants: SchemeConstants):
    horizon = config.horizon
    if config.auto_horizon:
        horizon = constants.tau_star
    if config.epsilon is not None and config.n_steps is not None:
        return config.epsilon, config.n_steps
    if config.epsilon is not None:
        return config.epsilon, max(1, math.ceil(horizon / config.epsilon - 1e-12))
    return horizon / config.n_steps, config.n_steps


def run(s0: GeopotentialState, config: SchemeConfig,
        constants: SchemeConstants | None = None, step_fn=None,
        data_fn=None) -> RunResult:
    """Execute the scheme, emitting one DiagnosticsRecord per cadence tick.

    Early halts (convexity floor, solver failure, lost ellipticity) are
    structured outcomes recorded in halt_reason, not exceptions.  step_fn and
    data_fn default to the base scheme; variants (variable rotation) supply
    their own step and matching div-curl data for the estimate ratios.
    """
    from .diagnostics import emit_record

    if constants is None:
        constants = compute_constants(s0)
    epsilon, n_steps = _resolve_schedule(config, constants)
    if step_fn is None:
        step_fn = step
    if data_fn is None:
        data_fn = transport_data

    states = [s0]
    solutions = []
    records = [emit_record(s0, None, constants, step=0)]
    halt_reason = "completed"
    state = s0
    for j in range(1, n_steps + 1):
        try:
            new_state, sol = step_fn(state, epsilon, config.tol, config.maxiter)
        except (ConvexityError, EllipticityError) as err:
            halt_reason = f"convexity lost at step {j}: {err}"
            break
        except SolverConvergenceError as err:
            halt_reason = f"solver failed at step {j}: {err}"
            break
        ratios = verify_estimate(sol.u, data_fn(state), constants.p)
        sol.est_ratio_u = ratios.u_ratio
        sol.est_ratio_au = ratios.au_ratio
        states.append(new_state)
        solutions.append(sol)
        if j % config.record_every == 0 or j == n_steps:
            records.append(emit_record(new_state, sol, constants, step=j))
        state = new_state
        if config.convexity_floor and state.lambda_min < config.floor_fraction * state.lambda0:
            halt_reason = (
                f"convexity floor reached at step {j}: lambda_min "
                f"{state.lambda_min:.6e} < {config.floor_fraction} * lambda0"
            )
            break
    return RunResult(
        states=states, records=records, solutions=solutions,
        halt_reason=halt_reason, constants=constants,
        epsilon=epsilon, n_steps=n_steps,
    )


@dataclass(frozen=True)
class GrowthCheck:
    step: int
    norm: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.norm

    @property
    def passed(self) -> bool:
        return self.norm <= self.bound * (1.0 + 1e-12) + 1e-12


def growth_bound_check(states, constants: SchemeConstants) -> list[GrowthCheck]:
    """Per-step comparison of |grad P_j|_{W^3,p} against the geometric bound
    (kappa + |grad P_0|) (1 + (1+2c*) eps)^j - kappa.  Advisory: with c_star
    configured rather than derived, a violation is a finding, not an error."""
    if len(states) < 1:
        return []
    eps = states[1].time - states[0].time if len(states) > 1 else 0.0
    base = constants.kappa + sobolev_norm(states[0].p, 3, constants.p)
    growth = 1.0 + (1.0 + 2.0 * constants.c_star) * eps
    checks = []
    for j, s in enumerate(states):
        norm = sobolev_norm(s.p, 3, constants.p)
        bound = base * growth**j - constants.kappa
        checks.append(GrowthCheck(step=j, norm=norm, bound=bound))
    return checks
