"""Variable-rotation extension: spatially varying Coriolis parameter.

The per-step velocity system keeps the div-curl shape but with the perturbed
(generally non-symmetric) coefficient

    A = D2P - Kf_inv (grad P  (x)  grad f) / f^2,      Kf_inv = diag(f, f, 1),

and right-hand side potential Kf_inv J (grad P - x).  The perturbation must
stay dominated by the convex Hessian for the system to remain uniformly
elliptic; that dominance is enforced per cell.  Smallness of f alone cannot
be the operative requirement, since the perturbation scales with 1/f^2 and
Kf_inv grows with f; what matters is f bounded away from zero with the
rank-one term under half the local convexity modulus.  With constant f the
perturbation vanishes identically and the step reduces exactly to the base
scheme with the rotation rate scaled by f.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .divcurl import DarcySolution, DivCurlData, reduce_to_darcy, solve_darcy
from .grid import (
    GridSpec,
    ScalarField,
    TensorField,
    VectorField,
    eigmin_symmetric,
    gradient,
)
from .stepper import GeopotentialState, _build_state, apply_rotation

__all__ = [
    "PerturbationError",
    "CoriolisField",
    "constant_coriolis",
    "linear_coriolis",
    "kf_inverse",
    "assemble_coriolis_coefficient",
    "coriolis_transport_data",
    "step_coriolis",
    "make_coriolis_step",
]


class PerturbationError(ValueError):
    """Rotation-gradient term not dominated by the convex Hessian."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


@dataclass(frozen=True)
class CoriolisField:
    """Positive Coriolis parameter with its cached gradient."""

    f: ScalarField
    grad_f: VectorField
    f_min: float

    @property
    def spec(self) -> GridSpec:
        return self.f.spec


def make_coriolis_field(f: ScalarField) -> CoriolisField:
    f_min = float(np.min(f.values))
    if f_min <= 0.0:
        raise ValueError(f"Coriolis parameter must be positive everywhere, min {f_min:.3e}")
    return CoriolisField(f=f, grad_f=gradient(f), f_min=f_min)


def constant_coriolis(spec: GridSpec, f0: float) -> CoriolisField:
    return make_coriolis_field(ScalarField(spec, np.full(spec.dims, float(f0))))


def linear_coriolis(spec: GridSpec, delta: float) -> CoriolisField:
    """Profile f = 1 + delta * x3."""
    x3 = spec.cell_centers()[..., 2]
    return make_coriolis_field(ScalarField(spec, 1.0 + float(delta) * x3))


def kf_inverse(c: CoriolisField) -> TensorField:
    """Per-cell diag(f, f, 1)."""
    vals = np.zeros(c.spec.dims + (3, 3))
    vals[..., 0, 0] = c.f.values
    vals[..., 1, 1] = c.f.values
    vals[..., 2, 2] = 1.0
    return TensorField(c.spec, vals, symmetric=True)


def _rank_one_term(s: GeopotentialState, c: CoriolisField) -> np.ndarray:
    """Kf_inv (grad P (x) grad f) / f^2 per cell."""
    outer = np.einsum("...a,...b->...ab", s.grad_p.values, c.grad_f.values)
    f = c.f.values[..., None, None]
    scale = np.ones(s.spec.dims + (3, 1))
    scale[..., 0, 0] = c.f.values
    scale[..., 1, 0] = c.f.values
    return scale * outer / (f * f)


def assemble_coriolis_coefficient(s: GeopotentialState, c: CoriolisField) -> TensorField:
    """Perturbed coefficient; rejects cells where the rank-one term is not
    dominated by half the local convexity modulus."""
    if s.spec.dims != c.spec.dims:
        raise ValueError("state and Coriolis field live on different grids")
    term = _rank_one_term(s, c)
    # spectral norm of the rank-one matrix (Kf_inv gp) (gf)^T / f^2 per cell
    gp = s.grad_p.values
    scaled = np.stack([c.f.values * gp[..., 0], c.f.values * gp[..., 1], gp[..., 2]], axis=-1)
    norm = (
        np.sqrt(np.sum(scaled**2, axis=-1))
        * np.sqrt(np.sum(c.grad_f.values**2, axis=-1))
        / c.f.values**2
    )
    local_lambda = eigmin_symmetric(s.hess.values)
    bad = norm >= 0.5 * local_lambda
    if np.any(bad):
        idx = np.unravel_index(int(np.argmax(norm - 0.5 * local_lambda)), bad.shape)
        raise PerturbationError(
            f"Coriolis perturbation {float(norm[idx]):.3e} exceeds half the convexity "
            f"modulus {float(local_lambda[idx]):.3e} at cell {tuple(int(i) for i in idx)}",
            cell=tuple(int(i) for i in idx),
        )
    vals = s.hess.values - term
    symmetric = bool(np.all(term == 0.0))
    a = TensorField(s.spec, vals, symmetric=symmetric)
    # symmetric part must stay positive definite for the Krylov solve
    sym = 0.5 * (vals + vals.swapaxes(-1, -2))
    lam = float(np.min(eigmin_symmetric(sym)))
    if lam <= 0.0:
        raise PerturbationError(
            f"symmetric part of the Coriolis coefficient lost definiteness ({lam:.3e})"
        )
    return a


def coriolis_transport_data(s: GeopotentialState, c: CoriolisField) -> DivCurlData:
    """Coefficient and curl-source of the variable-rotation velocity system.

    The source is Kf_inv J (grad P - x); for constant f this is f * J(grad P - x)
    and the coefficient collapses to the plain Hessian.
    """
    a = assemble_coriolis_coefficient(s, c)
    x = s.spec.cell_centers()
    jw = apply_rotation(s.grad_p.values - x)
    jw[..., 0] *= c.f.values
    jw[..., 1] *= c.f.values
    return DivCurlData(a=a, f=VectorField(s.spec, jw))


def step_coriolis(s: GeopotentialState, c: CoriolisField, epsilon: float,
                  tol: float = 1e-10, maxiter: int | None = None
                  ) -> tuple[GeopotentialState, DarcySolution]:
    """One forward Euler step of the variable-rotation scheme: same potential
    update P <- P - eps q through the (generally non-symmetric) reduction."""
    from .stepper import ConvexityError

    if s.lambda_min <= 0.0:
        raise ConvexityError(
            f"cannot step: Hessian eigenvalue {s.lambda_min:.6e} at cell "
            f"{s.lambda_argmin} is not positive",
            cell=s.lambda_argmin,
            eigenvalue=s.lambda_min,
        )
    sol = solve_darcy(reduce_to_darcy(coriolis_transport_data(s, c)), tol=tol, maxiter=maxiter)
    new_state = _build_state(s.p.values - epsilon * sol.q.values, s.spec,
                             s.time + epsilon, lambda0=s.lambda0)
    return new_state, sol


def make_coriolis_step(c: CoriolisField):
    """Adapter with the base stepper's signature, for stepper.run(step_fn=...)."""

    def step_fn(state, epsilon, tol, maxiter):
        return step_coriolis(state, c, epsilon, tol=tol, maxiter=maxiter)

    return step_fn
