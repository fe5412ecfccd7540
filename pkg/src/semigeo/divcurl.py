"""Variable-coefficient div-curl solves via a scalar Neumann reduction.

The system  curl(A u) = curl(f),  div u = 0,  u.n = 0  on a simply connected
box is solved with the gradient ansatz  A u = f + grad q,  which turns the
vector problem into one scalar elliptic equation for q.  The scalar problem
is discretized in conservative finite-volume form: for every interior face,
the normal flux of u = M (grad q + f) combines a compact two-point normal
difference (face-averaged coefficient) with face-averaged transverse terms
for the tensor cross couplings; boundary faces carry zero flux, which is the
u.n = 0 condition.  Cell balances of these fluxes give a 19-point operator
that is exactly symmetric for symmetric M, annihilates constants from both
sides (so the Neumann problem is compatible to rounding), and is free of
checkerboard modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    GridSpec,
    ScalarField,
    TensorField,
    VectorField,
    _sl,
    curl,
    eigmin_symmetric,
    gradient_values,
    jacobian,
    lp_norm,
)

__all__ = [
    "EllipticityError",
    "SingularTensorError",
    "SolverConvergenceError",
    "DivCurlData",
    "DarcyProblem",
    "DarcySolution",
    "EstimateRatios",
    "invert_3x3",
    "reduce_to_darcy",
    "apply_operator",
    "dense_operator",
    "solve_darcy",
    "solve_divcurl",
    "recover_velocity",
    "verify_estimate",
]


# --- face/cell transfer kernels along one axis -----------------------------
#
# _face_diff maps cell values to the n-1 interior faces of an axis (two-point
# difference); its exact transpose scattered back to cells is the negative
# finite-volume divergence with zero boundary-face flux.  _face_avg is the
# two-point face interpolant; _face_avg_t its transpose.  The transverse
# derivative used in the mixed fluxes is _face_avg_t(_face_diff(.)), which is
# the centered difference at interior cells and keeps the assembled operator
# exactly symmetric (at the price of a halved one-sided difference in the
# single boundary layer).


def _face_diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (a[_sl(a, axis, slice(1, None))] - a[_sl(a, axis, slice(None, -1))]) / h


def _face_diff_t(f: np.ndarray, axis: int, h: float, out: np.ndarray) -> None:
    out[_sl(out, axis, slice(1, None))] += f / h
    out[_sl(out, axis, slice(None, -1))] -= f / h


def _face_avg(a: np.ndarray, axis: int) -> np.ndarray:
    return 0.5 * (a[_sl(a, axis, slice(1, None))] + a[_sl(a, axis, slice(None, -1))])


def _face_avg_t(f: np.ndarray, axis: int, out: np.ndarray) -> None:
    out[_sl(out, axis, slice(1, None))] += 0.5 * f
    out[_sl(out, axis, slice(None, -1))] += 0.5 * f


def _transverse_diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(a)
    _face_avg_t(_face_diff(a, axis, h), axis, out)
    return out


class EllipticityError(ValueError):
    """Coefficient tensor lost uniform positive-definiteness."""

    def __init__(self, message, cell=None, eigenvalue=None):
        super().__init__(message)
        self.cell = cell
        self.eigenvalue = eigenvalue


class SingularTensorError(ValueError):
    """Per-cell tensor inversion hit a (near-)singular matrix."""

    def __init__(self, message, cell=None, det=None):
        super().__init__(message)
        self.cell = cell
        self.det = det


class SolverConvergenceError(RuntimeError):
    """Krylov iteration failed; carries the relative-residual history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class DivCurlData:
    """Coefficient tensor A and curl-source potential f (the curl right-hand
    side of the system is F = curl f)."""

    a: TensorField
    f: VectorField

    def __post_init__(self):
        sym = 0.5 * (self.a.values + self.a.values.swapaxes(-1, -2))
        lam = eigmin_symmetric(sym)
        idx = np.unravel_index(int(np.argmin(lam)), lam.shape)
        lam_min = float(lam[idx])
        if lam_min <= 0.0:
            raise EllipticityError(
                f"symmetric part of coefficient not positive definite: "
                f"eigenvalue {lam_min:.3e} at cell {tuple(int(i) for i in idx)}",
                cell=tuple(int(i) for i in idx),
                eigenvalue=lam_min,
            )
        object.__setattr__(self, "_lambda_min", lam_min)

    @property
    def symmetric(self) -> bool:
        return self.a.symmetric

    @property
    def lambda_min(self) -> float:
        return self._lambda_min


@dataclass(frozen=True)
class DarcyProblem:
    """Scalar Neumann reduction in finite-volume form.

    The zero-normal-flux condition on u = M(grad q + f) is built into the
    flux balance (boundary faces carry no flux); it never appears as an
    explicit boundary equation.
    """

    m: TensorField
    mf: VectorField  # M f per cell
    rhs: ScalarField  # flux balance of the M f part, boundary faces closed
    m_face: tuple  # face-averaged diagonal coefficients, one array per axis
    has_mixed: bool  # any off-diagonal coefficient present

    def __post_init__(self):
        # discrete compatibility: the data must annihilate constants
        total = float(np.sum(self.rhs.values)) * self.spec.cell_volume
        scale = float(np.sum(np.abs(self.rhs.values))) * self.spec.cell_volume
        if abs(total) > 1e-10 * max(scale, 1e-300):
            raise ValueError(
                f"incompatible Neumann data: rhs sums to {total:.3e} against scale {scale:.3e}"
            )

    @property
    def spec(self) -> GridSpec:
        return self.m.spec

    @property
    def symmetric(self) -> bool:
        return self.m.symmetric


@dataclass
class DarcySolution:
    q: ScalarField  # mean-zero potential
    u: VectorField  # recovered velocity M (f + grad q)
    iterations: int
    residual: float  # relative to |rhs|
    est_ratio_u: float | None = None
    est_ratio_au: float | None = None


@dataclass(frozen=True)
class EstimateRatios:
    u_ratio: float | None
    au_ratio: float | None

    @property
    def applicable(self) -> bool:
        return self.u_ratio is not None


def invert_3x3(t: TensorField) -> TensorField:
    """Closed-form adjugate/determinant inverse per cell.

    Symmetric input gives exactly symmetric output (upper triangle mirrored).
    """
    v = t.values
    a00, a01, a02 = v[..., 0, 0], v[..., 0, 1], v[..., 0, 2]
    a10, a11, a12 = v[..., 1, 0], v[..., 1, 1], v[..., 1, 2]
    a20, a21, a22 = v[..., 2, 0], v[..., 2, 1], v[..., 2, 2]

    c00 = a11 * a22 - a12 * a21
    c01 = a12 * a20 - a10 * a22
    c02 = a10 * a21 - a11 * a20
    det = a00 * c00 + a01 * c01 + a02 * c02

    norm = np.sqrt(np.sum(v**2, axis=(-2, -1)))
    bad = np.abs(det) <= 1e-12 * norm**3
    if np.any(bad):
        idx = np.unravel_index(int(np.argmax(bad)), bad.shape)
        raise SingularTensorError(
            f"tensor not invertible at cell {tuple(int(i) for i in idx)}: "
            f"det {float(det[idx]):.3e}",
            cell=tuple(int(i) for i in idx),
            det=float(det[idx]),
        )

    inv = np.empty_like(v)
    inv[..., 0, 0] = c00
    inv[..., 0, 1] = a02 * a21 - a01 * a22
    inv[..., 0, 2] = a01 * a12 - a02 * a11
    inv[..., 1, 1] = a00 * a22 - a02 * a20
    inv[..., 1, 2] = a02 * a10 - a00 * a12
    inv[..., 2, 2] = a00 * a11 - a01 * a10
    if t.symmetric:
        inv[..., 1, 0] = inv[..., 0, 1]
        inv[..., 2, 0] = inv[..., 0, 2]
        inv[..., 2, 1] = inv[..., 1, 2]
    else:
        inv[..., 1, 0] = c01
        inv[..., 2, 0] = c02
        inv[..., 2, 1] = a01 * a20 - a00 * a21
    inv /= det[..., None, None]
    return TensorField(t.spec, inv, symmetric=t.symmetric)


def reduce_to_darcy(d: DivCurlData) -> DarcyProblem:
    spec = d.a.spec
    h = spec.spacing
    m = invert_3x3(d.a)
    mf_vals = np.einsum("...ab,...b->...a", m.values, d.f.values)
    rhs_vals = np.zeros(spec.dims)
    for a in range(3):
        _face_diff_t(_face_avg(mf_vals[..., a], a), a, h[a], rhs_vals)
    rhs_vals = -rhs_vals
    m_face = tuple(_face_avg(m.values[..., a, a], a) for a in range(3))
    off = sum(
        float(np.max(np.abs(m.values[..., a, b])))
        for a in range(3)
        for b in range(3)
        if a != b
    )
    return DarcyProblem(
        m=m,
        mf=VectorField(spec, mf_vals),
        rhs=ScalarField(spec, rhs_vals),
        m_face=m_face,
        has_mixed=off > 0.0,
    )


def apply_operator(p: DarcyProblem, q: np.ndarray) -> np.ndarray:
    """One application of the assembled elliptic operator to raw values."""
    h = p.spec.spacing
    mv = p.m.values
    out = np.zeros_like(q)
    if p.has_mixed:
        trans = [_transverse_diff(q, b, h[b]) for b in range(3)]
    for a in range(3):
        flux = p.m_face[a] * _face_diff(q, a, h[a])
        if p.has_mixed:
            cross = np.zeros_like(q)
            for b in range(3):
                if b != a:
                    cross += mv[..., a, b] * trans[b]
            flux += _face_avg(cross, a)
        _face_diff_t(flux, a, h[a], out)
    return out


def dense_operator(p: DarcyProblem) -> np.ndarray:
    """Assemble the operator as a dense matrix, column by column.

    Intended for oracle comparisons on small grids only.
    """
    n = p.spec.n_cells
    cols = np.empty((n, n))
    basis = np.zeros(p.spec.dims)
    flat = basis.reshape(-1)
    for j in range(n):
        flat[j] = 1.0
        cols[:, j] = apply_operator(p, basis).reshape(-1)
        flat[j] = 0.0
    return cols


def _project(x: np.ndarray) -> None:
    x -= x.mean()


def _cg(p: DarcyProblem, b: np.ndarray, tol: float, maxiter: int):
    x = np.zeros_like(b)
    r = b.copy()
    _project(r)
    bnorm = float(np.linalg.norm(b))
    history = [1.0]
    d = r.copy()
    rz = float(np.dot(r.reshape(-1), r.reshape(-1)))
    iters = 0
    while iters < maxiter:
        ad = apply_operator(p, d)
        dad = float(np.dot(d.reshape(-1), ad.reshape(-1)))
        if dad <= 0.0:
            raise SolverConvergenceError(
                f"conjugate gradients lost positive definiteness (d.Ad = {dad:.3e})", history
            )
        alpha = rz / dad
        x += alpha * d
        r -= alpha * ad
        _project(x)
        _project(r)
        iters += 1
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm / bnorm)
        if rnorm <= tol * bnorm:
            # confirm with the true residual before accepting
            rt = b - apply_operator(p, x)
            _project(rt)
            rtnorm = float(np.linalg.norm(rt))
            history[-1] = rtnorm / bnorm
            if rtnorm <= tol * bnorm:
                return x, iters, rtnorm / bnorm, history
            r = rt
            d = r.copy()
            rz = float(np.dot(r.reshape(-1), r.reshape(-1)))
            continue
        rz_new = float(np.dot(r.reshape(-1), r.reshape(-1)))
        d = r + (rz_new / rz) * d
        rz = rz_new
    raise SolverConvergenceError(
        f"conjugate gradients did not converge in {maxiter} iterations "
        f"(relative residual {history[-1]:.3e})",
        history,
    )


def _bicgstab(p: DarcyProblem, b: np.ndarray, tol: float, maxiter: int):
    x = np.zeros_like(b)
    r = b.copy()
    _project(r)
    bnorm = float(np.linalg.norm(b))
    history = [1.0]
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    d = np.zeros_like(b)
    iters = 0
    while iters < maxiter:
        rho_new = float(np.dot(r_hat.reshape(-1), r.reshape(-1)))
        if abs(rho_new) < 1e-300:
            raise SolverConvergenceError("BiCGStab breakdown (rho ~ 0)", history)
        if iters == 0:
            d = r.copy()
        else:
            beta = (rho_new / rho) * (alpha / omega)
            d = r + beta * (d - omega * v)
        rho = rho_new
        v = apply_operator(p, d)
        rhv = float(np.dot(r_hat.reshape(-1), v.reshape(-1)))
        if abs(rhv) < 1e-300:
            raise SolverConvergenceError("BiCGStab breakdown (r_hat.v ~ 0)", history)
        alpha = rho / rhv
        s = r - alpha * v
        iters += 1
        if float(np.linalg.norm(s)) <= tol * bnorm:
            x += alpha * d
            _project(x)
            rt = b - apply_operator(p, x)
            _project(rt)
            rtnorm = float(np.linalg.norm(rt))
            history.append(rtnorm / bnorm)
            if rtnorm <= tol * bnorm:
                return x, iters, rtnorm / bnorm, history
            r = rt
            r_hat = r.copy()
            rho = alpha = omega = 1.0
            v[:] = 0.0
            d[:] = 0.0
            continue
        t = apply_operator(p, s)
        tt = float(np.dot(t.reshape(-1), t.reshape(-1)))
        if tt == 0.0:
            raise SolverConvergenceError("BiCGStab breakdown (t = 0)", history)
        omega = float(np.dot(t.reshape(-1), s.reshape(-1))) / tt
        if abs(omega) < 1e-300:
            raise SolverConvergenceError("BiCGStab breakdown (omega ~ 0)", history)
        x += alpha * d + omega * s
        r = s - omega * t
        _project(x)
        _project(r)
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm / bnorm)
        if rnorm <= tol * bnorm:
            rt = b - apply_operator(p, x)
            _project(rt)
            rtnorm = float(np.linalg.norm(rt))
            history[-1] = rtnorm / bnorm
            if rtnorm <= tol * bnorm:
                return x, iters, rtnorm / bnorm, history
            r = rt
            r_hat = r.copy()
            rho = alpha = omega = 1.0
            v[:] = 0.0
            d[:] = 0.0
    raise SolverConvergenceError(
        f"BiCGStab did not converge in {maxiter} iterations "
        f"(relative residual {history[-1]:.3e})",
        history,
    )


def solve_darcy(p: DarcyProblem, tol: float = 1e-10, maxiter: int | None = None) -> DarcySolution:
    """Krylov solve of the reduced problem: CG when the coefficient is
    symmetric, BiCGStab otherwise, with the constant null space projected out
    of iterates and right-hand side every iteration."""
    if maxiter is None:
        maxiter = 10 * p.spec.n_cells
    b = p.rhs.values.copy()
    _project(b)
    if float(np.linalg.norm(b)) == 0.0:
        q = np.zeros(p.spec.dims)
        iters, res = 0, 0.0
    else:
        if p.symmetric:
            q, iters, res, _ = _cg(p, b, tol, maxiter)
        else:
            q, iters, res, _ = _bicgstab(p, b, tol, maxiter)
        _project(q)
    g = gradient_values(q, p.spec)
    u = p.mf.values + np.einsum("...ab,...b->...a", p.m.values, g)
    return DarcySolution(
        q=ScalarField(p.spec, q),
        u=VectorField(p.spec, u),
        iterations=iters,
        residual=res,
    )


def solve_divcurl(d: DivCurlData, tol: float = 1e-10, maxiter: int | None = None) -> DarcySolution:
    """Reduce and solve in one call."""
    return solve_darcy(reduce_to_darcy(d), tol=tol, maxiter=maxiter)


def recover_velocity(d: DivCurlData, q: ScalarField) -> VectorField:
    """u = M (f + grad q); by construction A u - f - grad q = 0 per cell."""
    m = invert_3x3(d.a)
    g = gradient_values(q.values, d.a.spec)
    u = np.einsum("...ab,...b->...a", m.values, d.f.values + g)
    return VectorField(d.a.spec, u)


def _w1p_norm(v: VectorField, p) -> float:
    return lp_norm(v, p) + lp_norm(jacobian(v), p)


def verify_estimate(u: VectorField, d: DivCurlData, p) -> EstimateRatios:
    """Ratios |u|_{W^1,p} / |F|_{L^p} and |A u|_{W^1,p} / |F|_{L^p} with
    F = curl f.  Diagnostics only; not-applicable when F vanishes."""
    f_norm = lp_norm(curl(d.f), p)
    if f_norm == 0.0:
        return EstimateRatios(None, None)
    au = VectorField(u.spec, np.einsum("...ab,...b->...a", d.a.values, u.values))
    return EstimateRatios(
        u_ratio=_w1p_norm(u, p) / f_norm,
        au_ratio=_w1p_norm(au, p) / f_norm,
    )
