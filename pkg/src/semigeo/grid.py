"""Structured box-domain grid with cell-centered fields and stencil operators.

All fields live at cell centers of a uniform axis-aligned box grid.  First
derivatives use second-order centered differences in the interior and
second-order one-sided differences at boundary cells, so every operator is
exact on quadratic polynomials.  Fields are immutable once constructed; all
operators are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "TensorField",
    "gradient",
    "hessian",
    "jacobian",
    "divergence",
    "curl",
    "lp_norm",
    "sobolev_norm",
    "min_hessian_eigenvalue",
    "eigmin_symmetric",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid over an axis-aligned box.

    dims are cells per axis; spacing is extents/dims.  Operators up to third
    derivatives need a 4-point interior, hence dims >= 4 per axis.
    """

    dims: tuple[int, int, int]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extents: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "extents", tuple(float(v) for v in self.extents))
        if len(self.dims) != 3 or len(self.origin) != 3 or len(self.extents) != 3:
            raise ValueError("dims, origin and extents must each have 3 components")
        if any(n < 4 for n in self.dims):
            raise ValueError(f"dims must be >= 4 per axis, got {self.dims}")
        if any(e <= 0.0 for e in self.extents):
            raise ValueError(f"extents must be positive, got {self.extents}")

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(e / n for e, n in zip(self.extents, self.dims))

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def cell_volume(self) -> float:
        h = self.spacing
        return h[0] * h[1] * h[2]

    @property
    def volume(self) -> float:
        return self.extents[0] * self.extents[1] * self.extents[2]

    def axis_coords(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        n = self.dims[axis]
        h = self.spacing[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * h

    def cell_centers(self) -> np.ndarray:
        """(nx, ny, nz, 3) array of cell-center coordinates."""
        ax = [self.axis_coords(a) for a in range(3)]
        mesh = np.meshgrid(*ax, indexing="ij")
        return np.stack(mesh, axis=-1)

    def corner_radius(self) -> float:
        """max |y| over the closed box (attained at a corner)."""
        best = 0.0
        for cx in (self.origin[0], self.origin[0] + self.extents[0]):
            for cy in (self.origin[1], self.origin[1] + self.extents[1]):
                for cz in (self.origin[2], self.origin[2] + self.extents[2]):
                    best = max(best, float(np.sqrt(cx * cx + cy * cy + cz * cz)))
        return best


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"field values have shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarField:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, self.spec.dims))


@dataclass(frozen=True)
class VectorField:
    spec: GridSpec
    values: np.ndarray  # (nx, ny, nz, 3)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, self.spec.dims + (3,)))


@dataclass(frozen=True)
class TensorField:
    spec: GridSpec
    values: np.ndarray  # (nx, ny, nz, 3, 3)
    symmetric: bool = False

    def __post_init__(self):
        arr = _frozen_array(self.values, self.spec.dims + (3, 3))
        object.__setattr__(self, "values", arr)
        if self.symmetric and not np.array_equal(arr, arr.swapaxes(-1, -2)):
            raise ValueError("symmetric flag set but tensor values are not exactly symmetric")


# ---------------------------------------------------------------------------
# one-dimensional stencil kernels, applied along a grid axis
# ---------------------------------------------------------------------------


def _sl(a: np.ndarray, axis: int, idx) -> tuple:
    s = [slice(None)] * a.ndim
    s[axis] = idx
    return tuple(s)


def diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    """First derivative: centered interior, second-order one-sided at the ends.

    Stencils are written as combinations of value differences so constant
    fields map to exactly zero.
    """
    out = np.empty_like(a)
    out[_sl(a, axis, slice(1, -1))] = (
        a[_sl(a, axis, slice(2, None))] - a[_sl(a, axis, slice(None, -2))]
    ) / (2.0 * h)
    a0, a1, a2 = a[_sl(a, axis, 0)], a[_sl(a, axis, 1)], a[_sl(a, axis, 2)]
    out[_sl(a, axis, 0)] = (4.0 * (a1 - a0) - (a2 - a0)) / (2.0 * h)
    b0, b1, b2 = a[_sl(a, axis, -1)], a[_sl(a, axis, -2)], a[_sl(a, axis, -3)]
    out[_sl(a, axis, -1)] = (4.0 * (b0 - b1) - (b0 - b2)) / (2.0 * h)
    return out


def diff2(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Second derivative: 3-point interior, 4-point one-sided at the ends.

    Both stencils are exact on quadratics, which the analytic tests rely on.
    """
    out = np.empty_like(a)
    h2 = h * h
    out[_sl(a, axis, slice(1, -1))] = (
        (a[_sl(a, axis, slice(2, None))] - a[_sl(a, axis, slice(1, -1))])
        - (a[_sl(a, axis, slice(1, -1))] - a[_sl(a, axis, slice(None, -2))])
    ) / h2
    a0, a1, a2, a3 = (a[_sl(a, axis, i)] for i in range(4))
    out[_sl(a, axis, 0)] = (-2.0 * (a1 - a0) + 3.0 * (a2 - a1) - (a3 - a2)) / h2
    b0, b1, b2, b3 = (a[_sl(a, axis, -1 - i)] for i in range(4))
    out[_sl(a, axis, -1)] = (-2.0 * (b1 - b0) + 3.0 * (b2 - b1) - (b3 - b2)) / h2
    return out


def diff_shifted(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Centered first derivative, shifted one cell inward at the faces.

    Used for third-order derivatives to avoid first-order boundary pollution.
    """
    out = np.empty_like(a)
    out[_sl(a, axis, slice(1, -1))] = (
        a[_sl(a, axis, slice(2, None))] - a[_sl(a, axis, slice(None, -2))]
    ) / (2.0 * h)
    out[_sl(a, axis, 0)] = out[_sl(a, axis, 1)]
    out[_sl(a, axis, -1)] = out[_sl(a, axis, -2)]
    return out


# ---------------------------------------------------------------------------
# differential operators on fields
# ---------------------------------------------------------------------------


def gradient_values(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    h = spec.spacing
    return np.stack([diff(values, a, h[a]) for a in range(3)], axis=-1)


def gradient(s: ScalarField) -> VectorField:
    """Componentwise stencil gradient of a scalar field."""
    return VectorField(s.spec, gradient_values(s.values, s.spec))


def hessian(s: ScalarField) -> TensorField:
    """Symmetric second-derivative tensor.

    Diagonal entries use compact second-derivative stencils; mixed partials
    are computed once per unordered pair and mirrored, so the output is
    exactly symmetric.
    """
    h = s.spec.spacing
    nx, ny, nz = s.spec.dims
    out = np.empty((nx, ny, nz, 3, 3))
    for a in range(3):
        out[..., a, a] = diff2(s.values, a, h[a])
    for a in range(3):
        da = diff(s.values, a, h[a])
        for b in range(a + 1, 3):
            mixed = diff(da, b, h[b])
            out[..., a, b] = mixed
            out[..., b, a] = mixed
    return TensorField(s.spec, out, symmetric=True)


def jacobian(v: VectorField) -> TensorField:
    """Per-cell matrix of first derivatives, J[a, b] = d v_b / d x_a."""
    h = v.spec.spacing
    nx, ny, nz = v.spec.dims
    out = np.empty((nx, ny, nz, 3, 3))
    for a in range(3):
        d = diff(v.values, a, h[a])
        for b in range(3):
            out[..., a, b] = d[..., b]
    return TensorField(v.spec, out, symmetric=False)


def divergence(v: VectorField) -> ScalarField:
    h = v.spec.spacing
    out = diff(v.values[..., 0], 0, h[0])
    out += diff(v.values[..., 1], 1, h[1])
    out += diff(v.values[..., 2], 2, h[2])
    return ScalarField(v.spec, out)


def curl(v: VectorField) -> VectorField:
    h = v.spec.spacing
    d = [
        [diff(v.values[..., b], a, h[a]) for b in range(3)] for a in range(3)
    ]  # d[a][b] = d v_b / d x_a
    out = np.stack(
        [
            d[1][2] - d[2][1],
            d[2][0] - d[0][2],
            d[0][1] - d[1][0],
        ],
        axis=-1,
    )
    return VectorField(v.spec, out)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def _cell_magnitude(field) -> np.ndarray:
    if isinstance(field, ScalarField):
        return np.abs(field.values)
    if isinstance(field, VectorField):
        return np.sqrt(np.sum(field.values**2, axis=-1))
    if isinstance(field, TensorField):
        return np.sqrt(np.sum(field.values**2, axis=(-2, -1)))
    raise TypeError(f"unsupported field type {type(field).__name__}")


def lp_norm(field, p) -> float:
    """Cell-volume-weighted discrete L^p norm; p=inf gives the max magnitude."""
    mag = _cell_magnitude(field)
    if p == np.inf or p == float("inf"):
        return float(np.max(mag))
    p = float(p)
    if p < 1.0:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    vol = field.spec.cell_volume
    return float(np.sum(mag**p * vol) ** (1.0 / p))


def _derivative_stack(values: np.ndarray, spec: GridSpec, order: int) -> np.ndarray:
    """All finite-difference derivatives of the given order, stacked on
    trailing axes (one axis of length 3 per derivative applied).

    Orders 1 and 2 reuse the gradient/hessian stencils; order 3 applies
    inward-shifted centered differences to the hessian entries.
    """
    h = spec.spacing
    if order == 1:
        return gradient_values(values, spec)
    sf = ScalarField(spec, values)
    hess = hessian(sf).values
    if order == 2:
        return hess
    if order == 3:
        return np.stack([diff_shifted(hess, a, h[a]) for a in range(3)], axis=-3)
    raise ValueError(f"unsupported derivative order {order}")


def sobolev_norm(s: ScalarField, m: int, p) -> float:
    """Discrete Sobolev norm of the gradient of a potential.

    Sums the L^p norms of all derivatives of s of orders 1 .. m, with the
    per-cell magnitude taken over all tensor components.
    """
    m = int(m)
    if m < 1 or m > 3:
        raise ValueError(f"order m must be in 1..3, got {m}")
    if min(s.spec.dims) < m + 2:
        raise ValueError(f"grid dims {s.spec.dims} too small for order {m} (need >= {m + 2})")
    total = 0.0
    for order in range(1, m + 1):
        stack = _derivative_stack(s.values, s.spec, order)
        mag = np.sqrt(np.sum(stack**2, axis=tuple(range(3, stack.ndim))))
        if p == np.inf or p == float("inf"):
            total += float(np.max(mag))
        else:
            total += float(np.sum(mag ** float(p) * s.spec.cell_volume) ** (1.0 / float(p)))
    return total


# ---------------------------------------------------------------------------
# symmetric 3x3 eigenvalue scan
# ---------------------------------------------------------------------------


def eigmin_symmetric(values: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each symmetric 3x3 matrix in a (..., 3, 3) array.

    Closed-form solve of the characteristic polynomial (trigonometric method);
    exactly the diagonal minimum for diagonal matrices.
    """
    a00 = values[..., 0, 0]
    a11 = values[..., 1, 1]
    a22 = values[..., 2, 2]
    a01 = values[..., 0, 1]
    a02 = values[..., 0, 2]
    a12 = values[..., 1, 2]

    p1 = a01**2 + a02**2 + a12**2
    q = (a00 + a11 + a22) / 3.0
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    diag_min = np.minimum(np.minimum(a00, a11), a22)

    p = np.sqrt(np.maximum(p2, 0.0) / 6.0)
    safe = p > 0.0
    ps = np.where(safe, p, 1.0)
    b00 = (a00 - q) / ps
    b11 = (a11 - q) / ps
    b22 = (a22 - q) / ps
    b01 = a01 / ps
    b02 = a02 / ps
    b12 = a12 / ps
    detb = (
        b00 * (b11 * b22 - b12 * b12)
        - b01 * (b01 * b22 - b12 * b02)
        + b02 * (b01 * b12 - b11 * b02)
    )
    r = np.clip(detb / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam_min = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)

    out = np.where(p1 == 0.0, diag_min, np.where(safe, lam_min, q))
    return out


def min_hessian_eigenvalue(t: TensorField) -> tuple[float, tuple[int, int, int]]:
    """Global minimum over cells of the smallest eigenvalue, with its cell."""
    if not t.symmetric:
        raise ValueError("min_hessian_eigenvalue requires a symmetric tensor field")
    lam = eigmin_symmetric(t.values)
    flat = int(np.argmin(lam))
    idx = np.unravel_index(flat, lam.shape)
    return float(lam[idx]), tuple(int(i) for i in idx)
