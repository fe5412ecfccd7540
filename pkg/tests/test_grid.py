import numpy as np
import pytest

from semigeo.grid import (
    GridSpec,
    ScalarField,
    TensorField,
    VectorField,
    curl,
    divergence,
    eigmin_symmetric,
    gradient,
    hessian,
    jacobian,
    lp_norm,
    min_hessian_eigenvalue,
    sobolev_norm,
)


def make_spec(n=8, extents=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    if isinstance(n, int):
        n = (n, n, n)
    return GridSpec(dims=n, origin=origin, extents=extents)


def scalar_from(spec, fn):
    x = spec.cell_centers()
    return ScalarField(spec, fn(x[..., 0], x[..., 1], x[..., 2]))


def random_scalar(spec, rng):
    return ScalarField(spec, rng.standard_normal(spec.dims))


def random_vector(spec, rng):
    return VectorField(spec, rng.standard_normal(spec.dims + (3,)))


class TestGridSpec:
    def test_spacing_and_volume(self):
        spec = make_spec((8, 10, 4), extents=(2.0, 1.0, 0.5))
        assert spec.spacing == (0.25, 0.1, 0.125)
        assert spec.n_cells == 320
        assert np.isclose(spec.cell_volume, 0.25 * 0.1 * 0.125)

    def test_rejects_small_dims(self):
        with pytest.raises(ValueError):
            make_spec((3, 8, 8))

    def test_rejects_nonpositive_extent(self):
        with pytest.raises(ValueError):
            make_spec(8, extents=(1.0, 0.0, 1.0))

    def test_corner_radius(self):
        spec = make_spec(4, extents=(1.0, 1.0, 1.0))
        assert np.isclose(spec.corner_radius(), np.sqrt(3.0))


class TestFieldValidation:
    def test_shape_checked(self):
        spec = make_spec(4)
        with pytest.raises(ValueError):
            ScalarField(spec, np.zeros((4, 4)))

    def test_finite_checked(self):
        spec = make_spec(4)
        vals = np.zeros(spec.dims)
        vals[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            ScalarField(spec, vals)

    def test_symmetric_flag_checked(self):
        spec = make_spec(4)
        vals = np.zeros(spec.dims + (3, 3))
        vals[..., 0, 1] = 1.0
        with pytest.raises(ValueError):
            TensorField(spec, vals, symmetric=True)

    def test_fields_immutable(self):
        spec = make_spec(4)
        f = ScalarField(spec, np.zeros(spec.dims))
        with pytest.raises(ValueError):
            f.values[0, 0, 0] = 1.0


class TestGradient:
    def test_constant_field(self):
        spec = make_spec(6)
        g = gradient(ScalarField(spec, np.full(spec.dims, 3.7)))
        assert np.max(np.abs(g.values)) == 0.0

    def test_linear_exact(self):
        spec = make_spec((5, 6, 7), extents=(1.0, 2.0, 0.5))
        a = np.array([1.5, -2.0, 0.25])
        s = scalar_from(spec, lambda x, y, z: a[0] * x + a[1] * y + a[2] * z)
        g = gradient(s)
        assert np.allclose(g.values, a, rtol=0, atol=1e-13)

    def test_quadratic_exact(self):
        # oracle: grad(|x|^2 / 2) = x, sampled at the cell centers
        spec = make_spec(8)
        s = scalar_from(spec, lambda x, y, z: 0.5 * (x**2 + y**2 + z**2))
        g = gradient(s)
        assert np.max(np.abs(g.values - spec.cell_centers())) < 1e-12


class TestHessian:
    def test_linear_is_zero(self):
        spec = make_spec(5)
        s = scalar_from(spec, lambda x, y, z: x - 2 * y + 3 * z)
        h = hessian(s)
        assert np.max(np.abs(h.values)) < 1e-12

    def test_quadratic_form_exact(self):
        # oracle: D2(x^T Q x / 2) = Q for symmetric Q
        q = np.array([[2.0, 0.3, -0.1], [0.3, 1.0, 0.2], [-0.1, 0.2, 0.5]])
        spec = make_spec(6, extents=(1.0, 1.5, 2.0))
        x = spec.cell_centers()
        vals = 0.5 * np.einsum("...a,ab,...b->...", x, q, x)
        h = hessian(ScalarField(spec, vals))
        assert np.max(np.abs(h.values - q)) < 1e-10

    def test_identity_case(self):
        spec = make_spec(8)
        s = scalar_from(spec, lambda x, y, z: 0.5 * (x**2 + y**2 + z**2))
        h = hessian(s)
        assert np.max(np.abs(h.values - np.eye(3))) < 1e-11

    def test_matches_symmetrized_jacobian_at_second_order(self):
        # discrepancy against the symmetrized jacobian of the gradient is
        # O(h^2): refining by 2 shrinks it by ~4
        def err(n):
            spec = make_spec(n)
            s = scalar_from(
                spec, lambda x, y, z: np.sin(np.pi * x) * np.sin(np.pi * y) * np.sin(np.pi * z)
            )
            h = hessian(s).values
            j = jacobian(gradient(s)).values
            js = 0.5 * (j + j.swapaxes(-1, -2))
            k = 2  # compare two layers in from each face
            d = np.abs(h - js)[k:-k, k:-k, k:-k]
            return np.max(d)

        ratio = err(10) / err(20)
        assert 3.4 <= ratio <= 4.6


class TestDivergence:
    def test_constant(self):
        spec = make_spec(5)
        v = VectorField(spec, np.tile(np.array([1.0, 2.0, 3.0]), spec.dims + (1,)))
        assert np.max(np.abs(divergence(v).values)) == 0.0

    def test_linear_solenoidal(self):
        spec = make_spec(6)
        x = spec.cell_centers()
        v = VectorField(spec, np.stack([x[..., 0], x[..., 1], -2 * x[..., 2]], axis=-1))
        assert np.max(np.abs(divergence(v).values)) < 1e-13

    def test_quadratic_component(self):
        # oracle: div((x^2, 0, 0)) = 2x
        spec = make_spec(8)
        x = spec.cell_centers()
        v = VectorField(
            spec, np.stack([x[..., 0] ** 2, np.zeros(spec.dims), np.zeros(spec.dims)], axis=-1)
        )
        d = divergence(v).values
        assert np.max(np.abs(d - 2 * x[..., 0])) < 1e-12


class TestCurl:
    def test_rotation_field(self):
        # oracle: curl((-y, x, 0)) = (0, 0, 2)
        spec = make_spec(7)
        x = spec.cell_centers()
        v = VectorField(spec, np.stack([-x[..., 1], x[..., 0], np.zeros(spec.dims)], axis=-1))
        c = curl(v).values
        assert np.max(np.abs(c - np.array([0.0, 0.0, 2.0]))) < 1e-12

    def test_constant(self):
        spec = make_spec(5)
        v = VectorField(spec, np.tile(np.array([4.0, -1.0, 2.0]), spec.dims + (1,)))
        assert np.max(np.abs(curl(v).values)) == 0.0

    def test_curl_of_gradient_vanishes_in_interior(self):
        rng = np.random.default_rng(7)
        spec = make_spec(9)
        for _ in range(4):
            s = random_scalar(spec, rng)
            c = curl(gradient(s)).values
            interior = c[2:-2, 2:-2, 2:-2]
            assert np.max(np.abs(interior)) < 1e-12


class TestOperatorProperties:
    def test_linearity(self):
        rng = np.random.default_rng(13)
        spec = make_spec(6)
        a, b = 1.7, -0.4
        s1, s2 = random_scalar(spec, rng), random_scalar(spec, rng)
        combo = ScalarField(spec, a * s1.values + b * s2.values)
        lhs = gradient(combo).values
        rhs = a * gradient(s1).values + b * gradient(s2).values
        assert np.max(np.abs(lhs - rhs)) < 1e-13

        v1, v2 = random_vector(spec, rng), random_vector(spec, rng)
        comb = VectorField(spec, a * v1.values + b * v2.values)
        assert np.max(np.abs(divergence(comb).values
                             - a * divergence(v1).values - b * divergence(v2).values)) < 1e-13
        assert np.max(np.abs(curl(comb).values
                             - a * curl(v1).values - b * curl(v2).values)) < 1e-13

    def test_divergence_of_curl_vanishes_in_interior(self):
        rng = np.random.default_rng(23)
        spec = make_spec(9)
        for _ in range(4):
            v = random_vector(spec, rng)
            d = divergence(curl(v)).values
            assert np.max(np.abs(d[2:-2, 2:-2, 2:-2])) < 1e-12

    def test_gradient_nullspace_is_constants(self):
        spec = make_spec(5)
        g = gradient(ScalarField(spec, np.full(spec.dims, 2.5))).values
        assert np.max(np.abs(g)) == 0.0


class TestNorms:
    def test_zero_field(self):
        spec = make_spec(4)
        assert lp_norm(ScalarField(spec, np.zeros(spec.dims)), 2) == 0.0

    def test_constant_field(self):
        spec = make_spec(4, extents=(2.0, 1.0, 1.0))
        f = ScalarField(spec, np.full(spec.dims, -3.0))
        for p in (1, 2, 4):
            assert np.isclose(lp_norm(f, p), 3.0 * 2.0 ** (1.0 / p), rtol=1e-13)
        assert lp_norm(f, np.inf) == 3.0

    def test_homogeneity(self):
        rng = np.random.default_rng(5)
        spec = make_spec(6)
        f = random_vector(spec, rng)
        g = VectorField(spec, 2.0 * f.values)
        for p in (1, 2, 3.5, np.inf):
            assert np.isclose(lp_norm(g, p), 2.0 * lp_norm(f, p), rtol=1e-14)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(11)
        spec = make_spec(5)
        for p in (1, 2, 4, np.inf):
            for _ in range(5):
                f, g = random_vector(spec, rng), random_vector(spec, rng)
                s = VectorField(spec, f.values + g.values)
                assert lp_norm(s, p) <= lp_norm(f, p) + lp_norm(g, p) + 1e-12

    def test_rejects_bad_p(self):
        spec = make_spec(4)
        with pytest.raises(ValueError):
            lp_norm(ScalarField(spec, np.ones(spec.dims)), 0.5)


class TestSobolevNorm:
    def test_linear_potential(self):
        spec = make_spec(8)
        a = np.array([0.3, -1.1, 2.0])
        s = scalar_from(spec, lambda x, y, z: a[0] * x + a[1] * y + a[2] * z)
        want = np.linalg.norm(a) * spec.volume ** 0.25
        assert np.isclose(sobolev_norm(s, 3, 4), want, rtol=1e-12)

    def test_quadratic_l2_of_gradient(self):
        # oracle: integral of |x|^2 over the unit cube is 1
        spec = make_spec(16)
        s = scalar_from(spec, lambda x, y, z: 0.5 * (x**2 + y**2 + z**2))
        assert abs(sobolev_norm(s, 1, 2) - 1.0) < 0.02

    def test_homogeneity(self):
        rng = np.random.default_rng(3)
        spec = make_spec(7)
        s = random_scalar(spec, rng)
        d = ScalarField(spec, 2.0 * s.values)
        assert np.isclose(sobolev_norm(d, 3, 4), 2.0 * sobolev_norm(s, 3, 4), rtol=1e-14)

    def test_rejects_high_order(self):
        spec = make_spec(8)
        s = ScalarField(spec, np.zeros(spec.dims))
        with pytest.raises(ValueError):
            sobolev_norm(s, 4, 2)

    def test_rejects_too_small_grid(self):
        spec = make_spec(4)
        s = ScalarField(spec, np.zeros(spec.dims))
        with pytest.raises(ValueError):
            sobolev_norm(s, 3, 2)


class TestEigenvalues:
    def test_identity_tensor(self):
        spec = make_spec(4)
        vals = np.tile(np.eye(3), spec.dims + (1, 1))
        lam, _ = min_hessian_eigenvalue(TensorField(spec, vals, symmetric=True))
        assert lam == 1.0

    def test_diagonal_tensor(self):
        spec = make_spec(4)
        vals = np.tile(np.diag([2.0, 3.0, 0.5]), spec.dims + (1, 1))
        lam, _ = min_hessian_eigenvalue(TensorField(spec, vals, symmetric=True))
        assert lam == 0.5

    def test_against_dense_eigensolver(self):
        # oracle: numpy's symmetric eigensolver, cell by cell
        rng = np.random.default_rng(17)
        spec = make_spec(5)
        raw = rng.standard_normal(spec.dims + (3, 3))
        sym = 0.5 * (raw + raw.swapaxes(-1, -2))
        mine = eigmin_symmetric(sym)
        ref = np.linalg.eigvalsh(sym)[..., 0]
        assert np.max(np.abs(mine - ref)) < 1e-10

    def test_argmin_location(self):
        spec = make_spec(4)
        vals = np.tile(np.eye(3), spec.dims + (1, 1))
        vals[2, 1, 3] = np.diag([0.25, 1.0, 1.0])
        lam, cell = min_hessian_eigenvalue(TensorField(spec, vals, symmetric=True))
        assert lam == 0.25
        assert cell == (2, 1, 3)

    def test_rejects_nonsymmetric(self):
        spec = make_spec(4)
        vals = np.tile(np.eye(3), spec.dims + (1, 1))
        with pytest.raises(ValueError):
            min_hessian_eigenvalue(TensorField(spec, vals, symmetric=False))
