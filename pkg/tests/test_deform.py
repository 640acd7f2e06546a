import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import geom, series_field, smooth_random_field
from tagflow.deform import (
    VelocityParam,
    compose,
    integrate_velocity,
    integrate_velocity_cached,
    integrate_velocity_vjp,
)
from tagflow.grid import (
    BoundaryPolicy,
    TrilinearMap,
    VectorField,
    base_points,
    jacobian_determinant,
)


def const_field(geometry, vec):
    u = np.broadcast_to(np.asarray(vec, dtype=np.float64), geometry.dims + (3,)).copy()
    return VectorField(geometry, u)


def euler_displacement(v: VectorField, steps: int = 100) -> np.ndarray:
    """Explicit Euler flow integration oracle for small velocities."""
    dims = v.geometry.dims
    base = base_points(dims)
    pts = base.copy()
    for _ in range(steps):
        m = TrilinearMap(pts, dims, BoundaryPolicy.CLAMP)
        vel = np.stack([m.apply(v.vectors[..., c]) for c in range(3)], axis=1)
        pts = pts + vel / steps
    return (pts - base).reshape(dims + (3,))


class TestIntegrate:
    def test_zero_velocity(self):
        g = geom(6)
        u = integrate_velocity(VelocityParam(const_field(g, (0, 0, 0))))
        assert_allclose(u.vectors, 0.0, atol=0.0)

    def test_constant_translation_interior(self):
        g = geom(12)
        c = 1.25
        u = integrate_velocity(VelocityParam(const_field(g, (c, 0, 0))))
        interior = u.vectors[3:-3, 3:-3, 3:-3]
        assert_allclose(interior[..., 0], c, atol=1e-12)
        assert_allclose(interior[..., 1:], 0.0, atol=1e-12)

    def test_small_field_matches_euler_oracle(self):
        g = geom(8)
        v = smooth_random_field(g, seed=5, amplitude=0.01)
        u = integrate_velocity(VelocityParam(v))
        assert np.max(np.abs(u.vectors - v.vectors)) <= 1e-4
        oracle = euler_displacement(v)
        assert np.max(np.abs(u.vectors - oracle)) <= 1e-4

    def test_n_steps_zero_is_identity(self):
        g = geom(6)
        v = smooth_random_field(g, seed=6, amplitude=0.5)
        u = integrate_velocity(VelocityParam(v, n_steps=0))
        assert_allclose(u.vectors, v.vectors, atol=0.0)

    def test_invalid_n_steps(self):
        g = geom(4)
        with pytest.raises(ValueError):
            VelocityParam(const_field(g, (0, 0, 0)), n_steps=-1)


class TestCompose:
    def test_identity_element(self):
        g = geom(8)
        u = smooth_random_field(g, seed=7, amplitude=1.0)
        zero = const_field(g, (0, 0, 0))
        assert_allclose(compose(zero, u).vectors, u.vectors, atol=0.0)
        assert_allclose(compose(u, zero).vectors, u.vectors, atol=1e-12)

    def test_constant_translations_add(self):
        g = geom(12)
        a, b = (0.5, 0.25, 0.0), (1.0, -0.5, 0.75)
        out = compose(const_field(g, b), const_field(g, a))
        interior = out.vectors[3:-3, 3:-3, 3:-3]
        assert_allclose(interior, np.broadcast_to(np.add(a, b), interior.shape), atol=1e-12)

    def test_compose_matches_one_squaring(self):
        g = geom(8)
        v = smooth_random_field(g, seed=8, amplitude=1.0)
        half = VectorField(g, v.vectors / 2.0)
        by_compose = compose(half, half)
        by_integrate = integrate_velocity(VelocityParam(v, n_steps=1))
        assert_allclose(by_integrate.vectors, by_compose.vectors, atol=1e-13)

    def test_geometry_mismatch(self):
        u8 = const_field(geom(8), (0, 0, 0))
        u6 = const_field(geom(6), (0, 0, 0))
        with pytest.raises(ValueError, match="geometry"):
            compose(u8, u6)


class TestDiffeomorphism:
    def test_inverse_consistency_and_positive_dets(self):
        g = geom(32)
        for seed in (10, 11, 12):
            v = series_field(g, seed=seed, amplitude=3.0)
            u_plus = integrate_velocity(VelocityParam(v))
            u_minus = integrate_velocity(VelocityParam(VectorField(g, -v.vectors)))
            rt = compose(u_minus, u_plus).vectors
            interior = rt[5:-5, 5:-5, 5:-5]
            assert np.max(np.abs(interior)) <= 0.05
            det = jacobian_determinant(u_plus)
            assert np.min(det.values) > 0.0


class TestVjp:
    def test_n_steps_zero_is_identity_on_gradients(self):
        g = geom(6)
        grad = smooth_random_field(g, seed=13, amplitude=1.0)
        v = smooth_random_field(g, seed=14, amplitude=1.0)
        param = VelocityParam(v, n_steps=0)
        cache = integrate_velocity_cached(param)
        out = integrate_velocity_vjp(param, grad, cache)
        assert_allclose(out.vectors, grad.vectors, atol=0.0)

    def test_zero_gradient(self):
        g = geom(6)
        v = smooth_random_field(g, seed=15, amplitude=1.0)
        param = VelocityParam(v)
        cache = integrate_velocity_cached(param)
        out = integrate_velocity_vjp(param, const_field(g, (0, 0, 0)), cache)
        assert_allclose(out.vectors, 0.0, atol=0.0)

    def test_missing_or_stale_cache(self):
        g = geom(6)
        v = smooth_random_field(g, seed=16, amplitude=1.0)
        param = VelocityParam(v)
        grad = smooth_random_field(g, seed=17, amplitude=1.0)
        with pytest.raises(ValueError, match="cache"):
            integrate_velocity_vjp(param, grad)
        other = VelocityParam(smooth_random_field(g, seed=18, amplitude=1.0))
        cache = integrate_velocity_cached(other)
        with pytest.raises(ValueError, match="cache"):
            integrate_velocity_vjp(param, grad, cache)

    def test_linearity(self):
        g = geom(6)
        param = VelocityParam(smooth_random_field(g, seed=19, amplitude=1.0))
        cache = integrate_velocity_cached(param)
        g1 = smooth_random_field(g, seed=20, amplitude=1.0)
        g2 = smooth_random_field(g, seed=21, amplitude=1.0)
        a, b = 0.7, -1.3
        mixed = VectorField(g, a * g1.vectors + b * g2.vectors)
        lhs = integrate_velocity_vjp(param, mixed, cache).vectors
        rhs = (a * integrate_velocity_vjp(param, g1, cache).vectors
               + b * integrate_velocity_vjp(param, g2, cache).vectors)
        assert_allclose(lhs, rhs, atol=1e-10)

    def test_matches_finite_differences(self):
        g = geom(8)
        v = smooth_random_field(g, seed=22, amplitude=1.5)
        grad = smooth_random_field(g, seed=23, amplitude=1.0)
        param = VelocityParam(v)
        cache = integrate_velocity_cached(param)
        gv = integrate_velocity_vjp(param, grad, cache).vectors
        h = 1e-4
        # probe directions fixed to seeds whose +-h sweep stays clear of the
        # interpolant's cell faces, so the FD oracle itself is smooth
        for probe_seed in (100, 102, 105, 106, 111):
            delta = smooth_random_field(g, seed=probe_seed, amplitude=1.0).vectors
            delta /= np.max(np.abs(delta))
            vp = VelocityParam(VectorField(g, v.vectors + h * delta))
            vm = VelocityParam(VectorField(g, v.vectors - h * delta))
            fp = np.sum(grad.vectors * integrate_velocity(vp).vectors)
            fm = np.sum(grad.vectors * integrate_velocity(vm).vectors)
            fd = (fp - fm) / (2 * h)
            analytic = np.sum(gv * delta)
            assert analytic == pytest.approx(fd, rel=1e-5)
