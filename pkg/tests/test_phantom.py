import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import geom
from tagflow.deform import VelocityParam, integrate_velocity
from tagflow.grid import Geometry, base_points, displacement_jacobian
from tagflow.phantom import (
    BACKGROUND_INTENSITY,
    Ellipsoid,
    PhantomConfig,
    PhantomPair,
    default_ellipsoid,
    divergence_free_model,
    make_divergence_free_velocity,
    make_phantom_pair,
    make_tagged_volume,
    tissue_mask_volume,
)


class TestDivergenceFreeVelocity:
    def test_zero_amplitude(self):
        v = make_divergence_free_velocity(geom(8), amplitude=0.0, bandlimit=2, seed=1)
        assert_allclose(v.vectors, 0.0, atol=0.0)

    def test_peak_amplitude(self):
        v = make_divergence_free_velocity(geom(16), amplitude=2.5, bandlimit=2, seed=2)
        speeds = np.sqrt(np.sum(v.vectors**2, axis=-1))
        assert np.max(speeds) == pytest.approx(2.5, rel=1e-12)

    def test_determinism_bit_for_bit(self):
        a = make_divergence_free_velocity(geom(12), amplitude=1.0, bandlimit=2, seed=42)
        b = make_divergence_free_velocity(geom(12), amplitude=1.0, bandlimit=2, seed=42)
        assert np.array_equal(a.vectors, b.vectors)
        c = make_divergence_free_velocity(geom(12), amplitude=1.0, bandlimit=2, seed=43)
        assert not np.array_equal(a.vectors, c.vectors)

    def test_analytic_divergence_is_zero(self):
        model = divergence_free_model(geom(16), amplitude=2.0, bandlimit=2, seed=3)
        pts = base_points((16, 16, 16))
        div = model.divergence(pts)
        assert np.max(np.abs(div)) < 1e-12

    def test_discrete_divergence_small(self):
        g = geom(24)
        amplitude = 2.0
        v = make_divergence_free_velocity(g, amplitude=amplitude, bandlimit=2, seed=4)
        J = displacement_jacobian(v)
        div = J[..., 0, 0] + J[..., 1, 1] + J[..., 2, 2]
        interior = div[1:-1, 1:-1, 1:-1]
        # stencil truncation error only; generous wavelength-scale bound
        assert np.max(np.abs(interior)) <= 1e-2 * amplitude

    def test_analytic_jacobian_matches_finite_differences(self):
        model = divergence_free_model(geom(16), amplitude=2.0, bandlimit=2, seed=5)
        rng = np.random.default_rng(6)
        pts = rng.uniform(2, 13, size=(20, 3))
        J = model.jacobian(pts)
        h = 1e-6
        for i in range(3):
            dp = np.zeros(3)
            dp[i] = h
            fd = (model.velocity(pts + dp) - model.velocity(pts - dp)) / (2 * h)
            assert_allclose(J[:, :, i], fd, atol=1e-7)


class TestTaggedVolume:
    def test_center_peak_value(self):
        g = geom(17)
        ell = Ellipsoid((8, 8, 8), (6, 6, 6))
        vol = make_tagged_volume(g, (1, 0, 0), 8.0, ell)
        assert vol.values[8, 8, 8] == pytest.approx(1.0, abs=1e-12)

    def test_far_outside_is_background(self):
        g = geom(33)
        ell = Ellipsoid((16, 16, 16), (5, 5, 5))
        vol = make_tagged_volume(g, (1, 0, 0), 8.0, ell)
        assert vol.values[0, 0, 0] == pytest.approx(BACKGROUND_INTENSITY, abs=1e-12)
        assert vol.values[32, 16, 16] == pytest.approx(BACKGROUND_INTENSITY, abs=1e-12)

    def test_tag_period_inside_tissue(self):
        g = geom(33)
        ell = Ellipsoid((16, 16, 16), (14, 14, 14))
        vol = make_tagged_volume(g, (1, 0, 0), 8.0, ell)
        line = vol.values[:, 16, 16]
        assert line[16] == pytest.approx(1.0, abs=1e-12)  # cos peak at center
        assert line[20] == pytest.approx(0.0, abs=1e-12)  # half period later
        assert line[24] == pytest.approx(1.0, abs=1e-12)  # full period

    def test_rejects_bad_inputs(self):
        g = geom(8)
        ell = default_ellipsoid(g)
        with pytest.raises(ValueError, match="wavelength"):
            make_tagged_volume(g, (1, 0, 0), 2.0, ell)
        with pytest.raises(ValueError, match="direction"):
            make_tagged_volume(g, (0, 0, 0), 8.0, ell)

    def test_mask_range_and_edge(self):
        g = geom(33)
        ell = Ellipsoid((16, 16, 16), (10, 10, 10))
        m = tissue_mask_volume(g, ell).values
        assert np.all((m >= 0) & (m <= 1))
        assert m[16, 16, 16] == 1.0
        assert m[0, 16, 16] == 0.0
        # 2-voxel transition band around the boundary at r = 1
        assert m[16 + 9, 16, 16] == 1.0
        assert 0.0 < m[16 + 10, 16, 16] < 1.0
        assert m[16 + 12, 16, 16] == 0.0


class TestPhantomPair:
    def test_config_validation(self):
        g = geom(8)
        with pytest.raises(ValueError):
            PhantomConfig(g, tag_wavelength=2.0)
        with pytest.raises(ValueError):
            PhantomConfig(g, fading_factor=1.5)
        with pytest.raises(ValueError):
            PhantomConfig(g, noise_sigma=-0.1)
        with pytest.raises(ValueError):
            PhantomConfig(g, velocity_bandlimit=0)

    def test_geometry_and_truth_consistency(self):
        cfg = PhantomConfig(geom(16), velocity_amplitude=1.5, seed=7)
        pair = make_phantom_pair(cfg)
        assert isinstance(pair, PhantomPair)
        for key in ("av", "sh", "sv"):
            assert pair.fixed[key].geometry == cfg.geometry
            assert pair.moving[key].geometry == cfg.geometry
        recomputed = integrate_velocity(VelocityParam(pair.truth_velocity))
        assert_allclose(pair.truth_displacement.vectors, recomputed.vectors, atol=0.0)
        assert np.all((pair.tissue_mask.values >= 0) & (pair.tissue_mask.values <= 1))

    def test_determinism(self):
        cfg = PhantomConfig(geom(12), noise_sigma=0.02, seed=11)
        a = make_phantom_pair(cfg)
        b = make_phantom_pair(cfg)
        for key in ("av", "sh", "sv"):
            assert np.array_equal(a.fixed[key].values, b.fixed[key].values)
            assert np.array_equal(a.moving[key].values, b.moving[key].values)
        assert np.array_equal(a.truth_velocity.vectors, b.truth_velocity.vectors)

    def test_zero_amplitude_pair_is_static(self):
        cfg = PhantomConfig(geom(12), velocity_amplitude=0.0, seed=3)
        pair = make_phantom_pair(cfg)
        assert_allclose(pair.truth_displacement.vectors, 0.0, atol=0.0)
        for key in ("av", "sh", "sv"):
            assert_allclose(pair.moving[key].values, pair.fixed[key].values, atol=1e-12)

    def test_full_fading_erases_tag_contrast(self):
        g = geom(16)
        cfg = PhantomConfig(g, velocity_amplitude=0.0, fading_factor=0.0, seed=5)
        pair = make_phantom_pair(cfg)
        inside = pair.tissue_mask.values > 0.999
        for key in ("av", "sh", "sv"):
            assert_allclose(pair.moving[key].values[inside], 0.5, atol=1e-9)

    def test_noise_statistics(self):
        g = geom(16)
        sigma = 0.05
        quiet = make_phantom_pair(PhantomConfig(g, noise_sigma=0.0, seed=9))
        noisy = make_phantom_pair(PhantomConfig(g, noise_sigma=sigma, seed=9))
        resid = noisy.moving["av"].values - quiet.moving["av"].values
        assert np.std(resid) == pytest.approx(sigma, rel=0.05)
        assert np.mean(resid) == pytest.approx(0.0, abs=3 * sigma / np.sqrt(g.n_voxels) * 3)
