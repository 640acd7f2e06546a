"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from tagflow.grid import Geometry, ScalarVolume, VectorField


def geom(n: int = 8, spacing=(1.0, 1.0, 1.0)) -> Geometry:
    return Geometry((n, n, n), spacing)


def linear_field(geometry: Geometry, coeffs: np.ndarray, offset=(0.0, 0.0, 0.0)) -> VectorField:
    """u_c(x) = offset_c + sum_i coeffs[c, i] * x_i  (exact under the stencils)."""
    nx, ny, nz = geometry.dims
    x, y, z = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    pts = np.stack([x, y, z], axis=-1).astype(np.float64)
    u = pts @ np.asarray(coeffs, dtype=np.float64).T + np.asarray(offset, dtype=np.float64)
    return VectorField(geometry, u)


def random_volume(geometry: Geometry, seed: int, lo: float = 0.0, hi: float = 1.0) -> ScalarVolume:
    rng = np.random.default_rng(seed)
    return ScalarVolume(geometry, rng.uniform(lo, hi, size=geometry.dims))


def smooth_random_volume(geometry: Geometry, seed: int, cycles: int = 2) -> ScalarVolume:
    """Band-limited random scalar volume (sum of a few low-frequency cosines)."""
    rng = np.random.default_rng(seed)
    nx, ny, nz = geometry.dims
    x, y, z = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    vals = np.zeros(geometry.dims)
    for _ in range(6):
        k = rng.integers(-cycles, cycles + 1, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.normal()
        vals += amp * np.cos(2 * np.pi * (k[0] * x / nx + k[1] * y / ny + k[2] * z / nz) + phase)
    return ScalarVolume(geometry, vals)


def smooth_random_field(geometry: Geometry, seed: int, amplitude: float,
                        cycles: int = 2) -> VectorField:
    """Band-limited random vector field scaled to the given peak magnitude."""
    comps = [smooth_random_volume(geometry, seed + 31 * c, cycles).values for c in range(3)]
    u = np.stack(comps, axis=-1)
    peak = np.max(np.sqrt(np.sum(u * u, axis=-1)))
    if peak > 0:
        u *= amplitude / peak
    return VectorField(geometry, u)


def series_field(geometry: Geometry, seed: int, amplitude: float,
                 bandlimit: int = 2, decay: float = 6.0) -> VectorField:
    """Very smooth random field (strong spectral decay), peak-normalized.

    Gentle enough that the discrete flow integrator stays well within its
    inverse-consistency tolerance at peak speeds of a few voxels.
    """
    from tagflow.grid import base_points
    from tagflow.phantom import TrigVectorSeries

    series = TrigVectorSeries(geometry.dims, bandlimit, np.random.default_rng(seed), decay)
    u = series(base_points(geometry.dims))
    peak = np.max(np.sqrt(np.sum(u * u, axis=1)))
    if peak > 0:
        u *= amplitude / peak
    return VectorField(geometry, u.reshape(geometry.dims + (3,)))
