"""Synthetic tagged phantoms with known, volume-preserving ground truth.

The ground-truth motion is the time-1 flow of a divergence-free stationary
velocity field, built as the curl of a random band-limited trigonometric
vector potential.  Because the potential has closed-form derivatives, the
velocity, its spatial Jacobian, and its (identically zero) divergence are
all available analytically, which the tests use as oracles.

Tag volumes are soft-edged ellipsoids carrying a cosine tag pattern; the
moving volumes are the fixed ones pulled back through the inverse flow,
optionally faded toward their local mean and corrupted with Gaussian noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .deform import VelocityParam, integrate_velocity
from .grid import Geometry, ScalarVolume, VectorField, base_points, warp_scalar

logger = logging.getLogger(__name__)

__all__ = [
    "TAG_KEYS",
    "BACKGROUND_INTENSITY",
    "Ellipsoid",
    "PhantomConfig",
    "PhantomPair",
    "TrigVectorSeries",
    "DivergenceFreeField",
    "divergence_free_model",
    "make_divergence_free_velocity",
    "make_tagged_volume",
    "make_phantom_pair",
]

TAG_KEYS = ("av", "sh", "sv")          # tag orientations along x, y, z
TAG_DIRECTIONS = {
    "av": (1.0, 0.0, 0.0),
    "sh": (0.0, 1.0, 0.0),
    "sv": (0.0, 0.0, 1.0),
}
BACKGROUND_INTENSITY = 0.05


class TrigVectorSeries:
    """Random band-limited 3-vector trigonometric series on a periodic box.

    f_c(x) = sum_m a[m, c] * cos(2*pi * k_m . (x / n) + phi_m) over integer
    wave vectors 0 < |k|_inf <= bandlimit (one representative per +-k pair),
    with coefficients drawn from a seeded normal and damped by |k|^-decay.
    First and second derivatives are available in closed form.
    """

    def __init__(self, dims: tuple[int, int, int], bandlimit: int, rng: np.random.Generator,
                 decay: float = 2.0) -> None:
        if bandlimit < 1:
            raise ValueError(f"bandlimit must be >= 1, got {bandlimit}")
        modes = []
        span = range(-bandlimit, bandlimit + 1)
        for kx in span:
            for ky in span:
                for kz in span:
                    k = (kx, ky, kz)
                    if k == (0, 0, 0):
                        continue
                    # keep one representative of each {k, -k} pair
                    if k < tuple(-c for c in k):
                        continue
                    modes.append(k)
        k_arr = np.asarray(modes, dtype=np.float64)                       # (M, 3)
        self.freq = 2.0 * np.pi * k_arr / np.asarray(dims, dtype=np.float64)
        norms = np.sqrt(np.sum(k_arr * k_arr, axis=1))
        self.coef = rng.normal(size=(len(modes), 3)) / norms[:, np.newaxis] ** decay
        self.phase = rng.uniform(0.0, 2.0 * np.pi, size=len(modes))

    def _angles(self, points: np.ndarray) -> np.ndarray:
        return points @ self.freq.T + self.phase                          # (P, M)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the series at (P, 3) points; returns (P, 3)."""
        return np.cos(self._angles(points)) @ self.coef

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """First derivatives, shape (P, 3, 3): [p, c, i] = d f_c / d x_i."""
        s = np.sin(self._angles(points))                                  # (P, M)
        return -np.einsum("pm,mc,mi->pci", s, self.coef, self.freq)

    def hessian(self, points: np.ndarray) -> np.ndarray:
        """Second derivatives, shape (P, 3, 3, 3): [p, c, i, j] = d2 f_c / dx_i dx_j."""
        c = np.cos(self._angles(points))
        return -np.einsum("pm,mc,mi,mj->pcij", c, self.coef, self.freq, self.freq)

    def scale(self, factor: float) -> None:
        self.coef = self.coef * factor


class DivergenceFreeField:
    """Velocity v = curl(A) of a trigonometric vector potential A.

    Being a curl, v is divergence-free in the continuum for every draw, so
    its exact flow is volume-preserving.  ``jacobian`` gives the analytic
    spatial Jacobian of v for use as a derivative oracle.
    """

    def __init__(self, dims: tuple[int, int, int], bandlimit: int, rng: np.random.Generator,
                 decay: float = 4.0) -> None:
        self.potential = TrigVectorSeries(dims, bandlimit, rng, decay)

    def velocity(self, points: np.ndarray) -> np.ndarray:
        G = self.potential.gradient(points)
        return np.stack([
            G[:, 2, 1] - G[:, 1, 2],
            G[:, 0, 2] - G[:, 2, 0],
            G[:, 1, 0] - G[:, 0, 1],
        ], axis=1)

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        H = self.potential.hessian(points)
        J = np.empty((points.shape[0], 3, 3), dtype=np.float64)
        J[:, 0, :] = H[:, 2, 1, :] - H[:, 1, 2, :]
        J[:, 1, :] = H[:, 0, 2, :] - H[:, 2, 0, :]
        J[:, 2, :] = H[:, 1, 0, :] - H[:, 0, 1, :]
        return J

    def divergence(self, points: np.ndarray) -> np.ndarray:
        J = self.jacobian(points)
        return J[:, 0, 0] + J[:, 1, 1] + J[:, 2, 2]


def divergence_free_model(geometry: Geometry, amplitude: float, bandlimit: int,
                          seed: int) -> DivergenceFreeField:
    """Seeded divergence-free velocity model scaled to the given peak speed."""
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    rng = np.random.default_rng(seed)
    model = DivergenceFreeField(geometry.dims, bandlimit, rng)
    pts = base_points(geometry.dims)
    speeds = np.sqrt(np.sum(model.velocity(pts) ** 2, axis=1))
    peak = float(np.max(speeds))
    model.potential.scale(amplitude / peak if peak > 0 else 0.0)
    return model


def make_divergence_free_velocity(geometry: Geometry, amplitude: float, bandlimit: int,
                                  seed: int) -> VectorField:
    """Sample a seeded, analytically divergence-free velocity on the grid."""
    model = divergence_free_model(geometry, amplitude, bandlimit, seed)
    v = model.velocity(base_points(geometry.dims))
    return VectorField(geometry, v.reshape(geometry.dims + (3,)))


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid in voxel coordinates."""

    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.center) != 3 or len(self.semi_axes) != 3:
            raise ValueError("ellipsoid needs 3 center and 3 semi-axis entries")
        if any(a <= 0 for a in self.semi_axes):
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "semi_axes", tuple(float(a) for a in self.semi_axes))


def default_ellipsoid(geometry: Geometry) -> Ellipsoid:
    dims = geometry.dims
    center = tuple((d - 1) / 2.0 for d in dims)
    semi_axes = tuple(0.38 * (d - 1) for d in dims)
    return Ellipsoid(center, semi_axes)


@dataclass(frozen=True)
class PhantomConfig:
    """Everything needed to generate one reproducible phantom pair."""

    geometry: Geometry
    tag_wavelength: float = 8.0
    tissue_ellipsoid: Ellipsoid | None = None
    velocity_amplitude: float = 2.0
    velocity_bandlimit: int = 2
    fading_factor: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tag_wavelength < 3:
            raise ValueError(f"tag_wavelength must be >= 3 voxels, got {self.tag_wavelength}")
        if self.velocity_amplitude < 0:
            raise ValueError("velocity_amplitude must be >= 0")
        if self.velocity_bandlimit < 1:
            raise ValueError("velocity_bandlimit must be >= 1")
        if not 0.0 <= self.fading_factor <= 1.0:
            raise ValueError(f"fading_factor must lie in [0, 1], got {self.fading_factor}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class PhantomPair:
    """A fixed/moving tagged trio with its generating ground truth."""

    fixed: dict[str, ScalarVolume]
    moving: dict[str, ScalarVolume]
    truth_velocity: VectorField
    truth_displacement: VectorField
    tissue_mask: ScalarVolume


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def tissue_mask_volume(geometry: Geometry, ellipsoid: Ellipsoid) -> ScalarVolume:
    """Soft ellipsoid indicator: 1 inside, 0 outside, ~2-voxel smooth edge."""
    pts = base_points(geometry.dims)
    rel = (pts - np.asarray(ellipsoid.center)) / np.asarray(ellipsoid.semi_axes)
    r = np.sqrt(np.sum(rel * rel, axis=1))
    # distance-like coordinate: > 0 inside, in approximate voxel units
    signed = (1.0 - r) * min(ellipsoid.semi_axes)
    m = _smoothstep(signed / 2.0 + 0.5)
    return ScalarVolume(geometry, m.reshape(geometry.dims))


def make_tagged_volume(geometry: Geometry, direction, wavelength: float,
                       tissue_ellipsoid: Ellipsoid) -> ScalarVolume:
    """Cosine tag pattern inside a soft ellipsoid, low constant outside.

    I(x) = m(x) * 0.5 * (1 + cos(2 pi dir.x / wavelength))
         + (1 - m(x)) * background
    """
    if wavelength < 3:
        raise ValueError(f"wavelength must be >= 3 voxels, got {wavelength}")
    direction = np.asarray(direction, dtype=np.float64)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        raise ValueError("tag direction must be a non-zero vector")
    direction = direction / norm
    pts = base_points(geometry.dims)
    tag = 0.5 * (1.0 + np.cos(2.0 * np.pi * (pts @ direction) / wavelength))
    m = tissue_mask_volume(geometry, tissue_ellipsoid).values.reshape(-1)
    vals = m * tag + (1.0 - m) * BACKGROUND_INTENSITY
    return ScalarVolume(geometry, vals.reshape(geometry.dims))


def make_phantom_pair(config: PhantomConfig) -> PhantomPair:
    """Generate a fixed/moving tagged trio with known incompressible motion.

    The fixed trio carries the undeformed tag pattern.  The moving trio is
    the fixed one pulled back through the inverse flow (so that registering
    moving onto fixed should recover ``truth_displacement``), then faded
    toward its local mean intensity and corrupted with Gaussian noise.
    Everything is a pure function of the config, including all randomness.
    """
    geometry = config.geometry
    ellipsoid = config.tissue_ellipsoid or default_ellipsoid(geometry)
    field_seed, noise_seed = np.random.SeedSequence(config.seed).spawn(2)

    model = DivergenceFreeField(geometry.dims, config.velocity_bandlimit,
                                np.random.default_rng(field_seed))
    pts = base_points(geometry.dims)
    v = model.velocity(pts)
    peak = float(np.max(np.sqrt(np.sum(v * v, axis=1))))
    if peak > 0:
        v *= config.velocity_amplitude / peak
    truth_velocity = VectorField(geometry, v.reshape(geometry.dims + (3,)))

    truth_displacement = integrate_velocity(VelocityParam(truth_velocity))
    inverse_flow = integrate_velocity(
        VelocityParam(VectorField(geometry, -truth_velocity.vectors)))

    mask = tissue_mask_volume(geometry, ellipsoid)
    warped_mask = warp_scalar(mask, inverse_flow)

    rng_noise = np.random.default_rng(noise_seed)
    fixed: dict[str, ScalarVolume] = {}
    moving: dict[str, ScalarVolume] = {}
    for key in TAG_KEYS:
        fixed_vol = make_tagged_volume(geometry, TAG_DIRECTIONS[key],
                                       config.tag_wavelength, ellipsoid)
        fixed[key] = fixed_vol
        warped = warp_scalar(fixed_vol, inverse_flow).values
        # tag fading: pull the pattern toward its local mean intensity
        local_mean = (warped_mask.values * 0.5
                      + (1.0 - warped_mask.values) * BACKGROUND_INTENSITY)
        faded = local_mean + config.fading_factor * (warped - local_mean)
        if config.noise_sigma > 0:
            faded = faded + config.noise_sigma * rng_noise.standard_normal(geometry.dims)
        moving[key] = ScalarVolume(geometry, faded)

    logger.debug("phantom pair ready: dims=%s amplitude=%.3g fading=%.3g noise=%.3g seed=%d",
                 geometry.dims, config.velocity_amplitude, config.fading_factor,
                 config.noise_sigma, config.seed)
    return PhantomPair(fixed=fixed, moving=moving, truth_velocity=truth_velocity,
                       truth_displacement=truth_displacement, tissue_mask=mask)
