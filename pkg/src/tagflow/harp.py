"""Harmonic-phase extraction from tagged volumes.

A tagged acquisition concentrates its energy at the tag frequency; isolating
that spectral peak with a Gaussian bandpass in the 3D Fourier domain and
taking the argument of the resulting complex image yields a wrapped phase
map that moves with the tissue.  The magnitude channel doubles as a
confidence map.  Phases are never unwrapped; downstream similarity works on
their sin/cos images instead, which are smooth across wrap boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    BoundaryPolicy,
    Geometry,
    ScalarVolume,
    TrilinearMap,
    VectorField,
    require_same_geometry,
)

__all__ = [
    "HarpImage",
    "SinCosTrio",
    "resample_isotropic",
    "resample_isotropic_field",
    "harp_filter",
    "sincos_transform",
    "combine_magnitude",
    "extract_trio",
]

_MAG_FLOOR = 1e-6  # below this normalized magnitude the phase is set to 0


@dataclass(frozen=True)
class HarpImage:
    """Bandpass magnitude (normalized to [0, 1]) and wrapped phase."""

    magnitude: ScalarVolume
    phase: ScalarVolume

    def __post_init__(self) -> None:
        require_same_geometry(self.magnitude.geometry, self.phase.geometry, "HarpImage")
        if np.min(self.magnitude.values) < 0:
            raise ValueError("magnitude must be non-negative")
        p = self.phase.values
        if np.min(p) <= -np.pi or np.max(p) > np.pi:
            raise ValueError("phase must be wrapped to (-pi, pi]")

    @property
    def geometry(self) -> Geometry:
        return self.magnitude.geometry


@dataclass(frozen=True)
class SinCosTrio:
    """Sin/cos images of the three tag-orientation phases (keys av, sh, sv).

    Freshly extracted trios satisfy sin^2 + cos^2 = 1 per voxel; resampled
    or warped copies generally do not, because interpolation acts on each
    channel independently.
    """

    geometry: Geometry
    sin: dict[str, ScalarVolume]
    cos: dict[str, ScalarVolume]

    def __post_init__(self) -> None:
        for d in (self.sin, self.cos):
            if set(d) != {"av", "sh", "sv"}:
                raise ValueError(f"trio requires channels av/sh/sv, got {sorted(d)}")
            for vol in d.values():
                require_same_geometry(vol.geometry, self.geometry, "SinCosTrio")

    def stacked(self) -> np.ndarray:
        """Channels as one (6, nx, ny, nz) array: (sin, cos) per key in av, sh, sv order."""
        parts = []
        for key in ("av", "sh", "sv"):
            parts.append(self.sin[key].values)
            parts.append(self.cos[key].values)
        return np.stack(parts, axis=0)

    @classmethod
    def from_stacked(cls, geometry: Geometry, stacked: np.ndarray) -> "SinCosTrio":
        sin: dict[str, ScalarVolume] = {}
        cos: dict[str, ScalarVolume] = {}
        for i, key in enumerate(("av", "sh", "sv")):
            sin[key] = ScalarVolume(geometry, stacked[2 * i])
            cos[key] = ScalarVolume(geometry, stacked[2 * i + 1])
        return cls(geometry, sin, cos)

    @classmethod
    def from_harp(cls, harps: dict[str, HarpImage]) -> "SinCosTrio":
        if set(harps) != {"av", "sh", "sv"}:
            raise ValueError(f"expected keys av/sh/sv, got {sorted(harps)}")
        geometry = harps["av"].geometry
        sin: dict[str, ScalarVolume] = {}
        cos: dict[str, ScalarVolume] = {}
        for key, harp in harps.items():
            s, c = sincos_transform(harp.phase)
            sin[key], cos[key] = s, c
        return cls(geometry, sin, cos)


def _iso_dims(geometry: Geometry, target: float) -> tuple[int, int, int]:
    return tuple(int(np.floor((n - 1) * s / target)) + 1
                 for n, s in zip(geometry.dims, geometry.spacing))


def resample_isotropic(vol: ScalarVolume, target_spacing: float) -> ScalarVolume:
    """Trilinearly resample onto a grid with uniform spacing ``target_spacing``.

    The output grid starts at the same physical origin and covers the input
    extent; the target spacing must not be coarser than the finest input
    spacing (this operation refines, it does not decimate).
    """
    if target_spacing <= 0:
        raise ValueError(f"target_spacing must be positive, got {target_spacing}")
    if target_spacing > min(vol.geometry.spacing) * (1 + 1e-12):
        raise ValueError(f"target_spacing {target_spacing} is coarser than the finest "
                         f"input spacing {min(vol.geometry.spacing)}")
    new_dims = _iso_dims(vol.geometry, target_spacing)
    new_geom = Geometry(new_dims, (target_spacing,) * 3)
    scale = np.array([target_spacing / s for s in vol.geometry.spacing])
    axes = [np.arange(n, dtype=np.float64) for n in new_dims]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1) * scale
    m = TrilinearMap(pts, vol.geometry.dims, BoundaryPolicy.CLAMP)
    return ScalarVolume(new_geom, m.apply(vol.values).reshape(new_dims))


def resample_isotropic_field(field: VectorField, target_spacing: float) -> VectorField:
    """Resample a voxel-unit vector field, rescaling components to new voxels."""
    comps = []
    for c in range(3):
        vol = ScalarVolume(field.geometry, field.vectors[..., c])
        res = resample_isotropic(vol, target_spacing)
        comps.append(res.values * (field.geometry.spacing[c] / target_spacing))
    new_geom = Geometry(_iso_dims(field.geometry, target_spacing), (target_spacing,) * 3)
    return VectorField(new_geom, np.stack(comps, axis=-1))


def harp_filter(vol: ScalarVolume, tag_direction, wavelength: float,
                sigma_f: float | None = None) -> HarpImage:
    """Extract the harmonic peak at (1/wavelength) * tag_direction.

    Args:
        vol: tagged volume (any intensity scale; the phase is scale-free).
        tag_direction: direction of tag modulation; normalized internally.
        wavelength: tag period in voxels, >= 3.
        sigma_f: Gaussian window width in cycles/voxel; defaults to
            1 / (2 * wavelength).

    Returns:
        HarpImage with 99th-percentile-normalized magnitude and phase in
        (-pi, pi].  The window is a Gaussian bandpass at the tag frequency
        multiplied by a complementary Gaussian notch at DC; the notch makes
        the filter's response to locally constant intensity exactly zero,
        so the mean-intensity content of tissue cannot bias the phase (a
        lone zeroed DC bin would only remove the volume-wide mean).

    Raises:
        ValueError: if the tag frequency sits closer than two window widths
            to DC, where the passband would capture the mean-intensity peak.
    """
    if wavelength < 3:
        raise ValueError(f"wavelength must be >= 3 voxels, got {wavelength}")
    direction = np.asarray(tag_direction, dtype=np.float64)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        raise ValueError("tag direction must be a non-zero vector")
    direction = direction / norm
    sigma = float(sigma_f) if sigma_f is not None else 1.0 / (2.0 * wavelength)
    if sigma <= 0:
        raise ValueError(f"sigma_f must be positive, got {sigma}")
    f0 = direction / wavelength
    f0_norm = float(np.linalg.norm(f0))
    if f0_norm < 2.0 * sigma * (1.0 - 1e-12):
        raise ValueError(f"tag frequency too low: |f0|={f0_norm:.4g} cycles/voxel is "
                         f"within 2 sigma ({2 * sigma:.4g}) of the DC peak")

    dims = vol.geometry.dims
    spectrum = np.fft.fftn(vol.values)
    window = np.ones(dims, dtype=np.float64)
    freq_sq = np.zeros(dims, dtype=np.float64)
    for axis, n in enumerate(dims):
        freqs = np.fft.fftfreq(n)
        g = np.exp(-((freqs - f0[axis]) ** 2) / (2.0 * sigma ** 2))
        shape = [1, 1, 1]
        shape[axis] = n
        window = window * g.reshape(shape)
        freq_sq = freq_sq + (freqs ** 2).reshape(shape)
    window = window * (1.0 - np.exp(-freq_sq / (2.0 * sigma ** 2)))
    window[0, 0, 0] = 0.0
    complex_image = np.fft.ifftn(spectrum * window)

    magnitude = np.abs(complex_image)
    p99 = float(np.percentile(magnitude, 99))
    if p99 > 0:
        magnitude = np.clip(magnitude / p99, 0.0, 1.0)
    else:
        magnitude = np.zeros(dims)
    phase = np.angle(complex_image)
    phase[phase <= -np.pi] += 2.0 * np.pi  # wrap convention: (-pi, pi]
    phase[magnitude < _MAG_FLOOR] = 0.0
    return HarpImage(ScalarVolume(vol.geometry, magnitude),
                     ScalarVolume(vol.geometry, phase))


def sincos_transform(phase: ScalarVolume) -> tuple[ScalarVolume, ScalarVolume]:
    """Element-wise (sin, cos) of a wrapped phase volume."""
    return (ScalarVolume(phase.geometry, np.sin(phase.values)),
            ScalarVolume(phase.geometry, np.cos(phase.values)))


def combine_magnitude(d_av: ScalarVolume, d_sh: ScalarVolume,
                      d_sv: ScalarVolume) -> ScalarVolume:
    """Voxel-wise mean of the three magnitude images, clipped to [0, 1]."""
    require_same_geometry(d_av.geometry, d_sh.geometry, "combine_magnitude")
    require_same_geometry(d_av.geometry, d_sv.geometry, "combine_magnitude")
    mean = (d_av.values + d_sh.values + d_sv.values) / 3.0
    return ScalarVolume(d_av.geometry, np.clip(mean, 0.0, 1.0))


def extract_trio(volumes: dict[str, ScalarVolume], wavelength: float,
                 directions: dict[str, tuple[float, float, float]] | None = None,
                 sigma_f: float | None = None) -> tuple[SinCosTrio, ScalarVolume]:
    """HARP-process a trio of tagged volumes into sin/cos channels plus I_Mag.

    ``volumes`` maps av/sh/sv to tagged acquisitions; ``directions`` maps the
    same keys to tag directions (defaults to the x, y, z axes).
    """
    if directions is None:
        directions = {"av": (1.0, 0.0, 0.0), "sh": (0.0, 1.0, 0.0), "sv": (0.0, 0.0, 1.0)}
    if set(volumes) != {"av", "sh", "sv"}:
        raise ValueError(f"expected volume keys av/sh/sv, got {sorted(volumes)}")
    harps = {key: harp_filter(volumes[key], directions[key], wavelength, sigma_f)
             for key in ("av", "sh", "sv")}
    trio = SinCosTrio.from_harp(harps)
    i_mag = combine_magnitude(harps["av"].magnitude, harps["sh"].magnitude,
                              harps["sv"].magnitude)
    return trio, i_mag
