"""Volume containers and sampling primitives.

Conventions used across the package:

* Arrays are indexed ``[x, y, z]``; a scalar volume has shape ``(nx, ny, nz)``
  and a vector field has shape ``(nx, ny, nz, 3)`` with the last axis holding
  the (x, y, z) components.
* All coordinates, displacements and derivatives are expressed in voxel
  units.  Physical spacing is metadata and only enters when volumes are
  resampled onto a different grid.
* Derivatives on the grid use central differences in the interior and
  one-sided differences on the boundary faces.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Geometry",
    "BoundaryPolicy",
    "ScalarVolume",
    "VectorField",
    "TrilinearMap",
    "sample_trilinear",
    "warp_scalar",
    "base_points",
    "axis_gradient",
    "axis_gradient_adjoint",
    "displacement_jacobian",
    "jacobian_determinant",
    "det3",
    "cofactors3",
    "require_same_geometry",
]


@dataclass(frozen=True)
class Geometry:
    """Grid dimensions and physical voxel spacing.

    Attributes:
        dims: number of voxels along (x, y, z); each must be >= 2.
        spacing: physical voxel size along (x, y, z); each must be > 0.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValueError("geometry requires three dims and three spacings")
        if any(d < 2 for d in dims):
            raise ValueError(f"all dims must be >= 2, got {dims}")
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise ValueError(f"all spacings must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def is_isotropic(self) -> bool:
        sx, sy, sz = self.spacing
        return abs(sy - sx) <= 1e-9 * sx and abs(sz - sx) <= 1e-9 * sx


class BoundaryPolicy(Enum):
    """How sampling treats coordinates outside the grid."""

    CLAMP = "clamp"  # clamp the coordinate to the valid range
    ZERO = "zero"    # treat values outside the grid as zero


def _check_values(values: np.ndarray, dims: tuple[int, int, int], rank: int) -> np.ndarray:
    values = np.asarray(values)
    if not np.issubdtype(values.dtype, np.floating):
        raise ValueError(f"expected floating-point values, got dtype {values.dtype}")
    expected = dims if rank == 3 else dims + (3,)
    if values.shape != expected:
        raise ValueError(f"values shape {values.shape} does not match geometry {expected}")
    if not np.all(np.isfinite(values)):
        raise ValueError("values contain NaN or Inf")
    return values


@dataclass(frozen=True)
class ScalarVolume:
    """A single-channel volume with finite floating-point values."""

    geometry: Geometry
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _check_values(self.values, self.geometry.dims, 3))


@dataclass(frozen=True)
class VectorField:
    """A per-voxel 3-vector field (displacement or velocity), in voxels."""

    geometry: Geometry
    vectors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vectors", _check_values(self.vectors, self.geometry.dims, 4))


def require_same_geometry(a: Geometry, b: Geometry, what: str) -> None:
    if a.dims != b.dims or not np.allclose(a.spacing, b.spacing):
        raise ValueError(f"{what}: geometry mismatch ({a} vs {b})")


_BASE_CACHE: dict[tuple, np.ndarray] = {}


def base_points(dims: tuple[int, int, int], dtype=np.float64) -> np.ndarray:
    """Voxel-centre coordinates of every grid point, shape (n_voxels, 3).

    The ordering matches ``values.reshape(-1)`` for an (nx, ny, nz) array,
    i.e. z varies fastest.  The returned array is cached and read-only.
    """
    key = (dims, np.dtype(dtype).str)
    pts = _BASE_CACHE.get(key)
    if pts is None:
        axes = [np.arange(n, dtype=dtype) for n in dims]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        pts.setflags(write=False)
        _BASE_CACHE[key] = pts
    return pts


class TrilinearMap:
    """Trilinear interpolation stencil for a fixed set of query points.

    Precomputes corner indices and weights once so that many volumes can be
    sampled at the same points cheaply.  Also exposes the two adjoint-style
    operations needed for gradient computation: the exact derivative of the
    interpolant with respect to the query point, and the transpose of
    sampling (scatter of a cotangent back onto the grid).
    """

    def __init__(self, points: np.ndarray, dims: tuple[int, int, int],
                 policy: BoundaryPolicy = BoundaryPolicy.CLAMP) -> None:
        points = np.asarray(points)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"points must have shape (P, 3), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError("query points contain NaN or Inf")
        nx, ny, nz = dims
        if min(dims) < 2:
            raise ValueError(f"grid dims must be >= 2 for interpolation, got {dims}")
        dims_arr = np.asarray(dims, dtype=points.dtype)
        self.dims = (nx, ny, nz)
        self.policy = policy

        if policy is BoundaryPolicy.CLAMP:
            q = np.clip(points, 0.0, dims_arr - 1.0)
            i0 = np.minimum(q.astype(np.int64), np.asarray(dims, dtype=np.int64) - 2)
            frac = q - i0
            # Derivative of the clamp: zero once the coordinate leaves the grid.
            self._dmask = ((points >= 0.0) & (points <= dims_arr - 1.0)).astype(points.dtype)
            self._corner_valid = None
        elif policy is BoundaryPolicy.ZERO:
            fl = np.floor(points)
            i0 = fl.astype(np.int64)
            frac = points - fl
            valid0 = (i0 >= 0) & (i0 < np.asarray(dims, dtype=np.int64))
            valid1 = (i0 + 1 >= 0) & (i0 + 1 < np.asarray(dims, dtype=np.int64))
            self._dmask = None
            self._corner_valid = (valid0, valid1)
            i0 = np.clip(i0, -1, np.asarray(dims, dtype=np.int64) - 1)
        else:  # pragma: no cover - enum is closed
            raise ValueError(f"unknown boundary policy {policy!r}")

        self._frac = frac
        ix0, iy0, iz0 = i0[:, 0], i0[:, 1], i0[:, 2]
        ix1 = np.minimum(ix0 + 1, nx - 1)
        iy1 = np.minimum(iy0 + 1, ny - 1)
        iz1 = np.minimum(iz0 + 1, nz - 1)
        ix0c = np.maximum(ix0, 0)
        iy0c = np.maximum(iy0, 0)
        iz0c = np.maximum(iz0, 0)
        # Flat indices of the 8 cell corners, ordered by bits (x, y, z).
        flat = np.empty((8, points.shape[0]), dtype=np.int64)
        for corner in range(8):
            cx = ix1 if corner & 4 else ix0c
            cy = iy1 if corner & 2 else iy0c
            cz = iz1 if corner & 1 else iz0c
            flat[corner] = (cx * ny + cy) * nz + cz
        self._flat = flat
        if self._corner_valid is not None:
            valid0, valid1 = self._corner_valid
            vmask = np.empty((8, points.shape[0]), dtype=points.dtype)
            for corner in range(8):
                vx = valid1[:, 0] if corner & 4 else valid0[:, 0]
                vy = valid1[:, 1] if corner & 2 else valid0[:, 1]
                vz = valid1[:, 2] if corner & 1 else valid0[:, 2]
                vmask[corner] = (vx & vy & vz).astype(points.dtype)
            self._vmask = vmask
        else:
            self._vmask = None
        self._w8 = None  # per-corner weight products, built lazily for scatter

    @property
    def n_points(self) -> int:
        return self._flat.shape[1]

    def _corner_values(self, values: np.ndarray) -> np.ndarray:
        v = np.ascontiguousarray(values).reshape(-1)[self._flat]
        if self._vmask is not None:
            v = v * self._vmask
        return v

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Sample one (nx, ny, nz) array, or a (C, nx, ny, nz) channel stack.

        Returns (P,) for a single volume and (C, P) for a stack.  (Channel
        stacks loop over the single-volume kernel: per-channel gathers beat
        one mixed slice/fancy-index gather by a wide margin.)
        """
        if values.ndim == 4:
            return np.stack([self.apply(values[c]) for c in range(values.shape[0])])
        v = self._corner_values(values)
        fx, fy, fz = self._frac[:, 0], self._frac[:, 1], self._frac[:, 2]
        v00 = v[0] + fz * (v[1] - v[0])
        v01 = v[2] + fz * (v[3] - v[2])
        v10 = v[4] + fz * (v[5] - v[4])
        v11 = v[6] + fz * (v[7] - v[6])
        v0 = v00 + fy * (v01 - v00)
        v1 = v10 + fy * (v11 - v10)
        return v0 + fx * (v1 - v0)

    def apply_with_point_grad(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Sample and differentiate with respect to the query point.

        Returns:
            (vals, grad) with shapes (P,) and (P, 3) for one volume, or
            (C, P) and (C, P, 3) for a (C, nx, ny, nz) channel stack;
            ``grad[..., p, i]`` is the exact partial derivative of the
            interpolated value at point p with respect to coordinate i of
            that point.
        """
        if values.ndim == 4:
            pairs = [self.apply_with_point_grad(values[c]) for c in range(values.shape[0])]
            return (np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))
        v = self._corner_values(values)
        fx, fy, fz = self._frac[:, 0], self._frac[:, 1], self._frac[:, 2]
        v00 = v[0] + fz * (v[1] - v[0])
        v01 = v[2] + fz * (v[3] - v[2])
        v10 = v[4] + fz * (v[5] - v[4])
        v11 = v[6] + fz * (v[7] - v[6])
        v0 = v00 + fy * (v01 - v00)
        v1 = v10 + fy * (v11 - v10)
        vals = v0 + fx * (v1 - v0)

        dx = v1 - v0
        dy0 = v01 - v00
        dy1 = v11 - v10
        dy = dy0 + fx * (dy1 - dy0)
        dz00 = v[1] - v[0]
        dz01 = v[3] - v[2]
        dz10 = v[5] - v[4]
        dz11 = v[7] - v[6]
        dz0 = dz00 + fy * (dz01 - dz00)
        dz1 = dz10 + fy * (dz11 - dz10)
        dz = dz0 + fx * (dz1 - dz0)
        grad = np.stack([dx, dy, dz], axis=1)
        if self._dmask is not None:
            grad = grad * self._dmask
        return vals, grad

    def _corner_weights(self) -> np.ndarray:
        if self._w8 is None:
            fx, fy, fz = self._frac[:, 0], self._frac[:, 1], self._frac[:, 2]
            wx = (1.0 - fx, fx)
            wy = (1.0 - fy, fy)
            wz = (1.0 - fz, fz)
            w8 = np.empty((8, self._frac.shape[0]), dtype=self._frac.dtype)
            for corner in range(8):
                w8[corner] = (wx[1 if corner & 4 else 0]
                              * wy[1 if corner & 2 else 0]
                              * wz[1 if corner & 1 else 0])
            if self._vmask is not None:
                w8 *= self._vmask
            self._w8 = w8
        return self._w8

    def scatter(self, cotangent: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`apply`: distribute weights onto the grid.

        Accepts (P,) or a (C, P) stack, returning (nx, ny, nz) or
        (C, nx, ny, nz).  Satisfies ``<apply(v), c> == <v, scatter(c)>`` for
        every volume v and cotangent c, which is exactly what reverse-mode
        differentiation of a sampling step requires.
        """
        if cotangent.ndim == 2:
            return np.stack([self.scatter(cotangent[c]) for c in range(cotangent.shape[0])])
        w8 = self._corner_weights()
        data = (w8 * cotangent[np.newaxis, :]).reshape(-1)
        nx, ny, nz = self.dims
        out = np.bincount(self._flat.reshape(-1), weights=data, minlength=nx * ny * nz)
        return out.reshape(self.dims).astype(cotangent.dtype, copy=False)


def sample_trilinear(volume: ScalarVolume, point, policy: BoundaryPolicy = BoundaryPolicy.CLAMP) -> float:
    """Interpolate ``volume`` at one continuous voxel coordinate."""
    pt = np.asarray(point, dtype=np.float64).reshape(1, 3)
    m = TrilinearMap(pt, volume.geometry.dims, policy)
    return float(m.apply(volume.values)[0])


def warp_scalar(volume: ScalarVolume, displacement: VectorField,
                policy: BoundaryPolicy = BoundaryPolicy.CLAMP) -> ScalarVolume:
    """Pull back a volume through a displacement: out(x) = vol(x + u(x))."""
    require_same_geometry(volume.geometry, displacement.geometry, "warp_scalar")
    dtype = displacement.vectors.dtype
    pts = base_points(volume.geometry.dims, dtype) + displacement.vectors.reshape(-1, 3)
    m = TrilinearMap(pts, volume.geometry.dims, policy)
    return ScalarVolume(volume.geometry, m.apply(volume.values).reshape(volume.geometry.dims))


def axis_gradient(values: np.ndarray, axis: int) -> np.ndarray:
    """Per-voxel derivative along one axis (central inside, one-sided at faces)."""
    return np.gradient(values, axis=axis, edge_order=1)


def axis_gradient_adjoint(cotangent: np.ndarray, axis: int) -> np.ndarray:
    """Exact transpose of :func:`axis_gradient` along the same axis."""
    y = np.moveaxis(cotangent, axis, 0)
    g = np.zeros_like(y)
    # Boundary rows: (Lf)_0 = f_1 - f_0 and (Lf)_{n-1} = f_{n-1} - f_{n-2}.
    g[0] -= y[0]
    g[1] += y[0]
    g[-2] -= y[-1]
    g[-1] += y[-1]
    # Interior rows spread +-1/2 to their neighbours.
    g[0:-2] -= 0.5 * y[1:-1]
    g[2:] += 0.5 * y[1:-1]
    return np.moveaxis(g, 0, axis)


def displacement_jacobian(field: VectorField) -> np.ndarray:
    """Spatial Jacobian of a vector field, shape (nx, ny, nz, 3, 3).

    ``J[..., c, i]`` holds the derivative of component c along axis i, in
    voxel units.  Requires at least 3 voxels along every axis so that the
    interior stencil exists.
    """
    if min(field.geometry.dims) < 3:
        raise ValueError(f"jacobian requires dims >= 3, got {field.geometry.dims}")
    u = field.vectors
    J = np.empty(field.geometry.dims + (3, 3), dtype=u.dtype)
    for c in range(3):
        for i in range(3):
            J[..., c, i] = axis_gradient(u[..., c], i)
    return J


def det3(mats: np.ndarray) -> np.ndarray:
    """Determinant of stacked 3x3 matrices via cofactor expansion."""
    m = mats
    return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
            - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
            + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]))


def cofactors3(mats: np.ndarray) -> np.ndarray:
    """Cofactor matrix C with C[..., r, c] = d det / d m[..., r, c]."""
    m = mats
    C = np.empty_like(m)
    C[..., 0, 0] = m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1]
    C[..., 0, 1] = -(m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
    C[..., 0, 2] = m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]
    C[..., 1, 0] = -(m[..., 0, 1] * m[..., 2, 2] - m[..., 0, 2] * m[..., 2, 1])
    C[..., 1, 1] = m[..., 0, 0] * m[..., 2, 2] - m[..., 0, 2] * m[..., 2, 0]
    C[..., 1, 2] = -(m[..., 0, 0] * m[..., 2, 1] - m[..., 0, 1] * m[..., 2, 0])
    C[..., 2, 0] = m[..., 0, 1] * m[..., 1, 2] - m[..., 0, 2] * m[..., 1, 1]
    C[..., 2, 1] = -(m[..., 0, 0] * m[..., 1, 2] - m[..., 0, 2] * m[..., 1, 0])
    C[..., 2, 2] = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return C


def jacobian_determinant(field: VectorField) -> ScalarVolume:
    """Signed determinant of (I + Jacobian(u)) per voxel (no clipping)."""
    J = displacement_jacobian(field)
    G = J.copy()
    for c in range(3):
        G[..., c, c] += 1.0
    return ScalarVolume(field.geometry, det3(G))
