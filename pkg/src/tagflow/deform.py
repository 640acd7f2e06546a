"""Stationary-velocity integration by scaling and squaring, and its adjoint.

A stationary velocity field v is turned into a displacement u (φ = id + u)
by halving v into u⁰ = v / 2^N and then squaring N times:

    u^{k+1}(x) = u^k(x) + u^k(x + u^k(x))

with trilinear sampling and clamped boundaries.  The reverse-mode adjoint
walks the squarings backwards; each step contributes the identity path, the
transpose of the sampling weights (a scatter), and the contraction of the
upstream gradient with the exact spatial derivative of the interpolated
field at the sample points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    BoundaryPolicy,
    TrilinearMap,
    VectorField,
    base_points,
    require_same_geometry,
)

__all__ = [
    "VelocityParam",
    "IntegrationCache",
    "integrate_velocity",
    "integrate_velocity_cached",
    "integrate_velocity_vjp",
    "compose",
]


@dataclass(frozen=True)
class VelocityParam:
    """A stationary velocity field and the number of squaring iterations."""

    velocity: VectorField
    n_steps: int = 7

    def __post_init__(self) -> None:
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValueError(f"n_steps must be a non-negative integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))


@dataclass
class IntegrationCache:
    """Intermediate fields u^k and their sampling stencils from a forward pass."""

    param: VelocityParam
    levels: list[np.ndarray] = field(default_factory=list)
    maps: list[TrilinearMap] = field(default_factory=list)
    displacement: VectorField | None = None


def _forward(param: VelocityParam, cache: IntegrationCache | None) -> np.ndarray:
    v = param.velocity.vectors
    dims = param.velocity.geometry.dims
    u = v / float(2 ** param.n_steps)
    base = base_points(dims, u.dtype)
    for _ in range(param.n_steps):
        pts = base + u.reshape(-1, 3)
        m = TrilinearMap(pts, dims, BoundaryPolicy.CLAMP)
        sampled = m.apply(np.moveaxis(u, -1, 0))  # (3, P)
        if cache is not None:
            cache.levels.append(u)
            cache.maps.append(m)
        u = u + np.moveaxis(sampled, 0, 1).reshape(u.shape)
    return u


def integrate_velocity(param: VelocityParam) -> VectorField:
    """Displacement u of the flow of v at unit time (scaling and squaring)."""
    return VectorField(param.velocity.geometry, _forward(param, None))


def integrate_velocity_cached(param: VelocityParam) -> IntegrationCache:
    """Forward integration that retains every u^k for a later adjoint pass."""
    cache = IntegrationCache(param)
    u = _forward(param, cache)
    cache.displacement = VectorField(param.velocity.geometry, u)
    return cache


def integrate_velocity_vjp(param: VelocityParam, grad_wrt_u: VectorField,
                           cache: IntegrationCache | None = None) -> VectorField:
    """Pull a gradient with respect to u back to a gradient with respect to v.

    Args:
        param: the velocity parameters of the forward pass.
        grad_wrt_u: cotangent on the output displacement.
        cache: the :class:`IntegrationCache` from ``integrate_velocity_cached``
            for this exact param; the squaring intermediates are required.

    Returns:
        Gradient with respect to the velocity field, same geometry.
    """
    if cache is None:
        raise ValueError("integrate_velocity_vjp requires the forward cache "
                         "(call integrate_velocity_cached first)")
    same = cache.param is param or (
        cache.param.n_steps == param.n_steps
        and np.array_equal(cache.param.velocity.vectors, param.velocity.vectors))
    if not same:
        raise ValueError("forward cache does not match the given velocity parameters")
    if len(cache.levels) != param.n_steps:
        raise ValueError(f"forward cache holds {len(cache.levels)} levels, "
                         f"expected {param.n_steps}")
    require_same_geometry(param.velocity.geometry, grad_wrt_u.geometry,
                          "integrate_velocity_vjp")

    g = grad_wrt_u.vectors.reshape(-1, 3).copy()
    for k in range(param.n_steps - 1, -1, -1):
        m = cache.maps[k]
        u_k = cache.levels[k]
        g_ch = g.T  # (3, P)
        scattered = m.scatter(g_ch)
        _, deriv = m.apply_with_point_grad(np.moveaxis(u_k, -1, 0))
        g = g + scattered.reshape(3, -1).T + np.einsum("cp,cpi->pi", g_ch, deriv)
    g /= float(2 ** param.n_steps)
    return VectorField(param.velocity.geometry, g.reshape(param.velocity.vectors.shape))


def compose(u_outer: VectorField, u_inner: VectorField,
            policy: BoundaryPolicy = BoundaryPolicy.CLAMP) -> VectorField:
    """Composition of displacements: result(x) = u_inner(x) + u_outer(x + u_inner(x))."""
    require_same_geometry(u_outer.geometry, u_inner.geometry, "compose")
    dims = u_outer.geometry.dims
    inner = u_inner.vectors
    pts = base_points(dims, inner.dtype) + inner.reshape(-1, 3)
    m = TrilinearMap(pts, dims, policy)
    sampled = m.apply(np.moveaxis(u_outer.vectors, -1, 0))
    return VectorField(u_outer.geometry, inner + np.moveaxis(sampled, 0, 1).reshape(inner.shape))
