"""Similarity, smoothness and incompressibility losses with analytic gradients.

The three terms operate on a displacement field u (and, for the total loss,
on the stationary velocity that generates it):

* similarity: per-channel mean squared error between the fixed sin/cos
  channels and the moving channels warped by u, summed over the six channels;
* smoothness: mean over voxels of the squared Frobenius norm of the spatial
  Jacobian of u;
* incompressibility: a magnitude-weighted penalty on the signed determinant
  of the warp Jacobian det(I + grad u), plus an unweighted term that pushes
  negative determinants back above zero.

Every loss divides by voxel count so that the default weights transfer
across volume sizes.  Gradients are exact transposes of the forward
computations; at the isolated kink points of the determinant penalty
(det = epsilon, det = 0, and det = 1 for the absolute-log and L1 variants)
the subgradient 0 is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deform import VelocityParam, integrate_velocity_cached, integrate_velocity_vjp
from .grid import (
    BoundaryPolicy,
    ScalarVolume,
    TrilinearMap,
    VectorField,
    axis_gradient_adjoint,
    base_points,
    cofactors3,
    det3,
    displacement_jacobian,
    require_same_geometry,
)
from .harp import SinCosTrio

__all__ = [
    "DET_PENALTIES",
    "LossWeights",
    "LossBreakdown",
    "sim_loss",
    "smooth_loss",
    "incompress_loss",
    "total_loss",
]

DET_PENALTIES = ("log", "l1", "l2")


@dataclass(frozen=True)
class LossWeights:
    """Weights and constants of the combined registration objective.

    Attributes:
        lambda_smooth: weight of the smoothness term (>= 0).
        beta_incompress: weight of the incompressibility term (>= 0).
        epsilon: floor applied to the determinant inside the log penalty.
        det_penalty: "log" (absolute log, the default), or the "l1"/"l2"
            deviation-from-one variants for ablation runs.
    """

    lambda_smooth: float = 0.01
    beta_incompress: float = 0.4
    epsilon: float = 1e-5
    det_penalty: str = "log"

    def __post_init__(self) -> None:
        if self.lambda_smooth < 0:
            raise ValueError(f"lambda_smooth must be >= 0, got {self.lambda_smooth}")
        if self.beta_incompress < 0:
            raise ValueError(f"beta_incompress must be >= 0, got {self.beta_incompress}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.det_penalty not in DET_PENALTIES:
            raise ValueError(
                f"det_penalty must be one of {DET_PENALTIES}, got {self.det_penalty!r}")


@dataclass(frozen=True)
class LossBreakdown:
    """One evaluation of the objective, split into its three terms."""

    sim: float
    smooth: float
    incompress: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"sim": self.sim, "smooth": self.smooth,
                "incompress": self.incompress, "total": self.total}


def sim_loss(fixed: SinCosTrio, moving: SinCosTrio,
             disp: VectorField) -> tuple[float, VectorField]:
    """Warped sin/cos mean-squared error and its gradient w.r.t. ``disp``.

    The moving channels are pulled back through ``x + u(x)`` with clamped
    trilinear sampling; the loss is the per-channel MSE summed over the six
    channels.  The gradient at voxel x is the channel-summed residual times
    the exact spatial derivative of the interpolated moving channel at the
    sample point.
    """
    require_same_geometry(fixed.geometry, moving.geometry, "sim_loss")
    require_same_geometry(fixed.geometry, disp.geometry, "sim_loss")
    dims = disp.geometry.dims
    n_vox = disp.geometry.n_voxels
    u = disp.vectors
    pts = base_points(dims, u.dtype) + u.reshape(-1, 3)
    warp = TrilinearMap(pts, dims, BoundaryPolicy.CLAMP)

    fixed_stack = fixed.stacked()
    moving_stack = moving.stacked()
    warped, deriv = warp.apply_with_point_grad(moving_stack)
    residual = warped - fixed_stack.reshape(fixed_stack.shape[0], -1)
    loss = float(np.sum(residual * residual)) / n_vox
    grad = (2.0 / n_vox) * np.einsum("cp,cpi->pi", residual, deriv)
    return loss, VectorField(disp.geometry, grad.reshape(u.shape))


def smooth_loss(disp: VectorField) -> tuple[float, VectorField]:
    """Mean squared Frobenius norm of the displacement Jacobian, and gradient.

    The gradient applies the exact transpose of each difference stencil to
    the corresponding Jacobian entry.
    """
    J = displacement_jacobian(disp)
    n_vox = disp.geometry.n_voxels
    loss = float(np.sum(J * J)) / n_vox
    grad = np.zeros_like(disp.vectors)
    for c in range(3):
        for i in range(3):
            grad[..., c] += axis_gradient_adjoint(J[..., c, i], i)
    grad *= 2.0 / n_vox
    return loss, VectorField(disp.geometry, grad)


def incompress_loss(disp: VectorField, i_mag: ScalarVolume, epsilon: float = 1e-5,
                    det_penalty: str = "log") -> tuple[float, VectorField]:
    """Determinant penalty of the warp ``x + u(x)`` and gradient w.r.t. u.

    With d(x) the signed determinant of I + grad u and w(x) the magnitude
    weight in [0, 1], the default penalty is

        mean_x  w(x) * |log(max(d(x), epsilon))|  +  mean_x  -min(d(x), 0)

    which is zero exactly when d = 1 wherever w > 0 and d >= 0 everywhere,
    penalizes expansion and contraction symmetrically, and keeps a slope on
    negative determinants through the second (unweighted) term.  The "l1"
    and "l2" variants replace the weighted term with w*|d - 1| and
    w*(d - 1)^2.  The gradient chains the cofactor derivative of the
    determinant through the transpose of the difference stencils; at the
    kinks (d = epsilon, d = 0, d = 1 for the non-smooth variants) the
    subgradient 0 is used.
    """
    require_same_geometry(disp.geometry, i_mag.geometry, "incompress_loss")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if det_penalty not in DET_PENALTIES:
        raise ValueError(f"det_penalty must be one of {DET_PENALTIES}, got {det_penalty!r}")
    w = i_mag.values
    if np.min(w) < 0.0 or np.max(w) > 1.0:
        raise ValueError("magnitude weights must lie in [0, 1]")

    J = displacement_jacobian(disp)
    G = J.copy()
    for c in range(3):
        G[..., c, c] += 1.0
    d = det3(G)
    n_vox = disp.geometry.n_voxels

    if det_penalty == "log":
        floored = np.maximum(d, epsilon)
        log_det = np.log(floored)
        term1 = float(np.sum(w * np.abs(log_det)))
        # d <= epsilon freezes the floor (zero slope); sign(0) = 0 covers d = 1.
        s1 = w * np.sign(log_det) / floored * (d > epsilon)
    elif det_penalty == "l1":
        term1 = float(np.sum(w * np.abs(d - 1.0)))
        s1 = w * np.sign(d - 1.0)
    else:
        term1 = float(np.sum(w * (d - 1.0) ** 2))
        s1 = 2.0 * w * (d - 1.0)
    term2 = float(-np.sum(np.minimum(d, 0.0)))
    s2 = -(d < 0.0).astype(d.dtype)

    loss = (term1 + term2) / n_vox
    sens = (s1 + s2) / n_vox
    cof = cofactors3(G)
    grad = np.zeros_like(disp.vectors)
    for c in range(3):
        for i in range(3):
            grad[..., c] += axis_gradient_adjoint(sens * cof[..., c, i], i)
    return loss, VectorField(disp.geometry, grad)


def total_loss(fixed: SinCosTrio, moving: SinCosTrio, i_mag: ScalarVolume,
               param: VelocityParam,
               weights: LossWeights) -> tuple[LossBreakdown, VectorField]:
    """Combined objective on a velocity field, with gradient w.r.t. velocity.

    Integrates the velocity to a displacement, evaluates the three terms on
    it, and pulls the weighted displacement gradient back through the
    squaring steps of the integrator.
    """
    cache = integrate_velocity_cached(param)
    disp = cache.displacement
    sim, g_sim = sim_loss(fixed, moving, disp)
    smooth, g_smooth = smooth_loss(disp)
    incompress, g_incompress = incompress_loss(
        disp, i_mag, weights.epsilon, weights.det_penalty)
    total = sim + weights.lambda_smooth * smooth + weights.beta_incompress * incompress
    g_disp = (g_sim.vectors
              + weights.lambda_smooth * g_smooth.vectors
              + weights.beta_incompress * g_incompress.vectors)
    grad_v = integrate_velocity_vjp(
        param, VectorField(disp.geometry, g_disp), cache)
    return LossBreakdown(sim=sim, smooth=smooth, incompress=incompress,
                         total=total), grad_v
