"""Per-pair registration: Adam optimization of a stationary velocity field.

Each fixed/moving pair is registered independently by minimizing the
combined objective directly over the velocity voxels, starting from zero.
The returned iterate is the best one seen (lowest total loss), which guards
against late oscillation at a fixed learning rate.  An optional
coarse-to-fine mode spends half the iteration budget on a 2x-downsampled
grid and uses the upsampled result to initialize the fine-level half.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .deform import VelocityParam, integrate_velocity
from .grid import (
    BoundaryPolicy,
    Geometry,
    ScalarVolume,
    TrilinearMap,
    VectorField,
    base_points,
    require_same_geometry,
)
from .harp import SinCosTrio
from .objective import LossBreakdown, LossWeights, total_loss

logger = logging.getLogger(__name__)

__all__ = [
    "AdamHyper",
    "AdamState",
    "adam_step",
    "RegistrationConfig",
    "RegistrationResult",
    "register_pair",
    "STOP_WINDOW",
]

# The plateau test compares the current total loss against the value this
# many iterations earlier.
STOP_WINDOW = 20


@dataclass(frozen=True)
class AdamHyper:
    """Adam step-size constants."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              hyper: AdamHyper) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, "
                         f"state {state.m.shape}")
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grads
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grads * grads
    m_hat = m / (1.0 - hyper.beta1 ** t)
    v_hat = v / (1.0 - hyper.beta2 ** t)
    new_params = params - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return new_params, AdamState(m, v, t)


@dataclass(frozen=True)
class RegistrationConfig:
    """Knobs of the per-pair optimization loop.

    ``learning_rate`` is calibrated for zero-initialized direct optimization
    of the velocity voxels, where Adam's normalized steps move each voxel by
    roughly the learning rate per iteration: recovering motions of a couple
    of voxels within a few hundred iterations needs steps of that order.
    ``stop_tol`` stops early when the relative total-loss decrease over the
    trailing window falls below the threshold; 0 disables it.
    """

    weights: LossWeights = field(default_factory=LossWeights)
    n_steps: int = 7
    learning_rate: float = 0.05
    max_iters: int = 300
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init: str = "zero"
    coarse_to_fine: bool = False
    stop_tol: float = 1e-6

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.init != "zero":
            raise ValueError(f"init must be 'zero', got {self.init!r}")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.stop_tol < 0:
            raise ValueError(f"stop_tol must be >= 0, got {self.stop_tol}")


@dataclass(frozen=True)
class RegistrationResult:
    """Optimized velocity, its displacement, and the optimization trace."""

    velocity: VectorField
    displacement: VectorField
    loss_history: list[LossBreakdown]
    iterations_run: int
    wall_time_seconds: float


def _check_finite(breakdown: LossBreakdown, iteration: int) -> None:
    for name, value in breakdown.as_dict().items():
        if not np.isfinite(value):
            raise ValueError(f"non-finite {name} loss at iteration {iteration}")


def _optimize(fixed: SinCosTrio, moving: SinCosTrio, i_mag: ScalarVolume,
              config: RegistrationConfig, max_iters: int,
              v0: np.ndarray) -> tuple[np.ndarray, list[LossBreakdown], int]:
    geometry = fixed.geometry
    velocity = v0.copy()
    hyper = AdamHyper(config.learning_rate, config.adam_beta1,
                      config.adam_beta2, config.adam_eps)
    state = AdamState.zeros_like(velocity)
    history: list[LossBreakdown] = []
    best_total = np.inf
    best_velocity = velocity.copy()
    iterations = 0
    for iteration in range(max_iters):
        param = VelocityParam(VectorField(geometry, velocity), config.n_steps)
        breakdown, grad = total_loss(fixed, moving, i_mag, param, config.weights)
        _check_finite(breakdown, iteration)
        history.append(breakdown)
        iterations = iteration + 1
        if breakdown.total < best_total:
            best_total = breakdown.total
            best_velocity = velocity.copy()
        if config.stop_tol > 0 and len(history) > STOP_WINDOW:
            reference = history[-1 - STOP_WINDOW].total
            decrease = reference - breakdown.total
            if decrease < config.stop_tol * max(abs(reference), 1e-30):
                logger.debug("plateau stop at iteration %d (decrease %.3g)",
                             iteration, decrease)
                break
        velocity, state = adam_step(velocity, grad.vectors, state, hyper)
    return best_velocity, history, iterations


def _downsample_geometry(geometry: Geometry) -> Geometry:
    dims = tuple((n + 1) // 2 for n in geometry.dims)
    spacing = tuple(2.0 * s for s in geometry.spacing)
    return Geometry(dims, spacing)


def _downsample_volume(vol: ScalarVolume, coarse: Geometry) -> ScalarVolume:
    return ScalarVolume(coarse, vol.values[::2, ::2, ::2].copy())


def _downsample_trio(trio: SinCosTrio, coarse: Geometry) -> SinCosTrio:
    sin = {k: _downsample_volume(v, coarse) for k, v in trio.sin.items()}
    cos = {k: _downsample_volume(v, coarse) for k, v in trio.cos.items()}
    return SinCosTrio(coarse, sin, cos)


def _upsample_velocity(coarse_velocity: np.ndarray, coarse: Geometry,
                       fine: Geometry) -> np.ndarray:
    """Trilinear upsampling of a stride-2 coarse field, values doubled.

    Coarse voxel i sits at fine coordinate 2i, so fine point x reads the
    coarse field at x / 2; the factor 2 converts coarse-voxel displacement
    units to fine-voxel units.
    """
    pts = base_points(fine.dims) * 0.5
    sampler = TrilinearMap(pts, coarse.dims, BoundaryPolicy.CLAMP)
    comps = [sampler.apply(coarse_velocity[..., c]) for c in range(3)]
    return 2.0 * np.stack(comps, axis=1).reshape(fine.dims + (3,))


def register_pair(fixed: SinCosTrio, moving: SinCosTrio, i_mag: ScalarVolume,
                  config: RegistrationConfig | None = None) -> RegistrationResult:
    """Estimate the velocity whose flow warps ``moving`` onto ``fixed``.

    Runs Adam from a zero velocity, tracks the best (lowest total loss)
    iterate, and stops early once the loss plateaus.  With
    ``coarse_to_fine`` the iteration budget is split between a stride-2
    downsampled level and the full grid; the returned loss history covers
    the fine level only.
    """
    config = config or RegistrationConfig()
    require_same_geometry(fixed.geometry, moving.geometry, "register_pair")
    require_same_geometry(fixed.geometry, i_mag.geometry, "register_pair")
    geometry = fixed.geometry
    start = time.perf_counter()

    v0 = np.zeros(geometry.dims + (3,))
    fine_iters = config.max_iters
    if config.coarse_to_fine:
        if min(geometry.dims) < 5:
            raise ValueError(f"coarse_to_fine requires dims >= 5, got {geometry.dims}")
        coarse = _downsample_geometry(geometry)
        coarse_iters = config.max_iters // 2
        fine_iters = config.max_iters - coarse_iters
        if coarse_iters >= 1:
            coarse_v, coarse_history, _ = _optimize(
                _downsample_trio(fixed, coarse), _downsample_trio(moving, coarse),
                _downsample_volume(i_mag, coarse), config, coarse_iters,
                np.zeros(coarse.dims + (3,)))
            v0 = _upsample_velocity(coarse_v, coarse, geometry)
            logger.debug("coarse level done: %d iterations, total %.6g",
                         len(coarse_history), coarse_history[-1].total)

    best_velocity, history, iterations = _optimize(
        fixed, moving, i_mag, config, fine_iters, v0)

    velocity = VectorField(geometry, best_velocity)
    displacement = integrate_velocity(VelocityParam(velocity, config.n_steps))
    wall = time.perf_counter() - start
    logger.info("registered pair in %d iterations (%.2f s), best total %.6g",
                iterations, wall, min(h.total for h in history))
    return RegistrationResult(velocity=velocity, displacement=displacement,
                              loss_history=history, iterations_run=iterations,
                              wall_time_seconds=wall)
