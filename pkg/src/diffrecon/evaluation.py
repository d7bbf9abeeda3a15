"""Quantitative evaluation and the classical reconstruction baselines.

PSNR follows the crop-referenced definition 10 log10(n |gt|_inf^2 / |err|^2)
with n the number of crop pixels. Coil-map quality is measured by the RSS
null-space residual: the component of the fully sampled coil images
orthogonal, pixel by pixel, to the span of the RSS-normalized estimated
maps. A perfect fit leaves exactly zero residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .coils import coil_update
from .core import CoilSet, KSpaceData, RealImage, ValidationError
from .forward_model import RSS_FLOOR, grad_image, ifft2c
from .diffusion import ExpSchedule
from .sampler import zero_filled_rss

__all__ = [
    "psnr",
    "nullspace_residual",
    "IntensityMap",
    "fit_intensity_map",
    "apply_intensity_map",
    "zf_reconstruct",
    "TvParams",
    "tv_value",
    "tv_grad",
    "tv_reconstruct",
]


def psnr(recon: RealImage, reference: RealImage) -> float:
    """Crop PSNR in dB; +inf when the images agree exactly."""
    if recon.shape != reference.shape:
        raise ValidationError("psnr needs equal shapes")
    peak = float(np.abs(reference.data).max())
    if peak == 0.0:
        raise ValidationError("reference image is identically zero")
    err = float(np.sum((recon.data - reference.data) ** 2))
    if err == 0.0:
        return float("inf")
    n = reference.data.size
    return float(10.0 * np.log10(n * peak**2 / err))


def nullspace_residual(y_full: KSpaceData, coils: CoilSet) -> tuple[RealImage, float]:
    """Residual of the fully sampled coil images off the span of the maps.

    z_j = F^{-1}(y_j), c_hat = c / rss(c); the pointwise rank-1 projection
    p = sum conj(c_hat_j) z_j is removed from every channel and the RSS of
    what remains is returned together with its 2-norm.
    """
    if not y_full.mask.select.all():
        raise ValidationError("null-space residual needs fully sampled data")
    z = ifft2c(y_full.channels)
    rho = np.maximum(np.sqrt(np.sum(np.abs(coils.stack) ** 2, axis=0)), RSS_FLOOR)
    c_hat = coils.stack / rho
    p = np.sum(np.conj(c_hat) * z, axis=0)
    resid = z - c_hat * p
    img = np.sqrt(np.sum(np.abs(resid) ** 2, axis=0))
    return RealImage(img), float(np.linalg.norm(img))


@dataclass(frozen=True)
class IntensityMap:
    """Monotone piecewise-linear intensity correction."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise ValidationError("need matching 1-D knot/value arrays of length >= 2")
        if np.any(np.diff(knots) <= 0):
            raise ValidationError("knots must be strictly increasing")
        if np.any(np.diff(values) < -1e-12):
            raise ValidationError("values must be nondecreasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)


def fit_intensity_map(recon_vals, ref_vals, num_knots: int = 10) -> IntensityMap:
    """Least-squares monotone fit on the (reconstruction, reference) scatter.

    Knots are equispaced over the observed reconstruction range; the values
    are parameterized as a base level plus nonnegative increments and solved
    as a bounded linear least-squares problem.
    """
    recon_vals = np.asarray(recon_vals, dtype=np.float64).ravel()
    ref_vals = np.asarray(ref_vals, dtype=np.float64).ravel()
    if recon_vals.size != ref_vals.size or recon_vals.size < 2:
        raise ValidationError("need at least two (recon, reference) pairs")
    lo, hi = float(recon_vals.min()), float(recon_vals.max())
    if hi <= lo:
        raise ValidationError("degenerate fit: all reconstruction values equal")
    knots = np.linspace(lo, hi, num_knots)

    # hat-function design matrix, then k = C theta with theta[1:] >= 0
    t = np.clip((recon_vals - lo) / (hi - lo) * (num_knots - 1), 0, num_knots - 1)
    idx = np.minimum(t.astype(int), num_knots - 2)
    frac = t - idx
    design = np.zeros((recon_vals.size, num_knots))
    rows = np.arange(recon_vals.size)
    design[rows, idx] = 1.0 - frac
    design[rows, idx + 1] = frac
    cumulative = np.tril(np.ones((num_knots, num_knots)))
    lb = np.full(num_knots, 0.0)
    lb[0] = -np.inf
    result = scipy.optimize.lsq_linear(design @ cumulative, ref_vals,
                                       bounds=(lb, np.full(num_knots, np.inf)))
    values = cumulative @ result.x
    values = np.maximum.accumulate(values)  # clean up 1e-16 wobble
    return IntensityMap(knots, values)


def apply_intensity_map(mapping: IntensityMap, img: RealImage) -> RealImage:
    """Pointwise interpolation, clamped at both ends."""
    out = np.interp(img.data, mapping.knots, mapping.values)
    return RealImage(out)


def zf_reconstruct(y: KSpaceData) -> RealImage:
    """Zero-filled baseline: RSS of the zero-filled coil images."""
    return RealImage(zero_filled_rss(y))


@dataclass(frozen=True)
class TvParams:
    """Settings for the joint Charbonnier-TV baseline."""

    weight: float = 2e-3
    epsilon: float = 1e-3
    outer_iters: int = 60
    image_steps_per_iter: int = 3
    image_step: float = 0.5
    mu_endpoints: tuple[float, float] = (3.0, 3.0)
    update_coils: bool = True

    def __post_init__(self):
        if min(self.weight, self.epsilon, self.image_step) < 0 or self.epsilon == 0:
            raise ValidationError("TV parameters must be positive")
        if self.outer_iters < 1 or self.image_steps_per_iter < 1:
            raise ValidationError("need at least one iteration")


def _forward_diff(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dy = np.zeros_like(x)
    dx = np.zeros_like(x)
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    return dy, dx


def tv_value(x: np.ndarray, epsilon: float) -> float:
    """Charbonnier-smoothed total variation sum_p sqrt(|grad x|_p^2 + eps^2)."""
    dy, dx = _forward_diff(x)
    return float(np.sum(np.sqrt(dy**2 + dx**2 + epsilon**2)))


def tv_grad(x: np.ndarray, epsilon: float) -> np.ndarray:
    """Gradient of tv_value (negative divergence of the normalized gradient)."""
    dy, dx = _forward_diff(x)
    denom = np.sqrt(dy**2 + dx**2 + epsilon**2)
    py, px = dy / denom, dx / denom
    grad = np.zeros_like(x)
    grad[:-1, :] -= py[:-1, :]
    grad[1:, :] += py[:-1, :]
    grad[:, :-1] -= px[:, :-1]
    grad[:, 1:] += px[:, :-1]
    return grad


def _unit_rms_coils(coils: CoilSet) -> CoilSet:
    # the forward model is scale invariant in the maps, so pinning the coil
    # iterate to unit RMS is a pure reparameterization; it keeps the shared
    # mu meaningful as both gradient step and smoothing strength on any grid
    scale = np.sqrt(np.mean(np.abs(coils.stack) ** 2))
    return CoilSet(coils.stack / scale)


def tv_reconstruct(y: KSpaceData, params: TvParams) -> tuple[RealImage, CoilSet]:
    """Alternating baseline: TV-regularized image steps and smoothed coil steps."""
    from .coils import smooth_coils, zf_coil_init

    mu_sched = ExpSchedule(*params.mu_endpoints, params.outer_iters)
    coils = _unit_rms_coils(zf_coil_init(y))
    if params.update_coils:
        # pre-smoothing keeps the first coil update from jumping the objective
        coils = smooth_coils(coils, mu_sched.at_index(params.outer_iters))
    x = zero_filled_rss(y)
    for it in range(params.outer_iters, 0, -1):
        for _ in range(params.image_steps_per_iter):
            g = grad_image(RealImage(x), coils, y).data + params.weight * tv_grad(x, params.epsilon)
            x = x - params.image_step * g
        if params.update_coils:
            coils = _unit_rms_coils(coil_update(RealImage(x), coils, y, mu_sched.at_index(it)))
    return RealImage(x), coils
