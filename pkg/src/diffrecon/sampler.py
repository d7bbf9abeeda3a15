"""Reverse-diffusion reconstruction with interleaved data consistency.

One outer iteration (i = N-1 .. 0) runs, on a single running (x, coils)
state:

  1. predictor step on the center crop at level sigma_{i+1} -> sigma_i,
  2. pad back into a fresh forward-SDE background image,
  3. data-consistency gradient step on the full grid,
  4. M Langevin corrector steps on the crop,
  5. pad again into the same background,
  6. second data-consistency step,
  7. proximal-gradient coil update at strength mu_{i+1}.

The printed recurrence reuses stale iterates on some right-hand sides in a
way that cannot be executed literally; applying every line to the most
recent state is the single consistent reading and is what this module does.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .coils import coil_update, zf_coil_init
from .core import CoilSet, KSpaceData, RealImage, Rng, ValidationError
from .diffusion import ExpSchedule, ScoreFunction, SigmaSchedule, make_lambda_schedule
from .forward_model import grad_image, ifft2c

__all__ = [
    "NumericalError",
    "CropGeometry",
    "ReconConfig",
    "ReconState",
    "crop_center",
    "pad_into",
    "noisy_zf_image",
    "predictor_step",
    "corrector_step",
    "data_consistency_step",
    "sample_prior",
    "reconstruct",
]

logger = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    """A reconstruction iterate stopped being finite."""


@dataclass(frozen=True)
class CropGeometry:
    """Centered crop window inside the full reconstruction grid."""

    full_height: int
    full_width: int
    crop_height: int
    crop_width: int

    def __post_init__(self):
        if self.crop_height > self.full_height or self.crop_width > self.full_width:
            raise ValidationError("crop must fit inside the full grid")
        if min(self.full_height, self.full_width, self.crop_height, self.crop_width) < 1:
            raise ValidationError("all dimensions must be positive")

    @property
    def origin(self) -> tuple[int, int]:
        return ((self.full_height - self.crop_height) // 2,
                (self.full_width - self.crop_width) // 2)

    @property
    def is_full(self) -> bool:
        return (self.crop_height, self.crop_width) == (self.full_height, self.full_width)


def crop_center(x: np.ndarray, geom: CropGeometry) -> np.ndarray:
    """Extract the centered crop window (over the trailing two axes)."""
    if x.shape[-2:] != (geom.full_height, geom.full_width):
        raise ValidationError(f"expected full grid {geom.full_height}x{geom.full_width}, got {x.shape[-2:]}")
    r0, c0 = geom.origin
    return x[..., r0 : r0 + geom.crop_height, c0 : c0 + geom.crop_width]


def pad_into(crop: np.ndarray, background: np.ndarray, geom: CropGeometry) -> np.ndarray:
    """Write the crop into the center of a copy of the background image."""
    if crop.shape[-2:] != (geom.crop_height, geom.crop_width):
        raise ValidationError(f"expected crop {geom.crop_height}x{geom.crop_width}, got {crop.shape[-2:]}")
    if background.shape[-2:] != (geom.full_height, geom.full_width):
        raise ValidationError("background must be full-grid sized")
    out = np.array(background, copy=True)
    r0, c0 = geom.origin
    out[..., r0 : r0 + geom.crop_height, c0 : c0 + geom.crop_width] = crop
    return out


def zero_filled_rss(y: KSpaceData) -> np.ndarray:
    """RSS combination of the zero-filled coil images."""
    return np.sqrt(np.sum(np.abs(ifft2c(y.channels)) ** 2, axis=0))


def noisy_zf_image(y: KSpaceData, sigma: float, rng: Rng, squared: bool = False) -> np.ndarray:
    """Forward-SDE padding image: zero-filled RSS plus sigma * z.

    squared=True restores the literal sigma^2 scaling from the printed
    update; the default follows the forward-SDE marginal (std sigma).
    """
    scale = sigma**2 if squared else sigma
    return zero_filled_rss(y) + scale * rng.normal(y.shape)


def _sq_norm_trailing(a: np.ndarray) -> np.ndarray:
    return np.sum(a * a, axis=(-2, -1), keepdims=True)


def predictor_step(x: np.ndarray, sigma_next: float, sigma_cur: float,
                   score: ScoreFunction, rng: Rng) -> np.ndarray:
    """One reverse-SDE step from level sigma_next down to sigma_cur.

    x + (sigma_next^2 - sigma_cur^2) * score(x, sigma_next)
      + sqrt(sigma_next^2 - sigma_cur^2) * z
    """
    if sigma_next <= sigma_cur:
        raise ValidationError(f"predictor needs sigma_next > sigma_cur, got {sigma_next} <= {sigma_cur}")
    gap = sigma_next**2 - sigma_cur**2
    z = rng.normal(x.shape)
    return x + gap * score.evaluate(x, sigma_next) + np.sqrt(gap) * z


def corrector_step(x: np.ndarray, sigma: float, score: ScoreFunction,
                   snr: float, rng: Rng) -> np.ndarray:
    """One Langevin step with the adaptive step size eps = 2 r^2 |z|^2 / |s|^2.

    The same z enters the step size and the noise term. A zero-norm score
    would leave eps undefined; that case degenerates to a no-op and is
    logged.
    """
    z = rng.normal(x.shape)
    s = score.evaluate(x, sigma)
    s_norm = _sq_norm_trailing(s)
    eps = np.zeros_like(s_norm)
    ok = s_norm > 0
    np.divide(2.0 * snr**2 * _sq_norm_trailing(z), s_norm, out=eps, where=ok)
    if not np.all(ok):
        logger.warning("corrector: zero-norm score output, substituting eps = 0")
    return x + eps * s + np.sqrt(2.0 * eps) * z


def data_consistency_step(x: np.ndarray, coils: CoilSet, y: KSpaceData, lam: float) -> np.ndarray:
    """Explicit gradient step on the data term with step size lam in [0, 1]."""
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda = {lam} outside [0, 1]")
    if lam == 0.0:
        return x
    return x - lam * grad_image(RealImage(x), coils, y).data


@dataclass(frozen=True)
class ReconConfig:
    """All solver hyperparameters for one reconstruction."""

    n_steps: int = 1000
    corrector_steps: int = 1
    snr: float = 0.0075
    sigma_min: float = 0.01
    sigma_max: float = 378.0
    lambda_endpoints: tuple[float, float] = (0.56, 0.07)  # (at i=N, at i=1)
    mu_endpoints: tuple[float, float] = (1e-6, 25.0)
    crop: CropGeometry = field(default_factory=lambda: CropGeometry(128, 96, 64, 64))
    seed: int = 0
    update_coils: bool = True
    double_dc: bool = True            # run the DC step after the predictor too
    fsde_sigma_squared: bool = False  # literal sigma^2 scaling of the padding noise
    renormalize_coils: bool = False   # keep the coil iterate at unit RMS scale

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValidationError("n_steps must be >= 1")
        if self.corrector_steps < 0:
            raise ValidationError("corrector_steps must be >= 0")
        if self.snr < 0:
            raise ValidationError("snr must be nonnegative")

    def sigma_schedule(self) -> SigmaSchedule:
        return SigmaSchedule(self.sigma_min, self.sigma_max, self.n_steps)

    def lambda_schedule(self):
        return make_lambda_schedule(*self.lambda_endpoints, self.n_steps)

    def mu_schedule(self) -> ExpSchedule:
        return ExpSchedule(*self.mu_endpoints, self.n_steps)


@dataclass
class ReconState:
    """Running iterate exposed to per-iteration observers."""

    x: np.ndarray
    coils: CoilSet
    step: int
    rng: Rng


def _check_finite(x: np.ndarray, coils: CoilSet | None, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite image iterate at step {step}")
    if coils is not None and not np.all(np.isfinite(coils.stack)):
        raise NumericalError(f"non-finite coil iterate at step {step}")


def sample_prior(score: ScoreFunction, config: ReconConfig, rng: Rng,
                 batch: int | None = None, init_background: np.ndarray | float = 0.0) -> np.ndarray:
    """Unconditional predictor-corrector sampling on the crop grid.

    This is exactly the sampling loop of reconstruct with data consistency
    and coil updates switched off; reconstruct degenerates to it when
    lambda = 0, the crop covers the grid, and update_coils is False.
    """
    sigma = config.sigma_schedule()
    shape = (config.crop.crop_height, config.crop.crop_width)
    if batch is not None:
        shape = (batch,) + shape
    x = init_background + sigma.at_index(config.n_steps) * rng.normal(shape)
    for i in range(config.n_steps - 1, -1, -1):
        s_next, s_cur = sigma.at_index(i + 1), sigma.at_index(i)
        x = predictor_step(x, s_next, s_cur, score, rng)
        for _ in range(config.corrector_steps):
            x = corrector_step(x, s_next, score, config.snr, rng)
    return x


def reconstruct(y: KSpaceData, config: ReconConfig, score: ScoreFunction,
                observer=None) -> tuple[RealImage, CoilSet]:
    """Joint image and coil-map reconstruction from sub-sampled k-space.

    Deterministic given config.seed. ``observer``, if given, is called with
    the ReconState after every outer iteration.
    """
    geom = config.crop
    if y.shape != (geom.full_height, geom.full_width):
        raise ValidationError(f"k-space shape {y.shape} does not match grid "
                              f"{geom.full_height}x{geom.full_width}")
    rng = Rng(config.seed)
    sigma = config.sigma_schedule()
    lam_sched = config.lambda_schedule()
    mu_sched = config.mu_schedule()

    coils = zf_coil_init(y)
    x = noisy_zf_image(y, sigma.at_index(config.n_steps), rng, config.fsde_sigma_squared)
    _check_finite(x, coils, config.n_steps)

    for i in range(config.n_steps - 1, -1, -1):
        s_next, s_cur = sigma.at_index(i + 1), sigma.at_index(i)
        lam = lam_sched.at_index(i + 1)
        mu = mu_sched.at_index(i + 1)

        # padding is the identity when the crop covers the grid, so the
        # background draw is skipped (keeps pure-prior sampling stream-equal)
        background = None if geom.is_full else noisy_zf_image(
            y, s_next, rng, config.fsde_sigma_squared)

        xc = predictor_step(crop_center(x, geom), s_next, s_cur, score, rng)
        x = xc if geom.is_full else pad_into(xc, background, geom)
        _check_finite(x, None, i)
        if config.double_dc:
            x = data_consistency_step(x, coils, y, lam)

        xc = crop_center(x, geom)
        for _ in range(config.corrector_steps):
            xc = corrector_step(xc, s_next, score, config.snr, rng)
        x = xc if geom.is_full else pad_into(xc, background, geom)
        _check_finite(x, None, i)
        x = data_consistency_step(x, coils, y, lam)

        if config.update_coils:
            coils = coil_update(RealImage(x), coils, y, mu)
            if config.renormalize_coils:
                # forward, gradients and the residual metric are all scale
                # invariant in the maps; pinning the iterate to unit RMS keeps
                # one mu meaningful as both step size and smoothing strength
                # on grids far smaller than the scale the schedules were tuned
                # for
                coils = CoilSet(coils.stack / np.sqrt(np.mean(np.abs(coils.stack) ** 2)))

        _check_finite(x, coils, i)
        if observer is not None:
            observer(ReconState(x=x, coils=coils, step=i, rng=rng))

    return RealImage(x), coils
