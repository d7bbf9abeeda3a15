"""Noise schedules and score functions for the variance-exploding diffusion.

A score function maps (x, sigma) to an estimate of the gradient of the log
perturbed data density at noise level sigma. Two analytic scores are
provided for exact verification (a Gaussian and a Gaussian mixture, whose
perturbed densities are known in closed form); the trained network lives in
scorenet.py.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .core import ValidationError

__all__ = [
    "SigmaSchedule",
    "ExpSchedule",
    "make_lambda_schedule",
    "ScoreFunction",
    "GaussianScore",
    "GaussianMixtureScore",
    "score_validation_metric",
]


@dataclass(frozen=True)
class SigmaSchedule:
    """Geometric noise schedule sigma(t) = sigma_min * (sigma_max/sigma_min)^t."""

    sigma_min: float
    sigma_max: float
    n_steps: int

    def __post_init__(self):
        if self.sigma_min <= 0 or self.sigma_max <= self.sigma_min:
            raise ValidationError("need 0 < sigma_min < sigma_max")
        if self.n_steps < 1:
            raise ValidationError("need at least one step")

    def at_time(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise ValidationError(f"t = {t} outside [0, 1]")
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** t

    def at_index(self, i: int) -> float:
        """sigma_i for i = 0..N on the equispaced time grid t = i/N."""
        if not 0 <= i <= self.n_steps:
            raise ValidationError(f"index {i} outside 0..{self.n_steps}")
        return self.at_time(i / self.n_steps)


@dataclass(frozen=True)
class ExpSchedule:
    """Log-linear schedule: value_N at the first reverse step, value_1 at the last.

    Values are e^{zeta_i} with zeta equispaced between log(value_N) and
    log(value_1); both endpoints are hit exactly.
    """

    value_at_n: float
    value_at_1: float
    n_steps: int

    def __post_init__(self):
        if self.value_at_n <= 0 or self.value_at_1 <= 0:
            raise ValidationError("ExpSchedule endpoints must be positive")
        if self.n_steps < 1:
            raise ValidationError("need at least one step")

    def at_index(self, i: int) -> float:
        if not 1 <= i <= self.n_steps:
            raise ValidationError(f"index {i} outside 1..{self.n_steps}")
        if self.n_steps == 1:
            return self.value_at_1
        if i == 1:
            return self.value_at_1
        if i == self.n_steps:
            return self.value_at_n
        frac = (i - 1) / (self.n_steps - 1)
        return float(np.exp(np.log(self.value_at_1) + frac * (np.log(self.value_at_n) - np.log(self.value_at_1))))


class _ZeroSchedule:
    """Constant-zero stand-in used to disable data consistency entirely."""

    def at_index(self, i: int) -> float:
        return 0.0


def make_lambda_schedule(value_at_n: float, value_at_1: float, n_steps: int):
    """Exponential schedule for the data-consistency step size.

    The endpoint pair (0, 0) is allowed and yields the constant-zero
    schedule (pure-prior sampling); any other zero endpoint is an error.
    """
    if value_at_n == 0.0 and value_at_1 == 0.0:
        return _ZeroSchedule()
    if not (0.0 <= value_at_1 <= 1.0 and 0.0 <= value_at_n <= 1.0):
        raise ValidationError("lambda endpoints must lie in [0, 1]")
    return ExpSchedule(value_at_n, value_at_1, n_steps)


class ScoreFunction(Protocol):
    def evaluate(self, x: np.ndarray, sigma: float) -> np.ndarray:
        """Estimate grad log p_{X_t} at noise level sigma.

        Operates on the trailing two (crop-sized) axes; leading batch axes
        broadcast through.
        """
        ...


@dataclass(frozen=True)
class GaussianScore:
    """Exact score of N(mean, diag(var)) under VE perturbation.

    p_t = N(mean, var + sigma^2), so score(x, sigma) = -(x - mean)/(var + sigma^2).
    """

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.broadcast_to(np.asarray(self.var, dtype=np.float64), mean.shape).copy()
        if np.any(var <= 0):
            raise ValidationError("variance must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    def evaluate(self, x: np.ndarray, sigma: float) -> np.ndarray:
        return -(x - self.mean) / (self.var + sigma**2)


@dataclass(frozen=True)
class GaussianMixtureScore:
    """Exact score of a K-component isotropic-per-pixel Gaussian mixture.

    Components share the scalar pixel variance, so under VE perturbation
    p_t(x) = sum_k w_k N(x; m_k, (var + sigma^2) I) and the score is the
    responsibility-weighted sum of per-component Gaussian scores.
    """

    means: np.ndarray  # (K, h, w)
    var: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 3 or means.shape[0] < 1:
            raise ValidationError("means must be a (K, h, w) stack")
        if self.var <= 0:
            raise ValidationError("variance must be positive")
        k = means.shape[0]
        w = np.full(k, 1.0 / k) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if w.shape != (k,) or np.any(w <= 0):
            raise ValidationError("weights must be positive, one per component")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", w / w.sum())

    def evaluate(self, x: np.ndarray, sigma: float) -> np.ndarray:
        s2 = self.var + sigma**2
        x_b = x[..., None, :, :]                      # (..., 1, h, w)
        diff = x_b - self.means                       # (..., K, h, w)
        logits = -0.5 * np.sum(diff**2, axis=(-2, -1)) / s2 + np.log(self.weights)
        logits -= logits.max(axis=-1, keepdims=True)  # stable softmax
        resp = np.exp(logits)
        resp /= resp.sum(axis=-1, keepdims=True)
        return -np.sum(resp[..., None, None] * diff, axis=-3) / s2


def score_validation_metric(score: ScoreFunction, images: np.ndarray, sigmas, rng) -> float:
    """Mean weighted denoising residual E ||sigma^2 score(x + sigma z) + sigma z|| / n.

    Small values mean the score matches the optimal denoiser on the given
    images (a quality metric for trained networks, not a hard invariant).
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    total = 0.0
    count = 0
    for x0 in images:
        for sigma in np.atleast_1d(sigmas):
            z = rng.normal(x0.shape)
            val = sigma**2 * score.evaluate(x0 + sigma * z, float(sigma)) + sigma * z
            total += float(np.linalg.norm(val)) / x0.size
            count += 1
    return total / count
