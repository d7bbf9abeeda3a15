"""Smoothness prior on coil sensitivity maps.

The quadratic gradient penalty B(c) = 1/2 (||D Re c||^2 + ||D Im c||^2) with
the forward-difference gradient D has the proximal map
(I + L/mu)^{-1} where L = D^T D. That Laplacian is diagonalized by the
orthonormal type-II cosine transform with per-axis eigenvalues
xi_i = 2 - 2 cos(pi i / n), i = 0..n-1, so the prox reduces to a spectral
multiplier mu / (xi_i + xi_j + mu). Note the direction of mu under this
parameterization: mu -> 0 smooths hard (multiplier -> 0 off the constant
mode) and mu -> inf is the identity; the shipped schedules run mu from 1e-6
up to 25 over the reverse diffusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .core import CoilSet, KSpaceData, RealImage, ValidationError
from .forward_model import RSS_FLOOR, grad_coils, ifft2c

__all__ = [
    "SmoothingPlan",
    "laplace_eigenvalues",
    "dct2",
    "idct2",
    "spectral_smooth",
    "smooth_coils",
    "zf_coil_init",
    "coil_update",
]


def laplace_eigenvalues(n: int) -> np.ndarray:
    """Eigenvalues 2 - 2cos(pi i / n), i = 0..n-1, of the 1-D forward-difference
    Laplacian; xi_0 = 0 (the constant mode passes through unsmoothed)."""
    return 2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class SmoothingPlan:
    """Precomputed 2-D eigenvalue grid for a fixed image size."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValidationError("SmoothingPlan needs positive dimensions")

    @property
    def eig_rows(self) -> np.ndarray:
        return laplace_eigenvalues(self.height)

    @property
    def eig_cols(self) -> np.ndarray:
        return laplace_eigenvalues(self.width)

    @property
    def eig2d(self) -> np.ndarray:
        return self.eig_rows[:, None] + self.eig_cols[None, :]


def dct2(u: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D type-II cosine transform over the last two axes."""
    return scipy.fft.dctn(u, type=2, norm="ortho", axes=(-2, -1))


def idct2(u: np.ndarray) -> np.ndarray:
    """Inverse of dct2."""
    return scipy.fft.idctn(u, type=2, norm="ortho", axes=(-2, -1))


def spectral_smooth(u: np.ndarray, mu: float) -> np.ndarray:
    """Apply the multiplier mu / (xi_i + xi_j + mu) in the transform domain.

    Linear, self-adjoint, spectrum in (0, 1]; equals the direct solution of
    (I + (1/mu) L) v = u for the forward-difference Laplacian L.
    """
    if mu <= 0:
        raise ValidationError("mu must be positive")
    plan = SmoothingPlan(u.shape[-2], u.shape[-1])
    return idct2(dct2(u) * (mu / (plan.eig2d + mu)))


def smooth_coils(coils: CoilSet, mu: float) -> CoilSet:
    """Smooth real and imaginary parts of every coil independently."""
    real = spectral_smooth(coils.stack.real, mu)
    imag = spectral_smooth(coils.stack.imag, mu)
    return CoilSet(real + 1j * imag)


def zf_coil_init(y: KSpaceData) -> CoilSet:
    """Initial maps from the zero-filled coil images.

    Each zero-filled coil image is divided by their floored RSS, then the
    whole set is divided once by its squared 2-norm (the global
    normalization of the sampler's init step).
    """
    if not np.any(y.channels):
        raise ValidationError("cannot initialize coils from all-zero k-space")
    zf = ifft2c(y.channels)
    rho = np.maximum(np.sqrt(np.sum(np.abs(zf) ** 2, axis=0)), RSS_FLOOR)
    stack = zf / rho
    stack = stack / np.sum(np.abs(stack) ** 2)
    return CoilSet(stack)


def coil_update(x: RealImage, coils: CoilSet, y: KSpaceData, mu: float) -> CoilSet:
    """One proximal-gradient step on the coil maps at strength mu."""
    if mu <= 0:
        raise ValidationError("mu must be positive")
    stepped = coils.stack - mu * grad_coils(x, coils, y).stack
    return smooth_coils(CoilSet(stepped), mu)
