"""Multi-coil acquisition operator, its adjoint, and the least-squares data term.

The acquisition of coil j is k_j = M F(c_j * x / rss(c)) with a unitary
centered 2-D DFT and a binary sampling mask M. Division by the
root-sum-of-squares map is floored at RSS_FLOOR everywhere, which keeps the
operator and both gradients finite and differentiable on all of input space.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

from .core import CoilSet, KSpaceData, RealImage, SamplingMask, ValidationError

__all__ = [
    "RSS_FLOOR",
    "fft2c",
    "ifft2c",
    "rss",
    "fourier_sub",
    "forward",
    "adjoint_lin",
    "data_fidelity",
    "grad_image",
    "grad_coils",
]

# Floor applied to the RSS map before any division.
RSS_FLOOR = 1e-6


def fft2c(u: np.ndarray) -> np.ndarray:
    """Unitary centered 2-D DFT over the last two axes (DC at (H//2, W//2))."""
    shifted = scipy.fft.ifftshift(u, axes=(-2, -1))
    k = scipy.fft.fft2(shifted, axes=(-2, -1), norm="ortho")
    return scipy.fft.fftshift(k, axes=(-2, -1))


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Inverse of fft2c."""
    shifted = scipy.fft.ifftshift(k, axes=(-2, -1))
    u = scipy.fft.ifft2(shifted, axes=(-2, -1), norm="ortho")
    return scipy.fft.fftshift(u, axes=(-2, -1))


def _floored_rss(stack: np.ndarray) -> np.ndarray:
    return np.maximum(np.sqrt(np.sum(np.abs(stack) ** 2, axis=0)), RSS_FLOOR)


def rss(coils: CoilSet) -> RealImage:
    """Pointwise root sum of squares of the coil moduli (no floor)."""
    return RealImage(np.sqrt(np.sum(np.abs(coils.stack) ** 2, axis=0)))


def fourier_sub(u: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Masked unitary DFT: mask-off entries of the result are exactly zero."""
    if u.shape[-2:] != mask.shape:
        raise ValidationError(f"image shape {u.shape[-2:]} does not match mask {mask.shape}")
    return np.where(mask.select, fft2c(u), 0.0)


def _forward_stack(x: np.ndarray, stack: np.ndarray, mask: SamplingMask) -> np.ndarray:
    rho = _floored_rss(stack)
    return np.where(mask.select, fft2c(stack * (x / rho)), 0.0)


def forward(x: RealImage, coils: CoilSet, mask: SamplingMask) -> KSpaceData:
    """Acquisition operator: channel j is fourier_sub(c_j * x / rss, mask)."""
    if x.shape != coils.image_shape or x.shape != mask.shape:
        raise ValidationError("image, coils and mask shapes must agree")
    return KSpaceData(_forward_stack(x.data, coils.stack, mask), mask)


def _adjoint_stack(residual: np.ndarray, stack: np.ndarray) -> np.ndarray:
    rho = _floored_rss(stack)
    return np.real(np.sum(ifft2c(residual) * np.conj(stack), axis=0)) / rho


def adjoint_lin(r: KSpaceData, coils: CoilSet) -> RealImage:
    """Adjoint of the image-linearized acquisition operator.

    Re(sum_j F^{-1}(r_j) * conj(c_j) / rss); exact adjoint for the unitary
    DFT normalization used throughout.
    """
    if r.shape != coils.image_shape:
        raise ValidationError("k-space and coil shapes must agree")
    return RealImage(_adjoint_stack(r.channels, coils.stack))


def data_fidelity(x: RealImage, coils: CoilSet, y: KSpaceData) -> float:
    """Half squared complex 2-norm of the stacked k-space residual."""
    resid = _forward_stack(x.data, coils.stack, y.mask) - y.channels
    return 0.5 * float(np.sum(np.abs(resid) ** 2))


def grad_image(x: RealImage, coils: CoilSet, y: KSpaceData) -> RealImage:
    """Gradient of data_fidelity in the image: adjoint of the residual."""
    resid = _forward_stack(x.data, coils.stack, y.mask) - y.channels
    return RealImage(_adjoint_stack(resid, coils.stack))


def _grad_coils_stack(x: np.ndarray, stack: np.ndarray, y: KSpaceData) -> np.ndarray:
    rho = _floored_rss(stack)
    resid = np.where(y.mask.select, fft2c(stack * (x / rho)), 0.0) - y.channels
    kappa = ifft2c(resid)
    # The shared RSS denominator couples all channels; where the floor is
    # active rho is locally constant and the coupling term vanishes.
    coupled = np.sqrt(np.sum(np.abs(stack) ** 2, axis=0)) > RSS_FLOOR
    cross = np.sum(np.real(np.conj(stack) * kappa), axis=0)
    grad = x * kappa / rho - np.where(coupled, (x * cross / rho**3), 0.0) * stack
    return grad


def grad_coils(x: RealImage, coils: CoilSet, y: KSpaceData) -> CoilSet:
    """Gradient of data_fidelity in the coil maps.

    Packaged as dD/dRe(c_j) + i dD/dIm(c_j); equals
    x * (kappa_j / rho - c_j * sum_k Re(conj(c_k) kappa_k) / rho^3) with
    kappa_j the image-domain residual F^{-1}(s_j). Verified against central
    finite differences of data_fidelity.
    """
    return CoilSet(_grad_coils_stack(x.data, coils.stack, y))
