"""Sampling-mask generators and the synthetic phantom pipeline.

The simulator replaces clinical data at desk scale: random ellipse phantoms
as ground truth, smooth RSS-normalized synthetic coil maps, and noisy
sub-sampled k-space produced through the same forward operator the solver
inverts. With noiseless fully sampled data the RSS of the zero-filled coil
images reproduces a nonnegative phantom exactly, which anchors the whole
pipeline.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import CoilSet, KSpaceData, RealImage, Rng, SamplingMask, ValidationError
from .forward_model import forward

__all__ = [
    "MaskSpec",
    "PhantomSpec",
    "make_mask",
    "cartesian_mask",
    "gaussian_mask",
    "radial_mask",
    "phantom_image",
    "synth_coils",
    "simulate_kspace",
]


@dataclass(frozen=True)
class MaskSpec:
    """Declarative description of a sampling mask."""

    kind: str = "cartesian"          # cartesian | cartesian-swapped | gaussian | radial
    acceleration: float = 4.0
    acs_fraction: float = 0.08
    spokes: int = 45
    seed: int = 0
    two_dim: bool = False            # gaussian only: 2-D point density instead of columns

    def __post_init__(self):
        if self.kind not in ("cartesian", "cartesian-swapped", "gaussian", "radial"):
            raise ValidationError(f"unknown mask kind {self.kind!r}")
        if self.acceleration < 1:
            raise ValidationError("acceleration must be >= 1")
        if not 0 <= self.acs_fraction < 1:
            raise ValidationError("acs_fraction must lie in [0, 1)")
        if self.spokes < 1:
            raise ValidationError("spokes must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "MaskSpec":
        return MaskSpec(**d)


@dataclass(frozen=True)
class PhantomSpec:
    """Declarative description of one synthetic case."""

    height: int = 128
    width: int = 96
    num_coils: int = 4
    num_ellipses: int = 12
    coil_smoothness: float = 0.8
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValidationError("grid dimensions must be positive")
        if self.num_coils < 1:
            raise ValidationError("need at least one coil")
        if self.num_ellipses < 0:
            raise ValidationError("ellipse count must be nonnegative")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be nonnegative")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "PhantomSpec":
        return PhantomSpec(**d)


def cartesian_mask(shape, acceleration: float, acs_fraction: float,
                   swapped: bool = False) -> SamplingMask:
    """Equispaced phase-encode columns plus a fully sampled center block.

    round(acs_fraction * W) center columns are always on; the rest are taken
    at stride round(acceleration) starting from column 0. The swapped flag
    transposes the pattern onto rows.
    """
    h, w = shape
    n = w if not swapped else h
    n_acs = int(round(acs_fraction * n))
    if n_acs > n:
        raise ValidationError("ACS block wider than the grid")
    cols = np.zeros(n, dtype=bool)
    stride = max(1, int(round(acceleration)))
    cols[::stride] = True
    start = n // 2 - n_acs // 2  # block centered on the DC index of the centered DFT
    cols[start : start + n_acs] = True
    sel = np.broadcast_to(cols, (h, w)) if not swapped else np.broadcast_to(cols[:, None], (h, w))
    return SamplingMask(sel.copy())


def gaussian_mask(shape, acceleration: float, seed: int, two_dim: bool = False) -> SamplingMask:
    """Random variable-density pattern, deterministic given the seed.

    1-D (default): phase-encode columns drawn without replacement with
    probability proportional to a centered Gaussian of std W/6, plus an
    always-on 4 percent center block, until round(W/R) columns are selected.
    2-D: the same construction over individual k-space points.
    """
    h, w = shape
    rng = Rng(seed)
    if two_dim:
        total = h * w
        target = int(round(total / acceleration))
        yy, xx = np.mgrid[0:h, 0:w]
        d2 = ((yy - h // 2) / (h / 6.0)) ** 2 + ((xx - w // 2) / (w / 6.0)) ** 2
        weights = np.exp(-0.5 * d2).ravel()
        block = np.zeros((h, w), dtype=bool)
        bh, bw = max(1, int(round(0.04 * h))), max(1, int(round(0.04 * w)))
        block[h // 2 - bh // 2 : h // 2 - bh // 2 + bh,
              w // 2 - bw // 2 : w // 2 - bw // 2 + bw] = True
        n_fixed = int(block.sum())
        if target < n_fixed:
            raise ValidationError("acceleration too high for the fixed center block")
        # Gumbel-top-k gives a deterministic weighted draw without replacement
        gumbel = -np.log(-np.log(np.maximum(rng.uniform(total), 1e-300)))
        keys = np.log(weights) + gumbel
        keys[block.ravel()] = np.inf
        order = np.argsort(-keys)
        sel = np.zeros(total, dtype=bool)
        sel[order[:target]] = True
        return SamplingMask(sel.reshape(h, w))

    target = int(round(w / acceleration))
    n_block = max(1, int(round(0.04 * w)))
    if target < n_block:
        raise ValidationError("acceleration too high for the fixed center block")
    centers = np.zeros(w, dtype=bool)
    start = w // 2 - n_block // 2
    centers[start : start + n_block] = True
    density = np.exp(-0.5 * ((np.arange(w) - w // 2) / (w / 6.0)) ** 2)
    gumbel = -np.log(-np.log(np.maximum(rng.uniform(w), 1e-300)))
    keys = np.log(density) + gumbel
    keys[centers] = np.inf
    order = np.argsort(-keys)
    cols = np.zeros(w, dtype=bool)
    cols[order[:target]] = True
    return SamplingMask(np.broadcast_to(cols, (h, w)).copy())


def radial_mask(shape, spokes: int) -> SamplingMask:
    """Straight lines through the k-space center at equispaced angles in [0, pi)."""
    if spokes < 1:
        raise ValidationError("spokes must be >= 1")
    h, w = shape
    cy, cx = h // 2, w // 2
    sel = np.zeros((h, w), dtype=bool)
    radius = float(np.hypot(h, w))
    ts = np.arange(-radius, radius, 0.5)
    for k in range(spokes):
        theta = np.pi * k / spokes
        rows = np.round(cy + ts * np.sin(theta)).astype(int)
        cols = np.round(cx + ts * np.cos(theta)).astype(int)
        keep = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        sel[rows[keep], cols[keep]] = True
    return SamplingMask(sel)


def make_mask(shape, spec: MaskSpec) -> SamplingMask:
    if spec.kind == "cartesian":
        return cartesian_mask(shape, spec.acceleration, spec.acs_fraction, swapped=False)
    if spec.kind == "cartesian-swapped":
        return cartesian_mask(shape, spec.acceleration, spec.acs_fraction, swapped=True)
    if spec.kind == "gaussian":
        return gaussian_mask(shape, spec.acceleration, spec.seed, spec.two_dim)
    return radial_mask(shape, spec.spokes)


def phantom_image(spec: PhantomSpec) -> RealImage:
    """Sum of randomly placed ellipses, clipped to [0, 1]."""
    rng = Rng(spec.seed)
    h, w = spec.height, spec.width
    img = np.zeros((h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(spec.num_ellipses):
        u = rng.uniform(7)
        cy = (0.15 + 0.7 * u[0]) * h
        cx = (0.15 + 0.7 * u[1]) * w
        ay = (0.05 + 0.25 * u[2]) * h
        ax = (0.05 + 0.25 * u[3]) * w
        theta = np.pi * u[4]
        value = u[5]
        ct, st = np.cos(theta), np.sin(theta)
        ry = (yy - cy) * ct + (xx - cx) * st
        rx = -(yy - cy) * st + (xx - cx) * ct
        img += value * (((ry / ay) ** 2 + (rx / ax) ** 2) <= 1.0)
    return RealImage(np.clip(img, 0.0, 1.0))


def synth_coils(shape, num_coils: int, smoothness: float = 0.8, seed: int = 0) -> CoilSet:
    """Smooth complex maps, RSS-normalized so their combined magnitude is one.

    Each coil is a Gaussian magnitude bump centered just outside one of C
    equispaced border locations with a gentle linear phase; the bump width
    scales with the smoothness parameter.
    """
    if num_coils < 1:
        raise ValidationError("need at least one coil")
    if smoothness <= 0:
        raise ValidationError("smoothness must be positive")
    h, w = shape
    rng = Rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    width = smoothness * max(h, w)
    stack = np.empty((num_coils, h, w), dtype=complex)
    for j in range(num_coils):
        angle = 2.0 * np.pi * j / num_coils
        cy = h / 2.0 + 0.6 * h * np.sin(angle)
        cx = w / 2.0 + 0.6 * w * np.cos(angle)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        mag = 0.05 + np.exp(-0.5 * d2 / width**2)
        jitter = rng.normal(2) * 0.2
        phase = ((0.5 + jitter[0]) * np.pi * yy / h * np.sin(angle + 1.0)
                 + (0.5 + jitter[1]) * np.pi * xx / w * np.cos(angle + 1.0))
        stack[j] = mag * np.exp(1j * phase)
    rho = np.sqrt(np.sum(np.abs(stack) ** 2, axis=0))
    return CoilSet(stack / rho)


def simulate_kspace(x: RealImage, coils: CoilSet, mask: SamplingMask,
                    noise_std: float, rng: Rng) -> KSpaceData:
    """Forward-model k-space plus complex Gaussian noise on selected entries."""
    clean = forward(x, coils, mask)
    if noise_std == 0.0:
        return clean
    noise = noise_std * rng.complex_normal(clean.channels.shape)
    return KSpaceData(np.where(mask.select, clean.channels + noise, 0.0), mask)
