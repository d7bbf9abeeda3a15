"""Shipped parameter presets.

The full-scale schedule endpoints below are the published grid-search
values for 320x320-crop knee data. The desk presets were re-tuned on the
128x96 synthetic suite: the schedule ENDPOINT machinery is identical, but
the coil-step strength interacts with grid size (through the global coil
normalization) quadratically in the pixel count, so the full-scale mu
values do not transfer to small grids.
"""

from __future__ import annotations

from .core import ValidationError
from .sampler import CropGeometry, ReconConfig

__all__ = [
    "FULL_SCALE_TABLE",
    "DESK_GRID",
    "desk_crop",
    "desk_recon_config",
]

# (lambda_N, lambda_1, mu_N, mu_1) per sampling pattern, proton-density row
FULL_SCALE_TABLE = {
    "cartesian": (0.56, 0.07, 1e-6, 25.0),
    "cartesian-swapped": (0.80, 0.30, 1e-6, 25.0),
    "gaussian": (0.56, 0.21, 1e-6, 25.0),
    "radial": (0.70, 0.21, 1e-6, 20.0),
}

DESK_GRID = (128, 96)

_DESK_TABLE = {
    # kind: (n_steps, lambda endpoints, mu endpoints)
    "cartesian": (1200, (0.56, 0.02), (1e-3, 3.0)),
    "cartesian-swapped": (1200, (0.56, 0.02), (1e-3, 3.0)),
    "gaussian": (1000, (0.56, 0.02), (1e-3, 2.0)),
    "radial": (1000, (0.56, 0.02), (1e-3, 3.0)),
}


def desk_crop(height: int = DESK_GRID[0], width: int = DESK_GRID[1]) -> CropGeometry:
    return CropGeometry(height, width, min(64, height), min(64, width))


def desk_recon_config(mask_kind: str, height: int = DESK_GRID[0],
                      width: int = DESK_GRID[1], seed: int = 1) -> ReconConfig:
    """Tuned desk-scale reconstruction settings for a sampling pattern."""
    if mask_kind not in _DESK_TABLE:
        raise ValidationError(f"no desk preset for mask kind {mask_kind!r}")
    n_steps, lam, mu = _DESK_TABLE[mask_kind]
    return ReconConfig(
        n_steps=n_steps,
        corrector_steps=1,
        snr=0.0075,
        sigma_min=0.01,
        sigma_max=50.0,
        lambda_endpoints=lam,
        mu_endpoints=mu,
        crop=desk_crop(height, width),
        seed=seed,
        renormalize_coils=True,
    )
