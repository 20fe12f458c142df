"""Seeded joint image/mask augmentations: quarter-turn rotation, flips,
additive brightness, and elastic deformation.

Randomness for sample i derives from (cfg.seed, i), so a sample's augmentation
is independent of batch order or worker scheduling. Geometric transforms hit
image and mask identically (bilinear vs nearest sampling); brightness touches
only the image, so masks stay strictly binary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import require_image, require_mask
from .util import round_half_up


@dataclass(frozen=True)
class AugmentConfig:
    rotations: tuple[int, ...] = (0, 1, 2, 3)  # allowed quarter turns
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    brightness_delta_range: tuple[float, float] = (-20.0, 20.0)
    elastic_alpha: float = 8.0
    elastic_sigma: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if not self.rotations or any(k not in (0, 1, 2, 3) for k in self.rotations):
            raise ValueError("rotations must be a non-empty subset of {0, 1, 2, 3}")
        for p in (self.p_hflip, self.p_vflip):
            if not 0.0 <= p <= 1.0:
                raise ValueError("flip probabilities must be in [0, 1]")
        lo, hi = self.brightness_delta_range
        if lo > hi or lo < -128.0 or hi > 128.0:
            raise ValueError("brightness delta range must be within [-128, 128]")
        if self.elastic_sigma <= 0:
            raise ValueError("elastic_sigma must be > 0")
        if self.elastic_alpha < 0:
            raise ValueError("elastic_alpha must be >= 0")


def elastic_deform(
    image: np.ndarray,
    mask: np.ndarray,
    alpha: float,
    sigma: float,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Random smooth warp: displacement = alpha * gaussian_blur(U(-1,1), sigma).

    The image is resampled bilinearly, the mask with nearest-neighbor;
    coordinates are clamped at the borders. alpha = 0 is the identity.
    """
    image = require_image(image)
    mask = require_mask(mask)
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if alpha == 0:
        return image.copy(), mask.copy()
    h, w = mask.shape
    rng = np.random.default_rng(seed)
    dx = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, size=(h, w)), sigma) * alpha
    dy = ndimage.gaussian_filter(rng.uniform(-1.0, 1.0, size=(h, w)), sigma) * alpha
    ygrid, xgrid = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([ygrid + dy, xgrid + dx])

    warped = np.empty_like(image)
    for c in range(3):
        chan = ndimage.map_coordinates(
            image[:, :, c].astype(np.float64), coords, order=1, mode="nearest"
        )
        warped[:, :, c] = np.clip(round_half_up(chan), 0, 255).astype(np.uint8)
    warped_mask = ndimage.map_coordinates(mask, coords, order=0, mode="nearest")
    return warped, warped_mask.astype(np.uint8)


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    cfg: AugmentConfig,
    sample_index: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply one sampled augmentation chain to an image/mask pair.

    Order: rotation, flips, elastic deformation, brightness. Deterministic
    in (cfg.seed, sample_index).
    """
    image = require_image(image)
    mask = require_mask(mask)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape} dims differ")
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, sample_index])

    k = int(rng.choice(np.asarray(cfg.rotations)))
    if k:
        image = np.rot90(image, k)
        mask = np.rot90(mask, k)
    if rng.random() < cfg.p_hflip:
        image = image[:, ::-1]
        mask = mask[:, ::-1]
    if rng.random() < cfg.p_vflip:
        image = image[::-1, :]
        mask = mask[::-1, :]
    image = np.ascontiguousarray(image)
    mask = np.ascontiguousarray(mask)

    elastic_seed = int(rng.integers(0, 2**63))
    if cfg.elastic_alpha > 0:
        image, mask = elastic_deform(
            image, mask, cfg.elastic_alpha, cfg.elastic_sigma, elastic_seed
        )

    lo, hi = cfg.brightness_delta_range
    delta = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    if delta != 0.0:
        shifted = image.astype(np.float64) + delta
        image = np.clip(round_half_up(shifted), 0, 255).astype(np.uint8)
    return image, mask
