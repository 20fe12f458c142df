"""Imaging core: raster types, PNG I/O, synthetic slide generation, overlays.

Images are numpy uint8 arrays of shape (H, W, 3); masks are uint8 arrays of
shape (H, W) with values in {0, 1}. Masks are stored on disk as 8-bit
grayscale PNG with {0, 255} mapped back to {0, 1} on load.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import ImageFormatError
from .util import round_half_up


def require_image(image: np.ndarray) -> np.ndarray:
    """Validate an RGB raster: uint8, shape (H, W, 3), H and W >= 1."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected RGB array of shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if arr.dtype != np.uint8:
        raise ValueError(f"image dtype must be uint8, got {arr.dtype}")
    return arr


def require_mask(mask: np.ndarray) -> np.ndarray:
    """Validate a binary mask: shape (H, W), values in {0, 1}."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected mask of shape (H, W), got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = arr.astype(np.uint8)
    if arr.size and arr.max() > 1:
        raise ValueError("mask values must be in {0, 1}")
    return arr


def _open_png(path):
    try:
        img = PILImage.open(path)
        img.load()
        return img
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc


def load_image(path) -> np.ndarray:
    """Load an 8-bit RGB PNG. Raises ImageFormatError for other modes."""
    img = _open_png(path)
    if img.mode != "RGB":
        raise ImageFormatError(
            f"{path}: unsupported PNG mode {img.mode!r}, expected 8-bit RGB"
        )
    return np.asarray(img, dtype=np.uint8)


def save_image(image: np.ndarray, path) -> None:
    image = require_image(image)
    PILImage.fromarray(image, mode="RGB").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    """Load a binary mask stored as 8-bit grayscale PNG (values >= 128 -> 1)."""
    img = _open_png(path)
    if img.mode != "L":
        raise ImageFormatError(
            f"{path}: unsupported PNG mode {img.mode!r}, expected 8-bit grayscale"
        )
    arr = np.asarray(img, dtype=np.uint8)
    return (arr >= 128).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    mask = require_mask(mask)
    PILImage.fromarray(mask * np.uint8(255), mode="L").save(path, format="PNG")


@dataclass(frozen=True)
class TextureParams:
    """Flat-color texture with seeded value noise and optional diagonal stripes.

    Stripes share the noise amplitude; stripe_freq is in cycles per pixel
    along the x+y diagonal (0 disables stripes).
    """

    base_rgb: tuple[int, int, int]
    noise_amp: float = 8.0
    stripe_freq: float = 0.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for a synthetic ground-truth slide (blobs of tumor texture)."""

    width: int
    height: int
    blob_count: int
    blob_radius_range: tuple[float, float]
    tumor_texture: TextureParams = field(
        default_factory=lambda: TextureParams((150, 80, 160), 8.0, 0.12)
    )
    background_texture: TextureParams = field(
        default_factory=lambda: TextureParams((235, 205, 220), 8.0, 0.0)
    )
    seed: int = 0
    noise_cell: int = 16

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("synthetic spec has zero area")
        if self.blob_count < 0:
            raise ValueError("blob_count must be >= 0")
        rmin, rmax = self.blob_radius_range
        if not (0 < rmin <= rmax):
            raise ValueError(f"invalid blob radius range ({rmin}, {rmax})")
        if rmax >= min(self.width, self.height) / 2:
            raise ValueError("blob radius must be < min(width, height)/2")
        if self.noise_cell < 1:
            raise ValueError("noise_cell must be >= 1")
        base_t = np.asarray(self.tumor_texture.base_rgb, dtype=np.float64)
        base_b = np.asarray(self.background_texture.base_rgb, dtype=np.float64)
        dist = float(np.linalg.norm(base_t - base_b))
        amp = max(self.tumor_texture.noise_amp, self.background_texture.noise_amp)
        if dist <= amp:
            raise ValueError(
                f"textures not distinguishable: base RGB distance {dist:.1f} <= noise amplitude {amp:.1f}"
            )


def _value_noise(height: int, width: int, cell: int, rng: np.random.Generator) -> np.ndarray:
    """Bilinear value noise in [-1, 1] on a coarse grid of spacing `cell`."""
    gh = height // cell + 2
    gw = width // cell + 2
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
    ys = np.arange(height, dtype=np.float64) / cell
    xs = np.arange(width, dtype=np.float64) / cell
    y0 = ys.astype(np.int64)
    x0 = xs.astype(np.int64)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (
        g00 * (1 - ty) * (1 - tx)
        + g01 * (1 - ty) * tx
        + g10 * ty * (1 - tx)
        + g11 * ty * tx
    )


def _render_texture(
    spec: SyntheticSpec, tex: TextureParams, rng: np.random.Generator
) -> np.ndarray:
    h, w = spec.height, spec.width
    noise = _value_noise(h, w, spec.noise_cell, rng) * tex.noise_amp
    if tex.stripe_freq > 0:
        xs = np.arange(w, dtype=np.float64)[None, :]
        ys = np.arange(h, dtype=np.float64)[:, None]
        noise = noise + np.sin(2.0 * np.pi * tex.stripe_freq * (xs + ys)) * tex.noise_amp
    base = np.asarray(tex.base_rgb, dtype=np.float64)
    out = base[None, None, :] + noise[:, :, None]
    return np.clip(round_half_up(out), 0, 255).astype(np.uint8)


def sample_blobs(spec: SyntheticSpec, rng: np.random.Generator) -> list[tuple[float, float, float]]:
    """Draw the blob geometry (cx, cy, r) for a spec; disks lie fully inside."""
    rmin, rmax = spec.blob_radius_range
    blobs = []
    for _ in range(spec.blob_count):
        r = rng.uniform(rmin, rmax)
        cx = rng.uniform(r, spec.width - 1 - r)
        cy = rng.uniform(r, spec.height - 1 - r)
        blobs.append((cx, cy, r))
    return blobs


def generate_synthetic_wsi(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render a synthetic slide and its ground-truth mask.

    The mask is the exact union of the generated disks (point-in-disk test
    (x-cx)^2 + (y-cy)^2 <= r^2); the image shows the tumor texture inside the
    mask and the background texture outside. Fully determined by spec.seed.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    h, w = spec.height, spec.width
    mask = np.zeros((h, w), dtype=np.uint8)
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    for cx, cy, r in sample_blobs(spec, rng):
        mask |= ((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r).astype(np.uint8)

    background = _render_texture(spec, spec.background_texture, rng)
    tumor = _render_texture(spec, spec.tumor_texture, rng)
    image = np.where(mask[:, :, None].astype(bool), tumor, background)
    return image, mask


def render_overlay(
    image: np.ndarray, mask: np.ndarray, color: tuple[int, int, int] = (255, 0, 0), alpha: float = 0.4
) -> np.ndarray:
    """Alpha-blend `color` over the image where mask == 1 (rounding half-up)."""
    image = require_image(image)
    mask = require_mask(mask)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape} dimensions differ")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    blended = (1.0 - alpha) * image.astype(np.float64) + alpha * np.asarray(color, dtype=np.float64)
    blended = np.clip(round_half_up(blended), 0, 255).astype(np.uint8)
    out = image.copy()
    sel = mask.astype(bool)
    out[sel] = blended[sel]
    return out
