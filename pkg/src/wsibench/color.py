"""Color-space conversions: sRGB to CIELAB (D65, 2-degree observer), luma, saturation."""

from __future__ import annotations

import numpy as np

# sRGB -> XYZ linear transform (D65 white point).
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert 8-bit sRGB (..., 3) to CIELAB float64.

    L in [0, 100], a/b roughly in [-128, 127]. Pure numpy, deterministic.
    """
    srgb = np.asarray(rgb, dtype=np.float64) / 255.0
    linear = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE_D65
    f = np.where(t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an RGB image, float64 in [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def saturation(image: np.ndarray) -> np.ndarray:
    """HSV saturation per pixel, float64 in [0, 1]; 0 where the pixel is black."""
    img = np.asarray(image, dtype=np.float64)
    cmax = img.max(axis=-1)
    cmin = img.min(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sat = np.where(cmax > 0, (cmax - cmin) / cmax, 0.0)
    return sat
