"""Handcrafted feature extractors shared by the classification pipelines.

The region extractor produces a fixed 40-dim vector per pixel region:
CIELAB per-channel mean and variance (6), 8-bin per-channel RGB histograms
(24), an 8-bin gradient-magnitude histogram (8), and normalized area and
perimeter (2). Regions can be superpixels, patches, or matching windows.

The pixel extractor produces an 8-dim vector per pixel from box-filtered
local statistics, used by the dense (semantic) reference backend.
"""

from __future__ import annotations

import numpy as np

from .color import luminance, rgb_to_lab, saturation

REGION_FEATURE_DIM = 40
PIXEL_FEATURE_DIM = 8

_HIST_BINS = 8
# Central-difference luma gradients lie in [-127.5, 127.5] per axis.
_GRAD_MAX = float(np.hypot(127.5, 127.5))


def _gradient_magnitude(image: np.ndarray) -> np.ndarray:
    luma = luminance(image)
    gy, gx = np.gradient(luma)
    return np.hypot(gx, gy)


def _grad_bin_index(grad: np.ndarray) -> np.ndarray:
    idx = (grad / (_GRAD_MAX / _HIST_BINS)).astype(np.int64)
    return np.minimum(idx, _HIST_BINS - 1)


def region_feature_matrix(image: np.ndarray, labels: np.ndarray, n_regions: int) -> np.ndarray:
    """Compute the 40-dim reference feature vector for every labeled region.

    `labels` assigns each pixel a region id in [0, n_regions); every id must
    occur at least once (regions form a partition).
    """
    img = np.asarray(image)
    labels = np.asarray(labels)
    if img.shape[:2] != labels.shape:
        raise ValueError(f"image {img.shape[:2]} and labels {labels.shape} dims differ")
    h, w = labels.shape
    n_pixels = h * w
    flat = labels.ravel().astype(np.int64)
    counts = np.bincount(flat, minlength=n_regions).astype(np.float64)
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"region {missing} has no pixels (labels are not a partition)")

    feats = np.empty((n_regions, REGION_FEATURE_DIM), dtype=np.float64)

    lab = rgb_to_lab(img).reshape(-1, 3)
    for c in range(3):
        s = np.bincount(flat, weights=lab[:, c], minlength=n_regions)
        s2 = np.bincount(flat, weights=lab[:, c] ** 2, minlength=n_regions)
        mean = s / counts
        feats[:, c] = mean
        feats[:, 3 + c] = np.maximum(s2 / counts - mean**2, 0.0)

    rgb_flat = img.reshape(-1, 3)
    for c in range(3):
        bins = rgb_flat[:, c].astype(np.int64) >> 5  # 256 / 8 = 32-wide bins
        hist = np.bincount(flat * _HIST_BINS + bins, minlength=n_regions * _HIST_BINS)
        feats[:, 6 + 8 * c : 14 + 8 * c] = hist.reshape(n_regions, _HIST_BINS) / counts[:, None]

    gbins = _grad_bin_index(_gradient_magnitude(img)).ravel()
    ghist = np.bincount(flat * _HIST_BINS + gbins, minlength=n_regions * _HIST_BINS)
    feats[:, 30:38] = ghist.reshape(n_regions, _HIST_BINS) / counts[:, None]

    feats[:, 38] = counts / n_pixels

    boundary = np.zeros((h, w), dtype=bool)
    boundary[0, :] = boundary[-1, :] = boundary[:, 0] = boundary[:, -1] = True
    boundary[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    boundary[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    boundary[1:, :] |= labels[1:, :] != labels[:-1, :]
    boundary[:-1, :] |= labels[:-1, :] != labels[1:, :]
    perim = np.bincount(flat[boundary.ravel()], minlength=n_regions).astype(np.float64)
    feats[:, 39] = perim / (2.0 * (w + h))

    return feats


def patch_feature_vector(patch: np.ndarray) -> np.ndarray:
    """Region features of a whole patch treated as a single region."""
    labels = np.zeros(patch.shape[:2], dtype=np.int64)
    return region_feature_matrix(patch, labels, 1)[0]


def grid_feature_matrix(image: np.ndarray, origins, patch_size: int) -> np.ndarray:
    """Region features for each grid window, sharing one Lab/gradient pass.

    Each window is treated as a single region of its own sub-image (area and
    perimeter are window-relative), so rows match patch_feature_vector on the
    extracted windows up to the gradient estimate at window borders.
    """
    img = np.asarray(image)
    lab = rgb_to_lab(img)
    grad_bins_full = _grad_bin_index(_gradient_magnitude(img))
    p = patch_size
    area = float(p * p)
    out = np.empty((len(origins), REGION_FEATURE_DIM), dtype=np.float64)
    for i, (x, y) in enumerate(origins):
        lab_win = lab[y : y + p, x : x + p].reshape(-1, 3)
        out[i, 0:3] = lab_win.mean(axis=0)
        out[i, 3:6] = np.maximum(
            (lab_win**2).mean(axis=0) - out[i, 0:3] ** 2, 0.0
        )
        rgb_win = img[y : y + p, x : x + p].reshape(-1, 3)
        for c in range(3):
            hist = np.bincount(rgb_win[:, c].astype(np.int64) >> 5, minlength=_HIST_BINS)
            out[i, 6 + 8 * c : 14 + 8 * c] = hist / area
        glob = grad_bins_full[y : y + p, x : x + p].ravel()
        out[i, 30:38] = np.bincount(glob, minlength=_HIST_BINS) / area
        out[i, 38] = 1.0
        out[i, 39] = (4.0 * p - 4.0) / (4.0 * p)
    return out


def _box_sum(arr: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Sum and pixel count over a clipped (2r+1)-square window around each pixel."""
    h, w = arr.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = np.cumsum(np.cumsum(arr, axis=0), axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - radius, 0, h)[:, None]
    y1 = np.clip(ys + radius + 1, 0, h)[:, None]
    x0 = np.clip(xs - radius, 0, w)[None, :]
    x1 = np.clip(xs + radius + 1, 0, w)[None, :]
    total = integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
    count = (y1 - y0).astype(np.float64) * (x1 - x0)
    return total, count


def pixel_feature_maps(image: np.ndarray, radius: int = 4) -> np.ndarray:
    """Per-pixel 8-dim feature maps: Lab box mean (3), Lab box variance (3),
    gradient-magnitude box mean (1), saturation box mean (1)."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    lab = rgb_to_lab(img)
    feats = np.empty((h, w, PIXEL_FEATURE_DIM), dtype=np.float64)
    for c in range(3):
        s, n = _box_sum(lab[:, :, c], radius)
        s2, _ = _box_sum(lab[:, :, c] ** 2, radius)
        mean = s / n
        feats[:, :, c] = mean
        feats[:, :, 3 + c] = np.maximum(s2 / n - mean**2, 0.0)
    gs, gn = _box_sum(_gradient_magnitude(img), radius)
    feats[:, :, 6] = gs / gn
    ss, sn = _box_sum(saturation(img), radius)
    feats[:, :, 7] = ss / sn
    return feats
