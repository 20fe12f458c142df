"""Tiling: downsampling, deterministic patch grids, and mask reconstruction.

Edge windows are shifted (not padded) so every window lies fully inside the
image; overlapping patch labels are resolved by per-pixel majority vote with
ties going to tumor, and overlapping dense predictions by per-pixel mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import require_image, require_mask
from .util import round_half_up


@dataclass(frozen=True)
class PatchGrid:
    """Deterministic row-major tiling geometry for one image."""

    image_width: int
    image_height: int
    patch_size: int
    stride: int
    origins: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.origins)


def downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsample by an integer factor, output dims = ceil(dims/factor).

    Each output pixel is the rounded (half-up) mean of its factor x factor
    source block; edge blocks are clamped to the image.
    """
    image = require_image(image)
    if factor < 1:
        raise ValueError(f"downsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return image.copy()
    h, w = image.shape[:2]
    row_idx = np.arange(0, h, factor)
    col_idx = np.arange(0, w, factor)
    sums = np.add.reduceat(image, row_idx, axis=0, dtype=np.int64)
    sums = np.add.reduceat(sums, col_idx, axis=1)
    row_sizes = np.diff(np.append(row_idx, h))
    col_sizes = np.diff(np.append(col_idx, w))
    counts = (row_sizes[:, None] * col_sizes[None, :])[:, :, None]
    # exact half-up integer rounding: floor(s/c + 1/2) = (2s + c) // (2c)
    means = (2 * sums + counts) // (2 * counts)
    return means.astype(np.uint8)


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Block-majority downsample of a binary mask (ties -> 1)."""
    mask = require_mask(mask)
    if factor < 1:
        raise ValueError(f"downsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return mask.copy()
    h, w = mask.shape
    row_idx = np.arange(0, h, factor)
    col_idx = np.arange(0, w, factor)
    sums = np.add.reduceat(mask, row_idx, axis=0, dtype=np.int64)
    sums = np.add.reduceat(sums, col_idx, axis=1)
    row_sizes = np.diff(np.append(row_idx, h))
    col_sizes = np.diff(np.append(col_idx, w))
    counts = row_sizes[:, None] * col_sizes[None, :]
    return (2 * sums >= counts).astype(np.uint8)


def upsample_mask(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    """Nearest-neighbor upsample of a mask to exact target dims."""
    mask = require_mask(mask)
    sh, sw = mask.shape
    ys = (np.arange(height, dtype=np.int64) * sh) // height
    xs = (np.arange(width, dtype=np.int64) * sw) // width
    return mask[ys[:, None], xs[None, :]]


def resize_nearest(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    """Nearest-neighbor resize of a binary mask (any direction)."""
    return upsample_mask(mask, width, height)


def resize_bilinear(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of an RGB image with pixel-center alignment."""
    image = require_image(image)
    sh, sw = image.shape[:2]
    ys = np.clip((np.arange(height) + 0.5) * sh / height - 0.5, 0, sh - 1)
    xs = np.clip((np.arange(width) + 0.5) * sw / width - 0.5, 0, sw - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    ty = (ys - y0)[:, None, None]
    tx = (xs - x0)[None, :, None]
    img = image.astype(np.float64)
    out = (
        img[y0][:, x0] * (1 - ty) * (1 - tx)
        + img[y0][:, x1] * (1 - ty) * tx
        + img[y1][:, x0] * ty * (1 - tx)
        + img[y1][:, x1] * ty * tx
    )
    return np.clip(round_half_up(out), 0, 255).astype(np.uint8)


def _axis_origins(length: int, patch: int, stride: int) -> list[int]:
    xs = list(range(0, length - patch + 1, stride))
    if xs[-1] + patch < length:
        xs.append(length - patch)
    return xs


def make_grid(width: int, height: int, patch_size: int, stride: int) -> PatchGrid:
    """Build a row-major grid of patch windows covering the whole image.

    Origins sit at multiples of stride; the final column/row is shifted so the
    window ends exactly at the image border.
    """
    if patch_size > min(width, height):
        raise ValueError(
            f"patch_size {patch_size} exceeds image dims {width}x{height}"
        )
    if not 1 <= stride <= patch_size:
        raise ValueError(f"stride must be in [1, patch_size], got {stride}")
    xs = _axis_origins(width, patch_size, stride)
    ys = _axis_origins(height, patch_size, stride)
    origins = tuple((x, y) for y in ys for x in xs)
    return PatchGrid(width, height, patch_size, stride, origins)


def _check_grid_matches(grid: PatchGrid, array: np.ndarray) -> None:
    if array.shape[0] != grid.image_height or array.shape[1] != grid.image_width:
        raise ValueError(
            f"grid built for {grid.image_width}x{grid.image_height}, "
            f"array is {array.shape[1]}x{array.shape[0]}"
        )


def extract_patches(image: np.ndarray, grid: PatchGrid) -> list[np.ndarray]:
    """Cut the exact pixel window at each grid origin, in grid order."""
    image = require_image(image)
    _check_grid_matches(grid, image)
    p = grid.patch_size
    return [np.ascontiguousarray(image[y : y + p, x : x + p]) for x, y in grid.origins]


def stitch_patch_labels(grid: PatchGrid, labels) -> np.ndarray:
    """Paint per-patch {0,1} labels back into a full mask.

    Pixels covered by several windows take the majority label; ties go to 1.
    """
    labels = np.asarray(labels)
    if labels.shape[0] != len(grid.origins):
        raise ValueError(
            f"got {labels.shape[0]} labels for {len(grid.origins)} grid windows"
        )
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    p = grid.patch_size
    ones = np.zeros((grid.image_height, grid.image_width), dtype=np.int64)
    total = np.zeros_like(ones)
    for (x, y), lab in zip(grid.origins, labels):
        total[y : y + p, x : x + p] += 1
        if lab:
            ones[y : y + p, x : x + p] += 1
    return (2 * ones >= total).astype(np.uint8)


def stitch_dense(grid: PatchGrid, patch_maps) -> np.ndarray:
    """Average per-patch probability maps into one full map (mean over overlaps)."""
    patch_maps = list(patch_maps)
    if len(patch_maps) != len(grid.origins):
        raise ValueError(
            f"got {len(patch_maps)} maps for {len(grid.origins)} grid windows"
        )
    p = grid.patch_size
    acc = np.zeros((grid.image_height, grid.image_width), dtype=np.float64)
    count = np.zeros_like(acc)
    for (x, y), pm in zip(grid.origins, patch_maps):
        pm = np.asarray(pm, dtype=np.float64)
        if pm.shape != (p, p):
            raise ValueError(f"patch map shape {pm.shape} != ({p}, {p})")
        acc[y : y + p, x : x + p] += pm
        count[y : y + p, x : x + p] += 1.0
    return acc / count


def threshold(prob_map: np.ndarray, t: float = 0.5) -> np.ndarray:
    """Binarize a probability map: 1 where value >= t."""
    prob_map = np.asarray(prob_map, dtype=np.float64)
    return (prob_map >= t).astype(np.uint8)


def write_grid_manifest(grid: PatchGrid, path) -> None:
    """Serialize a grid as text: header line with dims/size/stride, one origin per line."""
    lines = [f"{grid.image_width} {grid.image_height} {grid.patch_size} {grid.stride}"]
    lines += [f"{x} {y}" for x, y in grid.origins]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid_manifest(path) -> PatchGrid:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"empty grid manifest: {path}")
    try:
        w, h, p, s = (int(v) for v in lines[0].split())
        origins = tuple(tuple(int(v) for v in ln.split()) for ln in lines[1:])
    except ValueError as exc:
        raise ValueError(f"malformed grid manifest {path}: {exc}") from exc
    for x, y in origins:
        if not (0 <= x <= w - p and 0 <= y <= h - p):
            raise ValueError(f"manifest origin ({x}, {y}) outside image {w}x{h}")
    return PatchGrid(w, h, p, s, origins)
