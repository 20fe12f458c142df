"""Stain separation and structure-preserving color normalization.

Pixels are mapped to optical density OD = -log10((I+1)/256) per channel
(the +1 avoids log 0 and makes I=255 map exactly to OD 0), tissue OD is
factorized as V ~ W.H with a 3x2 non-negative stain-color matrix W (unit-norm
columns) and non-negative concentrations H under an L1 sparsity penalty on H,
and a source image is recolored by scaling its concentration rows to match a
reference's 99th percentiles and reconstructing with the reference's W.

The factorization alternates multiplicative updates: the standard L1-penalized
rule for H and the norm-invariant rule for W (the update is computed against
the normalized columns, so renormalizing afterwards keeps the objective
non-increasing, which is asserted every iteration).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import luminance
from .imaging import require_image
from .util import round_half_up

_LOG_256 = np.log10(256.0)
_EPS = 1e-12


@dataclass(frozen=True)
class StainConfig:
    lambda_sparse: float = 0.1
    iterations: int = 200
    seed: int = 0
    percentile: float = 99.0
    luminance_threshold: float = 0.9  # fraction of 255 above which a pixel is background


@dataclass(frozen=True)
class StainModel:
    """Stain-color matrix W (3 x 2, unit-norm non-negative columns) and
    concentrations H (2 x N, non-negative). Column 0 is the more
    blue-absorbing (hematoxylin-like) stain."""

    color_matrix: np.ndarray  # (3, 2)
    concentrations: np.ndarray  # (2, N)


def tissue_mask(image: np.ndarray, threshold: float = 0.9) -> np.ndarray:
    """Boolean mask of tissue pixels (luminance <= threshold * 255)."""
    image = require_image(image)
    return luminance(image) <= threshold * 255.0


def to_optical_density(image: np.ndarray, tissue: np.ndarray | None = None) -> np.ndarray:
    """Optical density rows for the tissue pixels of an RGB image.

    Returns an (N_tissue, 3) float matrix with values in [0, log10(256)].
    Raises ValueError when no tissue pixels remain.
    """
    image = require_image(image)
    if tissue is None:
        tissue = tissue_mask(image)
    if tissue.shape != image.shape[:2]:
        raise ValueError("tissue mask dims do not match image")
    pixels = image[tissue].astype(np.float64)
    if pixels.size == 0:
        raise ValueError("empty tissue mask: no tissue pixels to convert")
    return _LOG_256 - np.log10(pixels + 1.0)


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    """Invert the OD transform: I = round(256 * 10^(-OD) - 1), clamped to [0, 255]."""
    intensities = 256.0 * np.power(10.0, -np.asarray(od, dtype=np.float64)) - 1.0
    return np.clip(round_half_up(intensities), 0, 255).astype(np.uint8)


def _order_columns(w: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Column 0 absorbs more blue; red component breaks ties.
    if (w[2, 0], w[0, 0]) < (w[2, 1], w[0, 1]):
        return w[:, ::-1].copy(), h[::-1].copy()
    return w, h


def _init_color_matrix(od: np.ndarray) -> np.ndarray:
    """Initial stain directions from the extremes of the OD angle distribution."""
    cov = np.cov(od, rowvar=False)
    _, evecs = np.linalg.eigh(cov)
    basis = evecs[:, [2, 1]]
    for j in range(2):
        if basis[:, j].sum() < 0:
            basis[:, j] = -basis[:, j]
    proj = od @ basis
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(phi, [1.0, 99.0])
    if hi - lo < 0.05:
        hi = lo + 0.5  # near rank-1 data: keep the two directions apart
    cols = []
    for angle in (lo, hi):
        d = basis @ np.array([np.cos(angle), np.sin(angle)])
        d = np.maximum(d, 0.0)
        if np.linalg.norm(d) < 1e-8:
            d = np.abs(basis @ np.array([np.cos(angle), np.sin(angle)]))
        cols.append(d / np.linalg.norm(d))
    return np.stack(cols, axis=1)


def snmf_objective(v: np.ndarray, w: np.ndarray, h: np.ndarray, lambda_sparse: float) -> float:
    resid = v - w @ h
    return float((resid**2).sum() + lambda_sparse * h.sum())


def fit_stain_model(
    od: np.ndarray,
    lambda_sparse: float = 0.1,
    iterations: int = 200,
    seed: int = 0,
    return_objective: bool = False,
) -> StainModel | tuple[StainModel, list[float]]:
    """Sparse NMF of the OD matrix: min ||V - W.H||_F^2 + lambda * sum(H).

    V is the (3, N) transpose of the OD rows; W has unit-norm non-negative
    columns. Deterministic given the seed. The objective history (one value
    per full H+W iteration) is non-increasing.
    """
    od = np.asarray(od, dtype=np.float64)
    if od.ndim != 2 or od.shape[1] != 3:
        raise ValueError(f"OD matrix must be (N, 3), got {od.shape}")
    if np.unique(od, axis=0).shape[0] < 2:
        raise ValueError("degenerate OD input: fewer than 2 distinct rows")

    v = od.T  # (3, N)
    n = v.shape[1]
    rng = np.random.default_rng(seed)
    w = _init_color_matrix(od)
    h = rng.uniform(0.1, 1.0, size=(2, n)) * max(od.mean(), _EPS)

    history = [snmf_objective(v, w, h, lambda_sparse)]
    for _ in range(iterations):
        wtv = w.T @ v
        wtwh = (w.T @ w) @ h
        h = h * wtv / (wtwh + lambda_sparse / 2.0 + _EPS)

        vht = v @ h.T  # (3, 2)
        rht = w @ (h @ h.T)  # reconstruction (W.H).H^T
        num = vht + w * np.sum(w * rht, axis=0, keepdims=True)
        den = rht + w * np.sum(w * vht, axis=0, keepdims=True)
        w = w * num / (den + _EPS)
        norms = np.linalg.norm(w, axis=0)
        norms[norms < _EPS] = 1.0
        w = w / norms

        obj = snmf_objective(v, w, h, lambda_sparse)
        assert obj <= history[-1] * (1 + 1e-9) + 1e-9, (
            f"sparse NMF objective increased: {history[-1]} -> {obj}"
        )
        history.append(obj)

    w, h = _order_columns(w, h)
    model = StainModel(w, h)
    if return_objective:
        return model, history
    return model


def normalize_to_reference(
    source: np.ndarray, reference: np.ndarray, cfg: StainConfig = StainConfig()
) -> np.ndarray:
    """Recolor `source` to match the stain appearance of `reference`.

    Both images are stain-separated; each source concentration row is scaled
    by the ratio of the reference's to the source's high percentile
    (cfg.percentile), and tissue pixels are reconstructed with the reference
    stain-color matrix. Background pixels pass through unchanged. A source
    with no tissue pixels is returned unchanged; a reference with no tissue
    is an error.
    """
    source = require_image(source)
    reference = require_image(reference)

    ref_tissue = tissue_mask(reference, cfg.luminance_threshold)
    if not ref_tissue.any():
        raise ValueError("reference image has no tissue pixels")
    src_tissue = tissue_mask(source, cfg.luminance_threshold)
    if not src_tissue.any():
        return source.copy()

    src_model = fit_stain_model(
        to_optical_density(source, src_tissue), cfg.lambda_sparse, cfg.iterations, cfg.seed
    )
    ref_model = fit_stain_model(
        to_optical_density(reference, ref_tissue), cfg.lambda_sparse, cfg.iterations, cfg.seed
    )

    src_p = np.percentile(src_model.concentrations, cfg.percentile, axis=1)
    ref_p = np.percentile(ref_model.concentrations, cfg.percentile, axis=1)
    factors = np.where(src_p > 1e-8, ref_p / np.maximum(src_p, 1e-8), 0.0)

    scaled = src_model.concentrations * factors[:, None]
    od_new = (ref_model.color_matrix @ scaled).T  # (N_tissue, 3)
    out = source.copy()
    out[src_tissue] = od_to_rgb(od_new)
    return out


def save_stain_model(model: StainModel, path) -> None:
    """Text format: one metadata line, then the six W entries column-major."""
    w = model.color_matrix
    cols = " ".join(f"{w[r, c]:.10f}" for c in range(2) for r in range(3))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("wsibench-stain 1\n")
        fh.write(cols + "\n")


def load_stain_model(path) -> StainModel:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        values = fh.readline().split()
    if len(header) != 2 or header[0] != "wsibench-stain":
        raise ValueError(f"{path}: not a stain model file")
    if len(values) != 6:
        raise ValueError(f"{path}: expected 6 stain matrix entries")
    w = np.array([float(x) for x in values], dtype=np.float64).reshape(2, 3).T
    return StainModel(w, np.zeros((2, 0)))
