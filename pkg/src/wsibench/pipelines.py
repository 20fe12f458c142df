"""The four end-to-end segmentation strategies.

Each pipeline maps (image, backend, config) to (mask, TimingRecord) and
guarantees the output mask has exactly the input image's dimensions. Patch
classification runs at full resolution; the superpixel, semantic, and prompt
strategies run on a 16x-downsampled working image, mirroring the resolution
split of the benchmarked setups. All four report the same stage names
(tiling, features, inference, reconstruction) so timings are comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import backends as be
from . import features as feat
from .color import saturation
from .errors import BackendError, PipelineError
from .imaging import require_image, require_mask
from .stain import StainConfig, normalize_to_reference
from .superpixel import SlicParams, aggregate_features, paint_labels, slic
from .tiling import (
    downsample,
    extract_patches,
    make_grid,
    resize_bilinear,
    resize_nearest,
    stitch_dense,
    stitch_patch_labels,
    threshold,
    upsample_mask,
)
from .util import ordered_map

STRATEGIES = ("patch", "superpixel", "semantic", "prompt")
STAGES = ("tiling", "features", "inference", "reconstruction")

_DEFAULT_FACTORS = {"patch": 1, "superpixel": 16, "semantic": 16, "prompt": 16}


@dataclass(frozen=True)
class PipelineConfig:
    strategy: str
    resolution_factor: int | None = None  # None -> strategy default (1 or 16)
    patch_size: int = 256
    semantic_stride: int = 224
    decision_threshold: float = 0.5
    tissue_threshold: float = 0.05  # mean patch saturation below this = background
    slic: SlicParams = field(default_factory=lambda: SlicParams(k_target=256))
    stain: StainConfig = field(default_factory=StainConfig)
    prompt_window: int = 16
    prompt_working_size: int = 448
    workers: int = 1
    seed: int = 0

    def factor(self) -> int:
        if self.resolution_factor is not None:
            if self.resolution_factor < 1:
                raise ValueError("resolution_factor must be >= 1")
            return self.resolution_factor
        return _DEFAULT_FACTORS[self.strategy]

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.decision_threshold <= 1.0:
            raise ValueError("decision_threshold must be in [0, 1]")
        if self.strategy == "semantic" and not 1 <= self.semantic_stride <= self.patch_size:
            raise ValueError("semantic_stride must be in [1, patch_size]")
        self.factor()


@dataclass(frozen=True)
class TimingRecord:
    """Per-stage wall-clock seconds; stage names are shared across strategies."""

    stages: dict[str, float]
    total: float

    def validate(self) -> None:
        if any(v < 0 for v in self.stages.values()) or self.total < 0:
            raise ValueError("timings must be non-negative")


class _StageClock:
    def __init__(self):
        self.stages = {name: 0.0 for name in STAGES}
        self._t0 = time.perf_counter()

    def timed(self, name: str):
        clock = self

        class _Ctx:
            def __enter__(self):
                self._start = time.perf_counter()

            def __exit__(self, *exc):
                clock.stages[name] += time.perf_counter() - self._start
                return False

        return _Ctx()

    def record(self) -> TimingRecord:
        return TimingRecord(self.stages, time.perf_counter() - self._t0)


def is_tissue_patch(patch: np.ndarray, tissue_threshold: float) -> bool:
    return float(saturation(patch).mean()) >= tissue_threshold


def run_patch_pipeline(image, backend: be.Backend, cfg: PipelineConfig):
    """Classify fixed-size patches and reconstruct the mask from their labels.

    Background patches (mean saturation below cfg.tissue_threshold) are
    skipped and labeled 0. Backend failures carry the patch index.
    """
    image = require_image(image)
    cfg.validate()
    ik = backend.descriptor.input_kind
    if ik not in ("image-patch", "feature-vector"):
        raise ValueError(f"patch pipeline cannot use input_kind {ik!r}")
    clock = _StageClock()
    h, w = image.shape[:2]
    factor = cfg.factor()

    with clock.timed("tiling"):
        working = downsample(image, factor) if factor > 1 else image
        grid = make_grid(working.shape[1], working.shape[0], cfg.patch_size, cfg.patch_size)
        patches = extract_patches(working, grid)
        tissue = [is_tissue_patch(p, cfg.tissue_threshold) for p in patches]
        kept = [i for i, t in enumerate(tissue) if t]

    feats = None
    if ik == "feature-vector":
        with clock.timed("features"):
            kept_origins = [grid.origins[i] for i in kept]
            feats = feat.grid_feature_matrix(working, kept_origins, cfg.patch_size)

    labels = np.zeros(len(grid), dtype=np.uint8)
    with clock.timed("inference"):
        if kept:
            if ik == "feature-vector":
                try:
                    probs = be.predict(backend, feats)
                except BackendError as exc:
                    raise PipelineError(f"patch backend failed: {exc}") from exc
            else:

                def _score(i: int) -> float:
                    try:
                        return float(np.mean(be.predict(backend, patches[i])))
                    except BackendError as exc:
                        raise PipelineError(f"patch {i}: backend failed: {exc}") from exc

                probs = np.asarray(ordered_map(_score, kept, cfg.workers))
            labels[kept] = (probs >= cfg.decision_threshold).astype(np.uint8)

    with clock.timed("reconstruction"):
        mask = stitch_patch_labels(grid, labels)
        if factor > 1:
            mask = upsample_mask(mask, w, h)
    return mask, clock.record()


def run_superpixel_pipeline(image, backend: be.Backend, cfg: PipelineConfig):
    """SLIC the downsampled slide, classify per-superpixel features, paint labels."""
    image = require_image(image)
    cfg.validate()
    if backend.descriptor.input_kind != "feature-vector":
        raise ValueError("superpixel pipeline requires a feature-vector backend")
    clock = _StageClock()
    h, w = image.shape[:2]

    with clock.timed("tiling"):
        working = downsample(image, cfg.factor())
        spmap = slic(working, cfg.slic)
    with clock.timed("features"):
        matrix = aggregate_features(working, spmap)
    with clock.timed("inference"):
        try:
            probs = be.predict(backend, matrix)
        except BackendError as exc:
            raise PipelineError(f"superpixel backend failed: {exc}") from exc
        labels = (np.asarray(probs) >= cfg.decision_threshold).astype(np.uint8)
    with clock.timed("reconstruction"):
        mask = upsample_mask(paint_labels(spmap, labels), w, h)
    return mask, clock.record()


def run_semantic_pipeline(image, backend: be.Backend, cfg: PipelineConfig):
    """Dense per-pixel prediction on overlapping tiles of the downsampled slide."""
    image = require_image(image)
    cfg.validate()
    if backend.descriptor.input_kind != "image-patch":
        raise ValueError("semantic pipeline requires an image-patch (dense) backend")
    clock = _StageClock()
    h, w = image.shape[:2]

    with clock.timed("tiling"):
        working = downsample(image, cfg.factor())
        wh, ww = working.shape[:2]
        size = min(cfg.patch_size, wh, ww)
        stride = min(cfg.semantic_stride, size)
        grid = make_grid(ww, wh, size, stride)
        tiles = extract_patches(working, grid)

    with clock.timed("inference"):

        def _dense(item):
            i, tile = item
            try:
                pm = np.asarray(be.predict(backend, tile), dtype=np.float64)
            except BackendError as exc:
                raise PipelineError(f"tile {i}: backend failed: {exc}") from exc
            if pm.shape != tile.shape[:2]:
                raise PipelineError(
                    f"tile {i}: backend returned map {pm.shape}, expected {tile.shape[:2]}"
                )
            return pm

        maps = ordered_map(_dense, list(enumerate(tiles)), cfg.workers)

    with clock.timed("reconstruction"):
        prob = stitch_dense(grid, maps)
        mask = upsample_mask(threshold(prob, cfg.decision_threshold), w, h)
    return mask, clock.record()


def run_prompt_pipeline(image, prompt_image, prompt_mask, backend: be.Backend, cfg: PipelineConfig):
    """Stain-normalize the query to the prompt and complete its mask in-context."""
    image = require_image(image)
    prompt_image = require_image(prompt_image)
    prompt_mask = require_mask(prompt_mask)
    if prompt_image.shape[:2] != prompt_mask.shape:
        raise ValueError("prompt image and prompt mask dims differ")
    cfg.validate()
    clock = _StageClock()
    h, w = image.shape[:2]
    side = cfg.prompt_working_size

    with clock.timed("tiling"):
        factor = cfg.factor()
        query = downsample(image, factor)
        prompt = downsample(prompt_image, factor)
        pmask = resize_nearest(prompt_mask, prompt.shape[1], prompt.shape[0])

    with clock.timed("features"):
        try:
            query = normalize_to_reference(query, prompt, cfg.stain)
        except ValueError as exc:
            raise PipelineError(f"stain normalization failed: {exc}") from exc
        query = resize_bilinear(query, side, side)
        prompt = resize_bilinear(prompt, side, side)
        pmask = resize_nearest(pmask, side, side)

    with clock.timed("inference"):
        if backend.descriptor.kind == "nn-transfer" and backend.descriptor.window != cfg.prompt_window:
            backend = be.Backend(replace(backend.descriptor, window=cfg.prompt_window))
        try:
            small = be.in_context_predict(backend, prompt, pmask, query)
        except BackendError as exc:
            raise PipelineError(f"prompt backend failed: {exc}") from exc

    with clock.timed("reconstruction"):
        mask = resize_nearest(small, w, h)
    return mask, clock.record()


def run_pipeline(strategy, image, backend, cfg, prompt_image=None, prompt_mask=None):
    """Dispatch a strategy by name; prompt runs need the example pair."""
    if strategy == "patch":
        return run_patch_pipeline(image, backend, cfg)
    if strategy == "superpixel":
        return run_superpixel_pipeline(image, backend, cfg)
    if strategy == "semantic":
        return run_semantic_pipeline(image, backend, cfg)
    if strategy == "prompt":
        if prompt_image is None or prompt_mask is None:
            raise ValueError("prompt strategy requires prompt_image and prompt_mask")
        return run_prompt_pipeline(image, prompt_image, prompt_mask, backend, cfg)
    raise ValueError(f"unknown strategy {strategy!r}")
