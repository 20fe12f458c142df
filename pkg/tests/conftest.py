"""Shared fixtures: small synthetic slides and trained reference models."""

from __future__ import annotations

import numpy as np
import pytest

from wsibench import backends as be
from wsibench.config import Config
from wsibench.imaging import SyntheticSpec, generate_synthetic_wsi
from wsibench.optim import TrainConfig
from wsibench.superpixel import SlicParams
from wsibench.tiling import downsample, downsample_mask


def small_spec(seed: int, size: int = 512) -> SyntheticSpec:
    return SyntheticSpec(
        width=size,
        height=size,
        blob_count=3,
        blob_radius_range=(size * 0.2, size * 0.3),
        seed=seed,
    )


@pytest.fixture(scope="session")
def small_slides():
    """Two training and two test slide/mask pairs at 512x512."""
    train = [generate_synthetic_wsi(small_spec(s)) for s in (11, 12)]
    test = [generate_synthetic_wsi(small_spec(s)) for s in (21, 22)]
    return {"train": train, "test": test}


@pytest.fixture(scope="session")
def small_train_config():
    return TrainConfig(batch_size=32, max_epochs=120, patience=15, seed=3)


@pytest.fixture(scope="session")
def small_models(small_slides, small_train_config):
    """Reference models trained on the small slides: patch (32 px at full
    res), superpixel and semantic (factor 4)."""
    from wsibench.features import (
        PIXEL_FEATURE_DIM,
        grid_feature_matrix,
        pixel_feature_maps,
    )
    from wsibench.superpixel import aggregate_features, slic, superpixel_ground_truth
    from wsibench.tiling import make_grid

    slic_params = SlicParams(k_target=256)
    xs_patch, ys_patch = [], []
    xs_sp, ys_sp = [], []
    xs_px, ys_px = [], []
    for image, mask in small_slides["train"]:
        grid = make_grid(image.shape[1], image.shape[0], 32, 32)
        xs_patch.append(grid_feature_matrix(image, grid.origins, 32))
        ys_patch.extend(
            1 if 2 * int(mask[y : y + 32, x : x + 32].sum()) > 32 * 32 else 0
            for x, y in grid.origins
        )
        working = downsample(image, 4)
        wmask = downsample_mask(mask, 4)
        spmap = slic(working, slic_params)
        xs_sp.append(aggregate_features(working, spmap))
        ys_sp.extend(superpixel_ground_truth(spmap, wmask))
        fmap = pixel_feature_maps(working)
        xs_px.append(fmap[::4, ::4].reshape(-1, PIXEL_FEATURE_DIM))
        ys_px.extend(wmask[::4, ::4].ravel())

    cfg = small_train_config
    patch_model, _ = be.train_feature_model(
        np.vstack(xs_patch), np.asarray(ys_patch, dtype=np.float64), "mlp", cfg
    )
    sp_model, _ = be.train_feature_model(
        np.vstack(xs_sp), np.asarray(ys_sp, dtype=np.float64), "mlp", cfg
    )
    px_model, _ = be.train_feature_model(
        np.vstack(xs_px), np.asarray(ys_px, dtype=np.float64), "linear", cfg
    )
    return {"patch": patch_model, "superpixel": sp_model, "semantic": px_model}


@pytest.fixture()
def base_config():
    cfg = Config()
    cfg.patch_size = 32
    cfg.slic = SlicParams(k_target=256)
    return cfg
