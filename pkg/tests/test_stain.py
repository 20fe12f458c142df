"""Stain separation: OD conversion, sparse NMF, reference normalization."""

import math

import numpy as np
import pytest
from scipy import ndimage

from wsibench.stain import (
    StainConfig,
    StainModel,
    fit_stain_model,
    load_stain_model,
    normalize_to_reference,
    od_to_rgb,
    save_stain_model,
    snmf_objective,
    tissue_mask,
    to_optical_density,
)

HE_LIKE = np.array([[0.65, 0.07], [0.70, 0.99], [0.29, 0.11]])
HE_LIKE = HE_LIKE / np.linalg.norm(HE_LIKE, axis=0)


def planted_od(seed, n=2000, pure_frac=0.1, w=HE_LIKE):
    """OD rows from known factors, with some pure-stain pixels per column."""
    rng = np.random.default_rng(seed)
    h = rng.uniform(0.0, 1.5, (2, n))
    n_pure = int(n * pure_frac)
    h[0, :n_pure] = 0.0
    h[1, n_pure : 2 * n_pure] = 0.0
    return (w @ h).T, h


def synthetic_tissue_image(seed, size=96, w=HE_LIKE):
    """Two-stain tissue rendering with smooth concentration fields."""
    rng = np.random.default_rng(seed)
    fields = []
    for _ in range(2):
        field = ndimage.gaussian_filter(rng.normal(size=(size, size)), 8.0)
        field = (field - field.min()) / max(field.ptp(), 1e-9)
        fields.append(0.15 + 1.1 * field)
    h = np.stack([f.ravel() for f in fields])
    od = (w @ h).T
    return od_to_rgb(od).reshape(size, size, 3)


def column_angles_deg(a, b):
    """Best column matching angle (degrees) between two 3x2 matrices."""
    options = []
    for perm in ((0, 1), (1, 0)):
        angles = [
            math.degrees(
                math.acos(np.clip(abs(a[:, i] @ b[:, j]), 0.0, 1.0))
            )
            for i, j in zip((0, 1), perm)
        ]
        options.append(max(angles))
    return min(options)


class TestOpticalDensity:
    def test_white_is_zero_and_background(self):
        image = np.full((4, 4, 3), 255, dtype=np.uint8)
        forced = to_optical_density(image, np.ones((4, 4), dtype=bool))
        assert np.allclose(forced, 0.0)
        assert not tissue_mask(image).any()
        with pytest.raises(ValueError):
            to_optical_density(image)

    def test_half_intensity_value(self):
        image = np.full((1, 1, 3), 127, dtype=np.uint8)
        od = to_optical_density(image, np.ones((1, 1), dtype=bool))
        assert np.allclose(od, math.log10(2), atol=1e-9)

    def test_black_value(self):
        image = np.zeros((1, 1, 3), dtype=np.uint8)
        od = to_optical_density(image, np.ones((1, 1), dtype=bool))
        assert np.allclose(od, math.log10(256), atol=1e-9)

    def test_strictly_decreasing_in_intensity(self):
        ramp = np.arange(256, dtype=np.uint8).reshape(1, 256)
        image = np.stack([ramp, ramp, ramp], axis=-1)
        od = to_optical_density(image, np.ones((1, 256), dtype=bool))[:, 0]
        assert (np.diff(od) < 0).all()
        assert od.min() >= 0.0 and od.max() <= math.log10(256) + 1e-12

    def test_rgb_od_rgb_round_trip_exact(self):
        ramp = np.arange(256, dtype=np.uint8).reshape(1, 256)
        image = np.stack([ramp, ramp, ramp], axis=-1)
        od = to_optical_density(image, np.ones((1, 256), dtype=bool))
        assert np.array_equal(od_to_rgb(od), image.reshape(-1, 3))


class TestFitStainModel:
    def test_recovers_planted_factors(self):
        od, _ = planted_od(seed=0)
        model = fit_stain_model(od, lambda_sparse=0.0, iterations=300, seed=1)
        assert column_angles_deg(model.color_matrix, HE_LIKE) < 5.0

    def test_single_stain_second_column_negligible(self):
        rng = np.random.default_rng(2)
        h1 = rng.uniform(0.1, 1.5, 1500)
        od = np.outer(h1, HE_LIKE[:, 0])
        model = fit_stain_model(od, lambda_sparse=0.1, iterations=300, seed=3)
        w, h = model.color_matrix, model.concentrations
        energies = [((np.outer(w[:, j], h[j])) ** 2).sum() for j in range(2)]
        assert min(energies) < 0.01 * sum(energies)

    def test_objective_non_increasing(self):
        od, _ = planted_od(seed=4)
        _, history = fit_stain_model(
            od, lambda_sparse=0.1, iterations=100, seed=5, return_objective=True
        )
        for before, after in zip(history, history[1:]):
            assert after <= before * (1 + 1e-9) + 1e-9

    def test_deterministic_given_seed(self):
        od, _ = planted_od(seed=6)
        a = fit_stain_model(od, iterations=50, seed=7)
        b = fit_stain_model(od, iterations=50, seed=7)
        assert np.array_equal(a.color_matrix, b.color_matrix)
        assert np.array_equal(a.concentrations, b.concentrations)

    def test_unit_norm_non_negative_columns(self):
        od, _ = planted_od(seed=8)
        model = fit_stain_model(od, iterations=80, seed=9)
        assert np.allclose(np.linalg.norm(model.color_matrix, axis=0), 1.0, atol=1e-9)
        assert (model.color_matrix >= 0).all()
        assert (model.concentrations >= 0).all()

    def test_column_zero_absorbs_more_blue(self):
        od, _ = planted_od(seed=10)
        model = fit_stain_model(od, iterations=80, seed=11)
        w = model.color_matrix
        assert w[2, 0] >= w[2, 1]

    def test_degenerate_input_rejected(self):
        od = np.tile([0.3, 0.2, 0.1], (10, 1))
        with pytest.raises(ValueError):
            fit_stain_model(od)

    def test_reconstruction_quality_on_clean_data(self):
        od, _ = planted_od(seed=12)
        model = fit_stain_model(od, lambda_sparse=0.0, iterations=300, seed=13)
        obj = snmf_objective(od.T, model.color_matrix, model.concentrations, 0.0)
        assert obj < 1e-4 * (od**2).sum()


class TestNormalizeToReference:
    def test_no_tissue_source_returned_unchanged(self):
        source = np.full((8, 8, 3), 255, dtype=np.uint8)
        reference = synthetic_tissue_image(seed=20)
        out = normalize_to_reference(source, reference)
        assert np.array_equal(out, source)

    def test_no_tissue_reference_is_error(self):
        source = synthetic_tissue_image(seed=21)
        reference = np.full((8, 8, 3), 255, dtype=np.uint8)
        with pytest.raises(ValueError):
            normalize_to_reference(source, reference)

    def test_self_normalization_close(self):
        image = synthetic_tissue_image(seed=22)
        out = normalize_to_reference(image, image)
        tissue = tissue_mask(image)
        diff = np.abs(out[tissue].astype(int) - image[tissue].astype(int))
        assert diff.max() <= 10

    def test_refit_matches_reference_stains(self):
        source = synthetic_tissue_image(seed=23)
        reference = synthetic_tissue_image(seed=24)
        cfg = StainConfig(iterations=300)
        out = normalize_to_reference(source, reference, cfg)
        ref_model = fit_stain_model(
            to_optical_density(reference), cfg.lambda_sparse, cfg.iterations, cfg.seed
        )
        out_model = fit_stain_model(
            to_optical_density(out), cfg.lambda_sparse, cfg.iterations, cfg.seed
        )
        assert column_angles_deg(out_model.color_matrix, ref_model.color_matrix) < 10.0

    def test_idempotent_within_two_levels(self):
        source = synthetic_tissue_image(seed=25)
        reference = synthetic_tissue_image(seed=26)
        cfg = StainConfig(iterations=300)
        once = normalize_to_reference(source, reference, cfg)
        twice = normalize_to_reference(once, reference, cfg)
        tissue = tissue_mask(once)
        diff = np.abs(twice[tissue].astype(int) - once[tissue].astype(int))
        assert diff.max() <= 2

    def test_background_passes_through(self):
        image = synthetic_tissue_image(seed=27).copy()
        image[:2, :] = 255  # white border, excluded from tissue
        reference = synthetic_tissue_image(seed=28)
        out = normalize_to_reference(image, reference)
        assert np.array_equal(out[:2, :], image[:2, :])


class TestStainModelSerialization:
    def test_round_trip(self, tmp_path):
        od, _ = planted_od(seed=30)
        model = fit_stain_model(od, iterations=60, seed=31)
        path = tmp_path / "model.stain"
        save_stain_model(model, path)
        loaded = load_stain_model(path)
        assert np.allclose(loaded.color_matrix, model.color_matrix, atol=1e-9)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.stain"
        path.write_text("something else\n1 2 3 4 5 6\n")
        with pytest.raises(ValueError):
            load_stain_model(path)
