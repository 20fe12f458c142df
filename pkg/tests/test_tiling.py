"""Tiling: downsampling, grid construction, stitching, thresholding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsibench.tiling import (
    PatchGrid,
    downsample,
    downsample_mask,
    extract_patches,
    make_grid,
    read_grid_manifest,
    resize_bilinear,
    stitch_dense,
    stitch_patch_labels,
    threshold,
    upsample_mask,
    write_grid_manifest,
)


def brute_force_downsample(image, factor):
    h, w = image.shape[:2]
    oh = -(-h // factor)
    ow = -(-w // factor)
    out = np.zeros((oh, ow, 3), dtype=np.uint8)
    for oy in range(oh):
        for ox in range(ow):
            block = image[oy * factor : (oy + 1) * factor, ox * factor : (ox + 1) * factor]
            mean = block.reshape(-1, 3).astype(np.float64).mean(axis=0)
            out[oy, ox] = np.floor(mean + 0.5).astype(np.uint8)
    return out


class TestDownsample:
    def test_factor_one_is_identity(self):
        rng = np.random.default_rng(0)
        image = rng.integers(0, 256, (13, 9, 3), dtype=np.uint8)
        assert np.array_equal(downsample(image, 1), image)

    def test_sixteenfold_dims(self):
        image = np.full((4096, 4096, 3), 137, dtype=np.uint8)
        out = downsample(image, 16)
        assert out.shape == (256, 256, 3)
        assert np.array_equal(out, np.full((256, 256, 3), 137, dtype=np.uint8))

    def test_ceil_dims_on_remainder(self):
        image = np.zeros((50, 34, 3), dtype=np.uint8)
        assert downsample(image, 16).shape == (4, 3, 3)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 24), st.integers(1, 24), st.integers(1, 8), st.integers(0, 2**31))
    def test_matches_block_mean_oracle(self, w, h, factor, seed):
        rng = np.random.default_rng(seed)
        image = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        assert np.array_equal(downsample(image, factor), brute_force_downsample(image, factor))

    def test_composition_dims(self):
        image = np.zeros((96, 96, 3), dtype=np.uint8)
        a = downsample(downsample(image, 4), 2)
        b = downsample(image, 8)
        assert a.shape == b.shape

    def test_invalid_factor(self):
        with pytest.raises(ValueError):
            downsample(np.zeros((4, 4, 3), dtype=np.uint8), 0)

    def test_mask_majority(self):
        mask = np.array([[1, 1, 0, 0], [1, 0, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]], dtype=np.uint8)
        out = downsample_mask(mask, 2)
        # top-left block has 3/4 ones, top-right 0/4, bottom-right 4/4
        assert out.tolist() == [[1, 0], [0, 1]]

    def test_mask_majority_tie_goes_to_one(self):
        mask = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        assert downsample_mask(mask, 2).tolist() == [[1]]


class TestMakeGrid:
    def test_exact_division(self):
        grid = make_grid(512, 512, 256, 256)
        assert grid.origins == ((0, 0), (256, 0), (0, 256), (256, 256))

    def test_clamped_final_row_and_column(self):
        grid = make_grid(500, 500, 256, 256)
        assert grid.origins == ((0, 0), (244, 0), (0, 244), (244, 244))

    def test_single_window(self):
        grid = make_grid(256, 256, 256, 256)
        assert grid.origins == ((0, 0),)

    def test_patch_too_large(self):
        with pytest.raises(ValueError):
            make_grid(100, 300, 128, 128)

    def test_bad_stride(self):
        with pytest.raises(ValueError):
            make_grid(100, 100, 32, 0)
        with pytest.raises(ValueError):
            make_grid(100, 100, 32, 33)

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_full_coverage_and_containment(self, data):
        w = data.draw(st.integers(1, 40), label="w")
        h = data.draw(st.integers(1, 40), label="h")
        size = data.draw(st.integers(1, min(w, h)), label="size")
        stride = data.draw(st.integers(1, size), label="stride")
        grid = make_grid(w, h, size, stride)
        covered = np.zeros((h, w), dtype=bool)
        for x, y in grid.origins:
            assert 0 <= x <= w - size and 0 <= y <= h - size
            covered[y : y + size, x : x + size] = True
        assert covered.all()

    def test_manifest_round_trip(self, tmp_path):
        grid = make_grid(500, 300, 128, 100)
        path = tmp_path / "grid.txt"
        write_grid_manifest(grid, path)
        loaded = read_grid_manifest(path)
        assert loaded == grid

    def test_manifest_rejects_outside_origin(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("100 100 50 50\n0 0\n90 0\n")
        with pytest.raises(ValueError):
            read_grid_manifest(path)


class TestExtractPatches:
    def test_single_pixel_patches_row_major(self):
        image = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        grid = make_grid(2, 2, 1, 1)
        patches = extract_patches(image, grid)
        assert [p.reshape(3).tolist() for p in patches] == [
            [0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11],
        ]

    def test_full_image_window(self):
        rng = np.random.default_rng(1)
        image = rng.integers(0, 256, (7, 7, 3), dtype=np.uint8)
        grid = make_grid(7, 7, 7, 7)
        assert np.array_equal(extract_patches(image, grid)[0], image)

    def test_partition_round_trip(self):
        rng = np.random.default_rng(2)
        image = rng.integers(0, 256, (12, 20, 3), dtype=np.uint8)
        grid = make_grid(20, 12, 4, 4)
        rebuilt = np.zeros_like(image)
        for (x, y), patch in zip(grid.origins, extract_patches(image, grid)):
            rebuilt[y : y + 4, x : x + 4] = patch
        assert np.array_equal(rebuilt, image)

    def test_grid_image_mismatch(self):
        grid = make_grid(8, 8, 4, 4)
        with pytest.raises(ValueError):
            extract_patches(np.zeros((9, 8, 3), dtype=np.uint8), grid)


def brute_force_vote(grid, labels):
    ones = np.zeros((grid.image_height, grid.image_width), dtype=int)
    total = np.zeros_like(ones)
    p = grid.patch_size
    for (x, y), lab in zip(grid.origins, labels):
        for yy in range(y, y + p):
            for xx in range(x, x + p):
                total[yy, xx] += 1
                ones[yy, xx] += int(lab)
    return (2 * ones >= total).astype(np.uint8)


class TestStitchPatchLabels:
    def test_block_diagonal(self):
        grid = make_grid(512, 512, 256, 256)
        mask = stitch_patch_labels(grid, [1, 0, 0, 1])
        assert mask[:256, :256].all() and mask[256:, 256:].all()
        assert not mask[:256, 256:].any() and not mask[256:, :256].any()

    def test_all_zero(self):
        grid = make_grid(64, 64, 16, 16)
        assert stitch_patch_labels(grid, [0] * len(grid)).sum() == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_overlapping_votes_match_oracle(self, seed):
        rng = np.random.default_rng(seed)
        grid = make_grid(21, 17, 8, 5)
        labels = rng.integers(0, 2, len(grid))
        assert np.array_equal(stitch_patch_labels(grid, labels), brute_force_vote(grid, labels))

    def test_tie_goes_to_tumor(self):
        grid = PatchGrid(4, 4, 4, 4, ((0, 0), (0, 0)))
        assert stitch_patch_labels(grid, [1, 0]).all()

    def test_length_mismatch(self):
        grid = make_grid(8, 8, 4, 4)
        with pytest.raises(ValueError):
            stitch_patch_labels(grid, [1, 0])

    def test_exact_inverse_when_non_overlapping(self):
        rng = np.random.default_rng(3)
        grid = make_grid(24, 16, 8, 8)
        labels = rng.integers(0, 2, len(grid))
        mask = stitch_patch_labels(grid, labels)
        for (x, y), lab in zip(grid.origins, labels):
            assert (mask[y : y + 8, x : x + 8] == lab).all()


class TestStitchDense:
    def test_plain_mosaic(self):
        grid = make_grid(8, 4, 4, 4)
        maps = [np.full((4, 4), v) for v in (0.1, 0.9)]
        out = stitch_dense(grid, maps)
        assert np.allclose(out[:, :4], 0.1) and np.allclose(out[:, 4:], 0.9)

    def test_full_overlap_mean(self):
        grid = PatchGrid(4, 4, 4, 4, ((0, 0), (0, 0)))
        out = stitch_dense(grid, [np.full((4, 4), 0.2), np.full((4, 4), 0.6)])
        assert np.allclose(out, 0.4)

    @pytest.mark.parametrize("seed", range(4))
    def test_random_overlap_matches_accumulation_oracle(self, seed):
        rng = np.random.default_rng(seed)
        grid = make_grid(19, 13, 6, 4)
        maps = [rng.random((6, 6)) for _ in grid.origins]
        acc = np.zeros((13, 19))
        cnt = np.zeros((13, 19))
        for (x, y), pm in zip(grid.origins, maps):
            for yy in range(6):
                for xx in range(6):
                    acc[y + yy, x + xx] += pm[yy, xx]
                    cnt[y + yy, x + xx] += 1
        assert np.allclose(stitch_dense(grid, maps), acc / cnt, atol=1e-12, rtol=0)

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(9)
        grid = make_grid(15, 15, 5, 3)
        maps = [rng.random((5, 5)) for _ in grid.origins]
        out = stitch_dense(grid, maps)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_size_mismatch(self):
        grid = make_grid(8, 8, 4, 4)
        with pytest.raises(ValueError):
            stitch_dense(grid, [np.zeros((3, 3))] * len(grid))


class TestThreshold:
    def test_zero_threshold_all_ones(self):
        assert threshold(np.array([[0.0, 0.3]]), 0.0).tolist() == [[1, 1]]

    def test_above_max_all_zeros(self):
        assert threshold(np.array([[0.2, 0.9]]), 0.9001).tolist() == [[0, 0]]

    def test_boundary_inclusive(self):
        assert threshold(np.array([[0.3, 0.7]]), 0.5).tolist() == [[0, 1]]


class TestResize:
    def test_upsample_mask_exact_blocks(self):
        mask = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        up = upsample_mask(mask, 4, 4)
        assert up.tolist() == [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]]

    def test_upsample_mask_stays_binary(self):
        rng = np.random.default_rng(4)
        mask = rng.integers(0, 2, (5, 7), dtype=np.uint8)
        up = upsample_mask(mask, 23, 11)
        assert up.shape == (11, 23)
        assert set(np.unique(up)) <= {0, 1}

    def test_bilinear_resize_constant(self):
        image = np.full((5, 9, 3), 77, dtype=np.uint8)
        out = resize_bilinear(image, 13, 7)
        assert out.shape == (7, 13, 3)
        assert (out == 77).all()
