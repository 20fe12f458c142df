"""Imaging core: PNG round-trips, synthetic slides, overlay rendering."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image as PILImage

from wsibench.errors import ImageFormatError
from wsibench.imaging import (
    SyntheticSpec,
    TextureParams,
    generate_synthetic_wsi,
    load_image,
    load_mask,
    render_overlay,
    sample_blobs,
    save_image,
    save_mask,
)


class TestPngRoundTrip:
    def test_known_2x2_pixels(self, tmp_path):
        image = np.array(
            [[(0, 0, 0), (255, 0, 0)], [(0, 255, 0), (0, 0, 255)]], dtype=np.uint8
        )
        path = tmp_path / "rt.png"
        save_image(image, path)
        assert np.array_equal(load_image(path), image)

    @settings(max_examples=25, deadline=None)
    @given(w=st.integers(1, 16), h=st.integers(1, 16), seed=st.integers(0, 2**32 - 1))
    def test_random_contents_bit_exact(self, tmp_path_factory, w, h, seed):
        rng = np.random.default_rng(seed)
        image = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        path = tmp_path_factory.mktemp("png") / "img.png"
        save_image(image, path)
        assert np.array_equal(load_image(path), image)

    def test_mask_round_trip(self, tmp_path):
        mask = (np.arange(20).reshape(4, 5) % 2).astype(np.uint8)
        path = tmp_path / "m.png"
        save_mask(mask, path)
        loaded = load_mask(path)
        assert np.array_equal(loaded, mask)
        assert PILImage.open(path).mode == "L"  # stored as 8-bit gray {0, 255}

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "broken.png"
        save_image(np.zeros((8, 8, 3), dtype=np.uint8), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_16bit_png_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        arr16 = (np.arange(16, dtype=np.uint32).reshape(4, 4) * 4096).astype(np.uint16)
        PILImage.fromarray(arr16, mode="I;16").save(path)
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_wrong_channel_count_rejected(self, tmp_path):
        path = tmp_path / "rgba.png"
        PILImage.fromarray(np.zeros((4, 4, 4), dtype=np.uint8), mode="RGBA").save(path)
        with pytest.raises(ImageFormatError):
            load_image(path)
        gray = tmp_path / "gray.png"
        PILImage.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(gray)
        with pytest.raises(ImageFormatError):
            load_image(gray)


class TestSyntheticWsi:
    def test_zero_blobs_gives_empty_mask(self):
        spec = SyntheticSpec(64, 64, 0, (10, 12), seed=1)
        _, mask = generate_synthetic_wsi(spec)
        assert mask.sum() == 0

    def test_deterministic_in_seed(self):
        spec = SyntheticSpec(96, 80, 3, (10, 20), seed=42)
        a_img, a_mask = generate_synthetic_wsi(spec)
        b_img, b_mask = generate_synthetic_wsi(spec)
        assert np.array_equal(a_img, b_img)
        assert np.array_equal(a_mask, b_mask)

    def test_different_seed_differs(self):
        a, _ = generate_synthetic_wsi(SyntheticSpec(64, 64, 2, (10, 15), seed=1))
        b, _ = generate_synthetic_wsi(SyntheticSpec(64, 64, 2, (10, 15), seed=2))
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("radius", [30.0, 55.0])
    def test_single_blob_area_matches_disk(self, radius):
        spec = SyntheticSpec(256, 256, 1, (radius, radius), seed=9)
        _, mask = generate_synthetic_wsi(spec)
        expected = math.pi * radius**2
        assert abs(int(mask.sum()) - expected) <= 0.02 * expected

    @pytest.mark.parametrize("seed", [0, 7, 123])
    def test_mask_matches_point_in_disk_oracle(self, seed):
        spec = SyntheticSpec(48, 40, 3, (6, 12), seed=seed)
        _, mask = generate_synthetic_wsi(spec)
        blobs = sample_blobs(spec, np.random.default_rng(spec.seed))
        for y in range(spec.height):
            for x in range(spec.width):
                inside = any(
                    (x - cx) ** 2 + (y - cy) ** 2 <= r * r for cx, cy, r in blobs
                )
                assert bool(mask[y, x]) == inside

    def test_texture_split_follows_mask(self):
        tumor = TextureParams((80, 40, 120), noise_amp=0.0)
        background = TextureParams((240, 240, 240), noise_amp=0.0)
        spec = SyntheticSpec(64, 64, 1, (20, 20), tumor, background, seed=4)
        image, mask = generate_synthetic_wsi(spec)
        assert np.array_equal(image[mask == 1], np.tile((80, 40, 120), (int(mask.sum()), 1)))
        assert np.array_equal(
            image[mask == 0], np.tile((240, 240, 240), (int((1 - mask).sum()), 1))
        )

    def test_degenerate_spec_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic_wsi(SyntheticSpec(0, 64, 1, (5, 5), seed=0))
        with pytest.raises(ValueError):
            generate_synthetic_wsi(SyntheticSpec(64, 64, 1, (40, 40), seed=0))

    def test_indistinguishable_textures_rejected(self):
        tex = TextureParams((100, 100, 100), noise_amp=30.0)
        spec = SyntheticSpec(64, 64, 1, (10, 10), tex, TextureParams((105, 100, 100), 30.0), seed=0)
        with pytest.raises(ValueError):
            spec.validate()


class TestRenderOverlay:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.image = rng.integers(0, 256, size=(10, 12, 3), dtype=np.uint8)
        self.mask = (rng.random((10, 12)) < 0.4).astype(np.uint8)

    def test_alpha_zero_is_identity(self):
        out = render_overlay(self.image, self.mask, (255, 0, 0), 0.0)
        assert np.array_equal(out, self.image)

    def test_empty_mask_is_identity(self):
        out = render_overlay(self.image, np.zeros_like(self.mask), (0, 255, 0), 0.7)
        assert np.array_equal(out, self.image)

    def test_alpha_one_full_mask_is_constant(self):
        out = render_overlay(self.image, np.ones_like(self.mask), (10, 200, 30), 1.0)
        assert np.array_equal(out, np.broadcast_to((10, 200, 30), out.shape))

    def test_blend_rounds_half_up(self):
        image = np.full((1, 1, 3), 1, dtype=np.uint8)
        mask = np.ones((1, 1), dtype=np.uint8)
        # 0.5*1 + 0.5*2 = 1.5 -> rounds up to 2
        out = render_overlay(image, mask, (2, 2, 2), 0.5)
        assert out.tolist() == [[[2, 2, 2]]]

    def test_untouched_outside_mask(self):
        out = render_overlay(self.image, self.mask, (0, 0, 255), 0.5)
        assert np.array_equal(out[self.mask == 0], self.image[self.mask == 0])
        expected = np.floor(
            0.5 * self.image[self.mask == 1].astype(np.float64)
            + 0.5 * np.array([0, 0, 255])
            + 0.5
        )
        assert np.array_equal(out[self.mask == 1], expected.astype(np.uint8))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            render_overlay(self.image, self.mask[:5], (255, 0, 0), 0.5)
