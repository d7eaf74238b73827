import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphforge.imaging import (
    EmptyInkError,
    GrayRaster,
    HeightMismatchError,
    InkThreshold,
    OverlapTooLargeError,
    UnreadableImageError,
    ZeroDimensionError,
    hjoin,
    hjoin_overlap,
    load_image,
    resize,
    save_image,
    tight_crop,
    to_grayscale,
)

from conftest import random_inked_raster


def raster_strategy(min_side=1, max_side=12):
    return st.tuples(
        st.integers(min_side, max_side),
        st.integers(min_side, max_side),
        st.integers(0, 2**31 - 1),
    ).map(lambda t: GrayRaster(np.random.default_rng(t[2]).random((t[0], t[1]))))


class TestGrayRaster:
    def test_rejects_zero_dimension(self):
        with pytest.raises(ZeroDimensionError):
            GrayRaster(np.ones((0, 4)))
        with pytest.raises(ZeroDimensionError):
            GrayRaster(np.ones((4, 0)))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GrayRaster(np.full((2, 2), 1.5))
        with pytest.raises(ValueError):
            GrayRaster(np.full((2, 2), -0.1))

    def test_immutable(self):
        r = GrayRaster(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            r.pixels[0, 0] = 1.0


class TestToGrayscale:
    def test_white_stays_white(self):
        out = to_grayscale(np.ones((3, 4, 3)))
        assert np.array_equal(out.pixels, np.ones((3, 4)))

    def test_black_stays_black(self):
        out = to_grayscale(np.zeros((3, 4, 3)))
        assert np.array_equal(out.pixels, np.zeros((3, 4)))

    def test_pure_red_weight(self):
        rgb = np.zeros((2, 2, 3))
        rgb[..., 0] = 1.0
        out = to_grayscale(rgb)
        assert np.allclose(out.pixels, 0.299, atol=1e-15)

    def test_zero_dimension(self):
        with pytest.raises(ZeroDimensionError):
            to_grayscale(np.ones((0, 3, 3)))

    def test_preserves_shape(self, rng):
        rgb = rng.random((5, 7, 3))
        assert to_grayscale(rgb).pixels.shape == (5, 7)


class TestTightCrop:
    def test_single_ink_pixel(self):
        px = np.ones((10, 10))
        px[7, 5] = 0.0  # (x=5, y=7)
        out = tight_crop(GrayRaster(px))
        assert out.width == 1 and out.height == 1
        assert out.pixels[0, 0] == 0.0

    def test_two_pixel_bounding_box(self):
        # Ink at (x=2, y=3) and (x=8, y=6): brute-force min/max coordinates
        # give columns 2..8 and rows 3..6.
        px = np.ones((12, 12))
        ink = [(2, 3), (8, 6)]
        for x, y in ink:
            px[y, x] = 0.1
        xs = [x for x, _ in ink]
        ys = [y for _, y in ink]
        assert (max(xs) - min(xs) + 1, max(ys) - min(ys) + 1) == (7, 4)
        out = tight_crop(GrayRaster(px))
        assert (out.width, out.height) == (7, 4)

    def test_all_white_raises(self):
        with pytest.raises(EmptyInkError):
            tight_crop(GrayRaster(np.ones((5, 5))))

    def test_threshold_semantics(self):
        px = np.full((3, 3), 0.5)
        with pytest.raises(EmptyInkError):
            tight_crop(GrayRaster(px), InkThreshold(0.5))  # strict less-than

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=100)
    def test_idempotent(self, seed):
        r = random_inked_raster(np.random.default_rng(seed))
        once = tight_crop(r)
        twice = tight_crop(once)
        assert np.array_equal(once.pixels, twice.pixels)


class TestResize:
    def test_constant_stays_constant(self):
        r = GrayRaster(np.full((3, 5), 0.5))
        out = resize(r, 9, 2)
        assert np.allclose(out.pixels, 0.5, atol=1e-15)
        assert (out.width, out.height) == (9, 2)

    def test_same_size_is_identity(self, rng):
        r = GrayRaster(rng.random((6, 9)))
        out = resize(r, 9, 6)
        assert np.allclose(out.pixels, r.pixels, atol=1e-12)

    def test_two_to_four_hand_bilinear(self):
        # Hand evaluation: output x falls at source 0, 1/3, 2/3, 1 so the
        # interpolated row is exactly [0, 1/3, 2/3, 1].
        r = GrayRaster(np.array([[0.0, 1.0]]))
        out = resize(r, 4, 1)
        assert np.allclose(out.pixels[0], [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-15)
        assert np.all(np.diff(out.pixels[0]) >= 0)

    def test_zero_target(self):
        r = GrayRaster(np.zeros((2, 2)))
        with pytest.raises(ZeroDimensionError):
            resize(r, 0, 4)

    @given(raster_strategy(), st.integers(1, 9), st.integers(1, 9))
    @settings(max_examples=50)
    def test_range_preserved(self, r, w, h):
        out = resize(r, w, h)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


class TestHjoin:
    def test_two_glyph_strip(self):
        a = GrayRaster(np.zeros((128, 128)))
        b = GrayRaster(np.ones((128, 128)))
        out = hjoin(a, b)
        assert (out.width, out.height) == (256, 128)

    def test_zero_width_rejected_at_construction(self):
        with pytest.raises(ZeroDimensionError):
            GrayRaster(np.ones((4, 0)))

    def test_right_pixels_shifted(self, rng):
        a = GrayRaster(rng.random((4, 3)))
        b = GrayRaster(rng.random((4, 5)))
        out = hjoin(a, b)
        for c in range(a.width, out.width):
            assert np.array_equal(out.pixels[:, c], b.pixels[:, c - a.width])

    def test_height_mismatch(self):
        with pytest.raises(HeightMismatchError):
            hjoin(GrayRaster(np.ones((3, 3)) * 0.5), GrayRaster(np.ones((4, 3)) * 0.5))

    @given(raster_strategy(), st.integers(0, 2**31 - 1))
    @settings(max_examples=60)
    def test_width_additivity(self, a, seed):
        b = GrayRaster(np.random.default_rng(seed).random((a.height, 4)))
        assert hjoin(a, b).width == a.width + b.width

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40)
    def test_associativity(self, seed):
        g = np.random.default_rng(seed)
        h = int(g.integers(1, 8))
        a, b, c = (GrayRaster(g.random((h, int(g.integers(1, 8))))) for _ in range(3))
        left = hjoin(hjoin(a, b), c)
        right = hjoin(a, hjoin(b, c))
        assert np.array_equal(left.pixels, right.pixels)


class TestHjoinOverlap:
    def test_overlap_width(self):
        a = GrayRaster(np.ones((128, 128)) * 0.5)
        b = GrayRaster(np.ones((128, 128)) * 0.5)
        assert hjoin_overlap(a, b, 4).width == 252

    def test_white_left_band_passes_right_through(self, rng):
        a = GrayRaster(np.ones((6, 8)))
        b = GrayRaster(rng.random((6, 8)))
        out = hjoin_overlap(a, b, 3)
        assert np.array_equal(out.pixels[:, 5:8], b.pixels[:, :3])

    def test_black_band_stays_black(self):
        a = GrayRaster(np.zeros((4, 6)))
        b = GrayRaster(np.zeros((4, 6)))
        out = hjoin_overlap(a, b, 2)
        assert np.array_equal(out.pixels, np.zeros((4, 10)))

    def test_min_blend(self, rng):
        a = GrayRaster(rng.random((5, 7)))
        b = GrayRaster(rng.random((5, 7)))
        k = 3
        out = hjoin_overlap(a, b, k)
        band = np.minimum(a.pixels[:, -k:], b.pixels[:, :k])
        assert np.array_equal(out.pixels[:, a.width - k : a.width], band)

    def test_overlap_too_large(self):
        a = GrayRaster(np.ones((3, 4)) * 0.5)
        b = GrayRaster(np.ones((3, 6)) * 0.5)
        with pytest.raises(OverlapTooLargeError):
            hjoin_overlap(a, b, 4)
        with pytest.raises(OverlapTooLargeError):
            hjoin_overlap(a, b, 0)

    def test_height_mismatch(self):
        with pytest.raises(HeightMismatchError):
            hjoin_overlap(
                GrayRaster(np.ones((3, 5)) * 0.5), GrayRaster(np.ones((4, 5)) * 0.5), 2
            )

    @given(raster_strategy(min_side=3), st.integers(0, 2**31 - 1))
    @settings(max_examples=60)
    def test_width_identity(self, a, seed):
        g = np.random.default_rng(seed)
        b = GrayRaster(g.random((a.height, int(g.integers(3, 10)))))
        k = int(g.integers(1, min(a.width, b.width)))
        assert hjoin_overlap(a, b, k).width == a.width + b.width - k


class TestPngIo:
    def test_roundtrip_quantized(self, tmp_path, rng):
        data = np.round(rng.random((9, 13)) * 255) / 255.0
        r = GrayRaster(data)
        save_image(r, tmp_path / "x.png")
        back = load_image(tmp_path / "x.png")
        assert np.array_equal(back.pixels, r.pixels)

    def test_rgb_loads_via_luminance(self, tmp_path):
        from PIL import Image

        arr = np.zeros((4, 4, 3), dtype=np.uint8)
        arr[..., 0] = 255
        Image.fromarray(arr, "RGB").save(tmp_path / "red.png")
        out = load_image(tmp_path / "red.png")
        assert np.allclose(out.pixels, 0.299, atol=1e-12)

    def test_unreadable(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(UnreadableImageError):
            load_image(bad)
