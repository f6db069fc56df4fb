import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from ensemble_denoise.errors import DimensionError, ImageIOError, ValidationError
from ensemble_denoise.imaging import (
    as_image,
    convolve_mirrored,
    decode_pgm,
    encode_pgm,
    extract_patch,
    filter_responses,
    filter_responses_adjoint,
    mirror_pad,
    mirror_pad_adjoint,
    read_image,
    write_image,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestValidation:
    def test_rejects_non_2d(self):
        with pytest.raises(DimensionError):
            as_image(np.zeros((2, 2, 2)))

    def test_rejects_empty(self):
        with pytest.raises(DimensionError):
            as_image(np.zeros((0, 3)))

    def test_rejects_nan(self):
        img = np.zeros((3, 3))
        img[1, 1] = np.nan
        with pytest.raises(ValidationError):
            as_image(img)

    def test_widens_integers(self):
        assert as_image(np.ones((2, 2), dtype=np.uint8)).dtype == np.float64


class TestMirrorPad:
    def test_edge_duplicating(self):
        row = np.array([[1.0, 2.0, 3.0]])
        assert mirror_pad(row, 2)[2].tolist() == [2, 1, 1, 2, 3, 3, 2]

    @pytest.mark.parametrize("shape,r", [((5, 7), 1), ((6, 4), 3), ((3, 3), 3), ((8, 8), 2)])
    def test_adjoint_dot_product(self, rng, shape, r):
        x = rng.normal(size=shape)
        y = rng.normal(size=(shape[0] + 2 * r, shape[1] + 2 * r))
        lhs = np.sum(mirror_pad(x, r) * y)
        rhs = np.sum(x * mirror_pad_adjoint(y, r))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestConvolve:
    def test_identity_kernel(self, rng):
        img = rng.normal(size=(6, 9))
        assert np.array_equal(convolve_mirrored(img, [[1.0]]), img)

    def test_flat_field(self, rng):
        k = rng.normal(size=(3, 3))
        out = convolve_mirrored(np.full((7, 5), 4.0), k)
        np.testing.assert_allclose(out, 4.0 * k.sum(), rtol=1e-12)

    def test_matches_loop_oracle(self, rng):
        img = rng.normal(size=(5, 5))
        k = rng.normal(size=(3, 3))
        np.testing.assert_allclose(convolve_mirrored(img, k), oracles.correlate(img, k), rtol=1e-12)

    def test_large_kernel_oracle(self, rng):
        img = rng.normal(size=(4, 6))
        k = rng.normal(size=(7, 7))
        np.testing.assert_allclose(convolve_mirrored(img, k), oracles.correlate(img, k), rtol=1e-12)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            convolve_mirrored(np.zeros((2, 5)), np.ones((5, 5)))

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError):
            convolve_mirrored(np.zeros((5, 5)), np.ones((2, 2)))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (5, 6), elements=finite), arrays(np.float64, (5, 6), elements=finite),
           st.floats(-10, 10))
    def test_linear_in_image(self, a, b, c):
        k = np.arange(9.0).reshape(3, 3) - 4.0
        lhs = convolve_mirrored(a + c * b, k)
        rhs = convolve_mirrored(a, k) + c * convolve_mirrored(b, k)
        np.testing.assert_allclose(lhs, rhs, atol=1e-7)

    def test_bank_adjoint(self, rng):
        img = rng.normal(size=(6, 7))
        filters = rng.normal(size=(3, 5, 5))
        resp = rng.normal(size=(3, 6, 7))
        lhs = np.sum(filter_responses(img, filters) * resp)
        rhs = np.sum(img * filter_responses_adjoint(resp, filters))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestExtractPatch:
    def test_constant(self):
        assert np.array_equal(extract_patch(np.full((5, 5), 3.0), (2, 2), 1), np.full((3, 3), 3.0))

    def test_corner_mirror(self):
        a, b, c, d = 1.0, 2.0, 3.0, 4.0
        got = extract_patch([[a, b], [c, d]], (0, 0), 1)
        assert got.tolist() == [[a, a, b], [a, a, b], [c, c, d]]

    def test_radius_zero(self, rng):
        img = rng.normal(size=(4, 4))
        assert extract_patch(img, (2, 1), 0).tolist() == [[img[2, 1]]]

    def test_matches_oracle_beyond_image(self, rng):
        img = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(extract_patch(img, (0, 3), 5), oracles.patch(img, 0, 3, 5))

    def test_out_of_range_center(self):
        with pytest.raises(IndexError):
            extract_patch(np.zeros((3, 3)), (3, 0), 1)


class TestPgm:
    def test_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(7, 5)).astype(float)
        path = tmp_path / "x.pgm"
        write_image(img, path)
        assert np.array_equal(read_image(path), img)

    def test_clamp(self, tmp_path):
        path = tmp_path / "c.pgm"
        write_image([[300.0, -4.2, 12.5]], path)
        assert read_image(path).tolist() == [[255.0, 0.0, 13.0]]

    def test_header_comments(self):
        data = b"P5\n# made by hand\n2 1\n# another\n255\n\x05\x06"
        assert decode_pgm(data).tolist() == [[5.0, 6.0]]

    def test_wrong_magic(self):
        with pytest.raises(ImageIOError, match="P5"):
            decode_pgm(b"P2\n1 1\n255\n0")

    def test_maxval(self):
        with pytest.raises(ImageIOError, match="maxval"):
            decode_pgm(b"P5\n1 1\n65535\n\x00\x00")

    def test_truncated_raster_names_file(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(encode_pgm(np.zeros((4, 4)))[:-3])
        with pytest.raises(ImageIOError, match="t.pgm"):
            read_image(path)

    def test_truncated_header(self):
        with pytest.raises(ImageIOError):
            decode_pgm(b"P5\n4")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageIOError):
            read_image(tmp_path / "absent.pgm")

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        write_image(np.zeros((2, 2)), tmp_path / "a.pgm")
        assert os.listdir(tmp_path) == ["a.pgm"]

    def test_failed_write_leaves_nothing(self, tmp_path):
        with pytest.raises(ValidationError):
            write_image(np.array([[np.inf]]), tmp_path / "bad.pgm")
        assert os.listdir(tmp_path) == []

    def test_png(self, tmp_path, rng):
        Image = pytest.importorskip("PIL.Image")
        img = rng.integers(0, 256, size=(6, 4)).astype(np.uint8)
        Image.fromarray(img, mode="L").save(tmp_path / "x.png")
        assert np.array_equal(read_image(tmp_path / "x.png"), img.astype(float))
