import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ensemble_denoise.errors import ValidationError
from ensemble_denoise.nlm import (
    DEFAULT_H_FACTOR,
    NlmParams,
    denoise_nlm,
    patch_distance,
    patch_kernel,
    pixel_weights,
)
from ensemble_denoise.noise import add_noise


def noisy_instance(seed, shape=(8, 8)):
    gen = np.random.default_rng(seed)
    clean = gen.uniform(40, 200, size=shape)
    return add_noise(clean, 20, seed)


class TestParams:
    def test_for_sigma(self):
        assert NlmParams.for_sigma(20).h == pytest.approx(DEFAULT_H_FACTOR * 20)

    @pytest.mark.parametrize("kw", [
        {"h": 0}, {"h": 1, "patch_radius": -1}, {"h": 1, "search_radius": 1, "patch_radius": 2},
        {"h": 1, "a": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            NlmParams(**kw)

    def test_kernel_normalized(self):
        assert patch_kernel(3, 1.0).sum() == pytest.approx(1.0, abs=1e-15)


class TestPatchDistance:
    def test_same_pixel(self, rng):
        img = rng.normal(size=(6, 6))
        assert patch_distance(img, (2, 3), (2, 3), NlmParams(h=1)) == 0.0

    def test_constant_image(self):
        img = np.full((6, 6), 9.0)
        assert patch_distance(img, (0, 0), (5, 4), NlmParams(h=1)) == 0.0

    def test_single_pixel_patch(self):
        img = np.array([[1.0, 4.0]])
        params = NlmParams(h=1, patch_radius=0, search_radius=1)
        assert patch_distance(img, (0, 0), (0, 1), params) == 9.0


class TestDenoise:
    def test_constant(self):
        img = np.full((10, 12), 77.0)
        np.testing.assert_allclose(denoise_nlm(img, NlmParams(h=5)), 77.0, rtol=1e-14)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_oracle(self, seed):
        img = noisy_instance(seed)
        params = NlmParams(h=26.0, patch_radius=1, search_radius=3)
        expected, _ = oracles.nlm(img, 1, 3, 26.0, 1.0)
        assert np.max(np.abs(denoise_nlm(img, params) - expected)) < 1e-10

    def test_oracle_non_square_wide_kernel(self):
        img = noisy_instance(5, (7, 9))
        params = NlmParams(h=40.0, patch_radius=2, search_radius=4, a=1.7)
        expected, _ = oracles.nlm(img, 2, 4, 40.0, 1.7)
        assert np.max(np.abs(denoise_nlm(img, params) - expected)) < 1e-10

    def test_huge_h_is_window_mean(self, rng):
        img = rng.uniform(0, 255, size=(9, 9))
        out = denoise_nlm(img, NlmParams(h=1e9, patch_radius=1, search_radius=2))
        expected = np.array([[img[max(0, y - 2):y + 3, max(0, x - 2):x + 3].mean() for x in range(9)]
                             for y in range(9)])
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_pixel_weights(self):
        img = noisy_instance(1)
        params = NlmParams(h=26.0, patch_radius=1, search_radius=3)
        out = denoise_nlm(img, params)
        for i in [(0, 0), (3, 4), (7, 2)]:
            w, rows, cols = pixel_weights(img, i, params)
            assert abs(w.sum() - 1.0) < 1e-12
            assert np.all(w > 0)
            assert np.dot(w, img[rows, cols]) == pytest.approx(out[i], abs=1e-10)

    def test_threads_bitwise(self, cameraman):
        img = add_noise(cameraman[:40, :40], 20, 0)
        params = NlmParams(h=26.0, search_radius=5)
        assert np.array_equal(denoise_nlm(img, params, threads=1, block_rows=8),
                              denoise_nlm(img, params, threads=8, block_rows=8))

    def test_reduces_noise(self, cameraman):
        noisy = add_noise(cameraman, 20, 1)
        out = denoise_nlm(noisy, NlmParams.for_sigma(20))
        assert np.mean((out - cameraman) ** 2) < 0.6 * np.mean((noisy - cameraman) ** 2)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.5, 3.0), st.floats(-50, 50))
    def test_equivariance(self, seed, scale, shift):
        img = noisy_instance(seed, (6, 6))
        params = NlmParams(h=25.0, patch_radius=1, search_radius=2)
        scaled = NlmParams(h=25.0 * scale, patch_radius=1, search_radius=2)
        out = denoise_nlm(img, params)
        np.testing.assert_allclose(denoise_nlm(scale * img + shift, scaled), scale * out + shift,
                                   atol=1e-8)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_within_input_range(self, seed):
        img = noisy_instance(seed, (6, 6))
        out = denoise_nlm(img, NlmParams(h=20.0, patch_radius=1, search_radius=2))
        assert img.min() - 1e-9 <= out.min() and out.max() <= img.max() + 1e-9
