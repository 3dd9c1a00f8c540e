"""Fidelity metrics against a windowed brute-force reference."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semlink.metrics import WINDOW_SIDE, WINDOW_SIGMA, K1, K2, psnr, ssim


def ref_ssim_plane(x, y):
    """Window-by-window structural similarity, written for clarity not speed."""
    half = (WINDOW_SIDE - 1) / 2.0
    coords = np.arange(WINDOW_SIDE) - half
    g = np.exp(-(coords**2) / (2.0 * WINDOW_SIGMA**2))
    win = np.outer(g, g)
    win /= win.sum()
    c1, c2 = K1**2, K2**2
    h, w = x.shape
    vals = []
    for i in range(h - WINDOW_SIDE + 1):
        for j in range(w - WINDOW_SIDE + 1):
            px = x[i : i + WINDOW_SIDE, j : j + WINDOW_SIDE]
            py = y[i : i + WINDOW_SIDE, j : j + WINDOW_SIDE]
            mx = (win * px).sum()
            my = (win * py).sum()
            vx = (win * px * px).sum() - mx * mx
            vy = (win * py * py).sum() - my * my
            cov = (win * px * py).sum() - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(vals))


class TestSsim:
    def test_identical_images_score_one(self):
        rng = np.random.default_rng(0)
        img = rng.random((3, 32, 32))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_matches_windowed_reference(self):
        rng = np.random.default_rng(1)
        x = rng.random((2, 20, 20))
        y = np.clip(x + rng.normal(scale=0.1, size=x.shape), 0, 1)
        expect = np.mean([ref_ssim_plane(x[c], y[c]) for c in range(2)])
        assert ssim(x, y) == pytest.approx(expect, abs=1e-10)

    def test_matches_scikit_image(self):
        skimage = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(2)
        x = rng.random((3, 24, 24))
        y = np.clip(x + rng.normal(scale=0.2, size=x.shape), 0, 1)
        expect = np.mean(
            [
                skimage.structural_similarity(
                    x[c],
                    y[c],
                    win_size=11,
                    gaussian_weights=True,
                    sigma=1.5,
                    use_sample_covariance=False,
                    data_range=1.0,
                )
                for c in range(3)
            ]
        )
        assert ssim(x, y) == pytest.approx(expect, abs=1e-9)

    def test_degrades_with_noise(self):
        rng = np.random.default_rng(3)
        x = rng.random((1, 24, 24))
        small = np.clip(x + rng.normal(scale=0.02, size=x.shape), 0, 1)
        large = np.clip(x + rng.normal(scale=0.4, size=x.shape), 0, 1)
        assert ssim(x, small) > ssim(x, large)

    def test_rejects_mismatched_or_tiny(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((1, 16, 16)), np.zeros((1, 17, 16)))
        with pytest.raises(ValueError):
            ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.random((1, 16, 16))
        y = rng.random((1, 16, 16))
        a, b = ssim(x, y), ssim(y, x)
        assert a == pytest.approx(b, abs=1e-12)
        assert -1.0 <= a <= 1.0 + 1e-12


class TestPsnr:
    def test_identical_is_infinite(self):
        img = np.full((1, 12, 12), 0.25)
        assert psnr(img, img) == math.inf

    def test_known_value(self):
        a = np.zeros((1, 10, 10))
        b = np.full((1, 10, 10), 0.5)
        # MSE = 0.25 against unit range -> 10 log10(4)
        assert psnr(a, b) == pytest.approx(10 * math.log10(4.0), abs=1e-12)

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(4)
        x = rng.random((3, 16, 16))
        y1 = x + 0.01
        y2 = x + 0.1
        assert psnr(x, y1) > psnr(x, y2)
