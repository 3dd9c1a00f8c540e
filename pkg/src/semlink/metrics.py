"""Image fidelity metrics.

Both metrics take (C, H, W) float64 images on a [0, 1] scale. SSIM follows
the standard Gaussian-window formulation: 11x11 window, sigma 1.5,
stabilizers K1 = 0.01 and K2 = 0.03 on dynamic range L = 1, statistics
compared only where the window fits entirely inside the image, averaged
over windows and then channels.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve

WINDOW_SIDE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DYNAMIC_RANGE = 1.0


def _gaussian_window() -> np.ndarray:
    half = (WINDOW_SIDE - 1) / 2.0
    coords = np.arange(WINDOW_SIDE) - half
    g = np.exp(-(coords**2) / (2.0 * WINDOW_SIGMA**2))
    window = np.outer(g, g)
    return window / window.sum()


_WINDOW = _gaussian_window()


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ValueError("expected (channels, height, width)")
    return a, b


def _ssim_plane(x: np.ndarray, y: np.ndarray) -> float:
    c1 = (K1 * DYNAMIC_RANGE) ** 2
    c2 = (K2 * DYNAMIC_RANGE) ** 2
    win = _WINDOW

    def smooth(plane: np.ndarray) -> np.ndarray:
        # The window is separable and symmetric; direct convolution keeps
        # the arithmetic deterministic and close to the windowed definition.
        return convolve(plane, win, mode="valid", method="direct")

    mu_x = smooth(x)
    mu_y = smooth(y)
    xx = smooth(x * x)
    yy = smooth(y * y)
    xy = smooth(x * y)

    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y

    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity across channels."""
    a, b = _check_pair(a, b)
    if a.shape[1] < WINDOW_SIDE or a.shape[2] < WINDOW_SIDE:
        raise ValueError(f"image smaller than the {WINDOW_SIDE}x{WINDOW_SIDE} window")
    return float(np.mean([_ssim_plane(a[c], b[c]) for c in range(a.shape[0])]))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DYNAMIC_RANGE**2 / mse)
