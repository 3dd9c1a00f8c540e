"""Perceptual metrics with injectable feature extractors.

The math here is model-agnostic: callers supply the feature extractor
(a pretrained network in production, anything deterministic in tests)
and these functions handle normalization and distance. Two identities
worth stating because the test suite leans on them: the patch distance
of an image with itself is exactly zero, and the Fréchet distance
between a feature set and itself vanishes up to matrix-sqrt rounding.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.linalg

# maps one (c, h, w) image to a list of (c_l, h_l, w_l) feature maps
FeatureStack = Callable[[np.ndarray], Sequence[np.ndarray]]
# maps a stack of (n, c, h, w) images to (n, d) feature rows
FeatureRows = Callable[[np.ndarray], np.ndarray]


def _unit_channels(feat: np.ndarray, eps: float = 1e-10) -> np.ndarray:
    norm = np.sqrt(np.sum(feat * feat, axis=0, keepdims=True))
    return feat / (norm + eps)


def patch_distance(
    a: np.ndarray,
    b: np.ndarray,
    extractor: FeatureStack,
    weights: Sequence[float] | None = None,
) -> float:
    """LPIPS-style distance: per-layer mean squared gap between
    channel-normalized feature maps, summed over layers."""
    feats_a = extractor(a)
    feats_b = extractor(b)
    if len(feats_a) != len(feats_b):
        raise ValueError("extractor returned different layer counts")
    if weights is None:
        weights = [1.0] * len(feats_a)
    total = 0.0
    for w, fa, fb in zip(weights, feats_a, feats_b):
        if fa.shape != fb.shape:
            raise ValueError(f"layer shape mismatch: {fa.shape} vs {fb.shape}")
        diff = _unit_channels(fa) - _unit_channels(fb)
        total += w * float(np.mean(np.sum(diff * diff, axis=0)))
    return total


def gaussian_stats(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError("need at least two feature rows")
    return rows.mean(axis=0), np.cov(rows, rowvar=False)


def frechet_distance(
    mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray
) -> float:
    diff = mu_a - mu_b
    covmean = scipy.linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    return float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * covmean))


def fid(
    images_a: np.ndarray, images_b: np.ndarray, extractor: FeatureRows
) -> float:
    mu_a, cov_a = gaussian_stats(extractor(images_a))
    mu_b, cov_b = gaussian_stats(extractor(images_b))
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


def cosine_alignment(image_emb: np.ndarray, text_emb: np.ndarray) -> float:
    """CLIP-style score: cosine similarity of two embedding vectors."""
    a = np.asarray(image_emb, dtype=np.float64).ravel()
    b = np.asarray(text_emb, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm embedding")
    return float(a @ b / (na * nb))
