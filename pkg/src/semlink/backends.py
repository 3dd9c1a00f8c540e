"""Pluggable model backends.

Images are (C, H, W) float64 arrays in [0, 1]. The default "toy" suite is a
set of cheap deterministic stand-ins with the same call surfaces as real
models: an 8x8 mean-pool encoder, a nearest-neighbor decoder, a blur-based
denoiser, and a template captioner over a small fixed vocabulary. They make
whole-link behavior testable on a laptop; real models plug in through the
same protocols (see :mod:`semlink.bridge`).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .blocks import DEFAULT_DIMS, TensorDims
from .inpaint import DiffusionSchedule

POOL = 8  # spatial downsampling factor between pixel and latent grids


@runtime_checkable
class Encoder(Protocol):
    def encode(self, image: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class Decoder(Protocol):
    def decode(self, latent: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class Captioner(Protocol):
    def caption(self, image: np.ndarray) -> str: ...


@runtime_checkable
class Denoiser(Protocol):
    def denoise(
        self,
        z_n: np.ndarray,
        level: int,
        caption: str,
        guidance: float,
        masked_latent: np.ndarray,
        lifted_mask: np.ndarray,
    ) -> np.ndarray: ...


@dataclass(frozen=True)
class BackendSuite:
    encoder: Encoder
    decoder: Decoder
    denoiser: Denoiser
    captioner: Captioner
    dims: TensorDims
    schedule: DiffusionSchedule


def _check_image(image: np.ndarray, dims: TensorDims) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != dims.image_shape:
        raise ValueError(f"expected image shape {dims.image_shape}, got {image.shape}")
    return image


class ToyEncoder:
    """Mean-pool each 8x8 patch; channel 3 carries pooled luma."""

    def __init__(self, dims: TensorDims = DEFAULT_DIMS):
        if dims.h != POOL * dims.h_lat or dims.w != POOL * dims.w_lat:
            raise ValueError("pixel grid must be 8x the latent grid")
        if dims.c != 3 or dims.c_lat != 4:
            raise ValueError("toy encoder expects 3 image / 4 latent channels")
        self.dims = dims

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = _check_image(image, self.dims)
        d = self.dims
        pooled = image.reshape(3, d.h_lat, POOL, d.w_lat, POOL).mean(axis=(2, 4))
        luma = 0.299 * pooled[0] + 0.587 * pooled[1] + 0.114 * pooled[2]
        return np.concatenate([pooled, luma[None]], axis=0)


class ToyDecoder:
    """Nearest-neighbor upsample of the three color channels."""

    def __init__(self, dims: TensorDims = DEFAULT_DIMS):
        self.dims = dims

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64)
        if latent.shape != self.dims.latent_shape:
            raise ValueError(
                f"expected latent shape {self.dims.latent_shape}, got {latent.shape}"
            )
        up = latent[:3].repeat(POOL, axis=1).repeat(POOL, axis=2)
        return np.clip(up, 0.0, 1.0)


def _box_blur(plane_stack: np.ndarray) -> np.ndarray:
    """3x3 box blur per channel with edge replication."""
    padded = np.pad(plane_stack, ((0, 0), (1, 1), (1, 1)), mode="edge")
    acc = np.zeros_like(plane_stack)
    for di in range(3):
        for dj in range(3):
            acc += padded[:, di : di + plane_stack.shape[1], dj : dj + plane_stack.shape[2]]
    return acc / 9.0


def _caption_field(caption: str, shape: tuple[int, ...]) -> np.ndarray:
    """Deterministic unit-variance sign field keyed by the caption text."""
    digest = hashlib.sha256(caption.encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0


class ToyGaussianDenoiser:
    """Predicts noise toward a blurred completion of the known cells.

    The implied clean-image guess is a 3x3 blur of the received partial
    latent; with positive conditioning weight a small caption-keyed sign
    field is mixed in, so different captions pull reconstructions toward
    measurably different fixed points while zero weight ignores the text.
    """

    def __init__(self, schedule: DiffusionSchedule, caption_gain: float = 1e-3):
        self.schedule = schedule
        self.caption_gain = caption_gain

    def denoise(self, z_n, level, caption, guidance, masked_latent, lifted_mask):
        mu = _box_blur(masked_latent)
        if guidance > 0.0:
            mu = mu + self.caption_gain * guidance * _caption_field(caption, mu.shape)
        ab = self.schedule.alpha_bar[level]
        return (z_n - np.sqrt(ab) * mu) / np.sqrt(1.0 - ab)


class ExactDenoiser:
    """Oracle that knows the true latent; for sampler exactness tests only."""

    def __init__(self, z_true: np.ndarray, schedule: DiffusionSchedule):
        self.z_true = np.asarray(z_true, dtype=np.float64)
        self.schedule = schedule

    def denoise(self, z_n, level, caption, guidance, masked_latent, lifted_mask):
        ab = self.schedule.alpha_bar[level]
        return (z_n - np.sqrt(ab) * self.z_true) / np.sqrt(1.0 - ab)


_BRIGHTNESS = ("dark", "medium", "bright")
_HUES = ("red", "yellow", "green", "cyan", "blue", "magenta")


def _region_color(region: np.ndarray) -> str:
    r, g, b = region[0].mean(), region[1].mean(), region[2].mean()
    if max(r, g, b) - min(r, g, b) < 0.08:
        return "gray"
    hue = np.degrees(np.arctan2(np.sqrt(3) * (g - b), 2 * r - g - b)) % 360.0
    return _HUES[int(((hue + 30.0) % 360.0) // 60.0)]


class ToyCaptioner:
    """Template captions from coarse brightness and per-half dominant hue.

    Sixteen-word vocabulary, fixed sentence skeleton. Crucially the output
    is a pure function of image statistics, so a reconstruction that nails
    the palette earns back the exact reference caption.
    """

    def __init__(self, dims: TensorDims = DEFAULT_DIMS):
        self.dims = dims

    def caption(self, image: np.ndarray) -> str:
        image = _check_image(image, self.dims)
        luma = 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
        mean = float(luma.mean())
        brightness = _BRIGHTNESS[min(2, int(mean * 3.0))]
        half = image.shape[1] // 2
        top = _region_color(image[:, :half, :])
        bottom = _region_color(image[:, half:, :])
        return f"a {brightness} image with {top} top and {bottom} bottom"


def toy_suite(
    dims: TensorDims = DEFAULT_DIMS, schedule: DiffusionSchedule | None = None
) -> BackendSuite:
    if schedule is None:
        schedule = DiffusionSchedule.default()
    return BackendSuite(
        encoder=ToyEncoder(dims),
        decoder=ToyDecoder(dims),
        denoiser=ToyGaussianDenoiser(schedule),
        captioner=ToyCaptioner(dims),
        dims=dims,
        schedule=schedule,
    )
