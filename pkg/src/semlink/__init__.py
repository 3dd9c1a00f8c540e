"""Desk-scale simulator for semantic image links.

A transmitter sends a short caption plus a random subset of latent blocks;
the receiver fills the missing blocks by mask-projected diffusion sampling
and keeps requesting more blocks until the caption it reads back from its
own reconstruction is close enough to the one it was sent.
"""

from .backends import BackendSuite, toy_suite
from .blocks import DEFAULT_DIMS, BlockMask, TensorDims
from .control import (
    ReplaySchedule,
    SessionConfig,
    SessionResult,
    drive_session,
    rouge_l,
)
from .inpaint import DiffusionSchedule, run_inpainting, strength
from .metrics import psnr, ssim
from .phy import AwgnChannel, ChannelConfig
from .session import Transmitter, run_end_to_end

__version__ = "0.1.0"

__all__ = [
    "BackendSuite",
    "BlockMask",
    "ChannelConfig",
    "AwgnChannel",
    "DEFAULT_DIMS",
    "DiffusionSchedule",
    "ReplaySchedule",
    "SessionConfig",
    "SessionResult",
    "TensorDims",
    "Transmitter",
    "drive_session",
    "psnr",
    "rouge_l",
    "run_end_to_end",
    "run_inpainting",
    "ssim",
    "strength",
    "toy_suite",
    "__version__",
]
