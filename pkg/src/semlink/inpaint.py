"""Mask-projected DDIM sampling over the latent grid.

The receiver owns a partial latent: cells inside transmitted blocks are
trusted, cells inside withheld blocks are unknown. Sampling runs a
deterministic DDIM ladder for the unknown cells and, after every step,
overwrites the known cells with their noised-to-level counterparts so the
trajectory never drifts off the received data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .backends import Denoiser


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative signal-retention curve sampled on the working ladder.

    ``alpha_bar[n]`` is the product of per-step alphas after n forward steps;
    index 0 is the clean end and must equal exactly 1 so that a final
    reverse step lands on the model mean with no residual scaling.
    """

    alpha_bar: np.ndarray

    def __post_init__(self) -> None:
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 2:
            raise ValueError("alpha_bar must be a 1-d array with at least 2 entries")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1.0")
        if np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ValueError("alpha_bar entries must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def n_steps(self) -> int:
        return self.alpha_bar.size - 1

    @classmethod
    def default(
        cls,
        n_steps: int = 50,
        base_steps: int = 1000,
        beta_start: float = 1e-4,
        beta_end: float = 2e-2,
    ) -> "DiffusionSchedule":
        """Linear-beta base schedule subsampled to a short working ladder."""
        betas = np.linspace(beta_start, beta_end, base_steps)
        base = np.cumprod(1.0 - betas)
        picks = (np.arange(1, n_steps + 1) * base_steps) // n_steps - 1
        return cls(np.concatenate([[1.0], base[picks]]))


def strength(snr_db: float, masked_fraction: float) -> float:
    """How far up the noise ladder sampling starts, in [0, 1].

    Rises with the share of missing blocks and falls as the channel gets
    cleaner, saturating at full strength.
    """
    if not 0.0 <= masked_fraction <= 1.0:
        raise ValueError("masked_fraction must lie in [0, 1]")
    return min(1.0, math.sqrt(masked_fraction) * (1.0 - 0.1 * math.tanh(snr_db - 10.0)))


def step_count(s: float, n_steps: int) -> int:
    """Reverse steps actually run for strength ``s`` on a ladder of ``n_steps``."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("strength must lie in [0, 1]")
    return math.ceil(s * n_steps)


def forward_map(
    z0: np.ndarray,
    level: int,
    schedule: DiffusionSchedule,
    eps: np.ndarray | None = None,
) -> np.ndarray:
    """Push a clean latent to noise level ``level``.

    With ``eps`` omitted the map is deterministic (scaling only), which keeps
    receiver replays reproducible; pass explicit noise for stochastic runs.
    """
    ab = schedule.alpha_bar[level]
    out = math.sqrt(ab) * z0
    if eps is not None:
        out = out + math.sqrt(1.0 - ab) * eps
    return out


def ddim_step(
    z_n: np.ndarray, eps_hat: np.ndarray, level: int, schedule: DiffusionSchedule
) -> np.ndarray:
    """One deterministic reverse step from level ``level`` to ``level - 1``."""
    ab_n = schedule.alpha_bar[level]
    ab_prev = schedule.alpha_bar[level - 1]
    z0_hat = (z_n - math.sqrt(1.0 - ab_n) * eps_hat) / math.sqrt(ab_n)
    return math.sqrt(ab_prev) * z0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def project_known(
    z: np.ndarray, z_known_at_level: np.ndarray, lifted_mask: np.ndarray
) -> np.ndarray:
    """Overwrite trusted cells; mask entry 1 marks a cell to keep from ``z``.

    Uses a single element-wise select so kept cells are bit-identical to the
    sampler output and replaced cells bit-identical to the reference.
    """
    keep = lifted_mask.astype(bool)
    return np.where(keep[None, :, :], z, z_known_at_level)


def run_inpainting(
    z_received: np.ndarray,
    lifted_mask: np.ndarray,
    caption: str,
    guidance: float,
    s: float,
    schedule: DiffusionSchedule,
    denoiser: "Denoiser",
    init_noise: np.ndarray | None = None,
) -> np.ndarray:
    """Reconstruct a full latent from a partial one.

    ``z_received`` holds received coefficients at transmitted cells and zeros
    elsewhere; ``lifted_mask`` is the cell-level withheld map (1 = missing).
    The masked region is initialized with ``init_noise`` (zeros when None,
    the deterministic default; callers comparing guidance settings should
    pass the same draw to every branch), run down the DDIM ladder for
    ``ceil(s * n_steps)`` steps with conditioning weight ``guidance``, and
    re-projected onto the received cells after every step.
    """
    n_start = step_count(s, schedule.n_steps)
    keep = lifted_mask.astype(bool)[None, :, :]
    seed_noise = init_noise if init_noise is not None else np.zeros_like(z_received)
    z = np.where(keep, seed_noise, forward_map(z_received, n_start, schedule))
    for level in range(n_start, 0, -1):
        eps_hat = denoiser.denoise(z, level, caption, guidance, z_received, lifted_mask)
        z = ddim_step(z, eps_hat, level, schedule)
        z = project_known(z, forward_map(z_received, level - 1, schedule), lifted_mask)
    return z
