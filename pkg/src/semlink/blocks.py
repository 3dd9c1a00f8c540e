"""Latent block algebra: partitioning, masks, rate accounting, block payloads.

Block indices are 0-based ``(i, j)`` pairs over the ``N_H x N_W`` block grid,
row-major. A mask entry of 1 marks a block as withheld (to be inpainted at
the receiver), 0 marks it for transmission.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

BlockIndex = tuple[int, int]


@dataclass(frozen=True)
class TensorDims:
    """Image (c, h, w) and latent (c_lat, h_lat, w_lat) grid sizes."""

    c: int
    h: int
    w: int
    c_lat: int
    h_lat: int
    w_lat: int

    def __post_init__(self) -> None:
        for name in ("c", "h", "w", "c_lat", "h_lat", "w_lat"):
            if getattr(self, name) <= 0:
                raise ValueError(f"dimension {name} must be positive")

    @property
    def pixel_numel(self) -> int:
        return self.c * self.h * self.w

    @property
    def latent_numel(self) -> int:
        return self.c_lat * self.h_lat * self.w_lat

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.c, self.h, self.w)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.c_lat, self.h_lat, self.w_lat)


#: Reference configuration: 3x512x512 images, 4x64x64 latents.
DEFAULT_DIMS = TensorDims(3, 512, 512, 4, 64, 64)


@dataclass(frozen=True)
class BlockMask:
    """Binary block-level mask (1 = withheld) with its block side length."""

    grid: np.ndarray
    block_side: int

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=np.uint8)
        if grid.ndim != 2:
            raise ValueError("mask grid must be 2-D")
        if not np.isin(grid, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        if self.block_side <= 0:
            raise ValueError("block_side must be positive")
        object.__setattr__(self, "grid", grid)

    @property
    def n_h(self) -> int:
        return self.grid.shape[0]

    @property
    def n_w(self) -> int:
        return self.grid.shape[1]

    @property
    def n_blocks(self) -> int:
        return self.grid.size

    @property
    def n_withheld(self) -> int:
        return int(self.grid.sum())

    @classmethod
    def from_withheld(
        cls, n_h: int, n_w: int, block_side: int, withheld: Iterable[BlockIndex]
    ) -> "BlockMask":
        grid = np.zeros((n_h, n_w), dtype=np.uint8)
        for i, j in withheld:
            grid[i, j] = 1
        return cls(grid, block_side)


@dataclass(frozen=True)
class IndexSets:
    """Disjoint transmitted / withheld block index sets partitioning the grid."""

    transmitted: frozenset[BlockIndex]
    withheld: frozenset[BlockIndex]


@dataclass(frozen=True)
class RateReport:
    """Withheld ratio d, sending rate q = 1 - d, and the pixel-domain
    compression ratio kappa = (latent numel / pixel numel) * q."""

    d: float
    q: float
    kappa: float


def partition_dims(dims: TensorDims, block_side: int) -> tuple[int, int, int]:
    """Block-grid shape (n_h, n_w, n) for a latent split into square blocks."""
    if block_side <= 0:
        raise ValueError("block side must be positive")
    if dims.h_lat % block_side or dims.w_lat % block_side:
        raise ValueError(
            f"block side {block_side} does not divide latent grid "
            f"{dims.h_lat}x{dims.w_lat}"
        )
    n_h = dims.h_lat // block_side
    n_w = dims.w_lat // block_side
    return n_h, n_w, n_h * n_w


def lift_mask(mask: BlockMask) -> np.ndarray:
    """Expand the block mask to the latent spatial grid (Kronecker lift)."""
    ones = np.ones((mask.block_side, mask.block_side), dtype=np.uint8)
    return np.kron(mask.grid, ones)


def rate_report(mask: BlockMask, dims: TensorDims) -> RateReport:
    partition_dims(dims, mask.block_side)  # validates divisibility
    d = mask.n_withheld / mask.n_blocks
    q = 1.0 - d
    kappa = dims.latent_numel / dims.pixel_numel * q
    return RateReport(d=d, q=q, kappa=kappa)


def split_sets(mask: BlockMask) -> IndexSets:
    transmitted = frozenset(zip(*np.nonzero(mask.grid == 0)))
    withheld = frozenset(zip(*np.nonzero(mask.grid == 1)))
    return IndexSets(
        transmitted=frozenset((int(i), int(j)) for i, j in transmitted),
        withheld=frozenset((int(i), int(j)) for i, j in withheld),
    )


def extract_blocks(
    latent: np.ndarray, indices: Sequence[BlockIndex], block_side: int
) -> np.ndarray:
    """Gather blocks in the order of ``indices``; shape (k, c_lat, l, l).

    Every block carries all channels. Within a block the layout is
    channel-major (C order), which together with the caller's index order
    fixes the serialization order on the wire.
    """
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 3:
        raise ValueError("latent must be 3-D (channels, height, width)")
    c_lat, h_lat, w_lat = latent.shape
    n_h, n_w = h_lat // block_side, w_lat // block_side
    out = np.empty((len(indices), c_lat, block_side, block_side), dtype=np.float64)
    for k, (i, j) in enumerate(indices):
        if not (0 <= i < n_h and 0 <= j < n_w):
            raise IndexError(f"block index ({i}, {j}) outside {n_h}x{n_w} grid")
        u, v = i * block_side, j * block_side
        out[k] = latent[:, u : u + block_side, v : v + block_side]
    return out


def embed_blocks(
    blocks: np.ndarray,
    indices: Sequence[BlockIndex],
    mask: BlockMask,
    dims: TensorDims,
) -> np.ndarray:
    """Place blocks on the mask's zero (transmitted) sites, zeros elsewhere.

    Exact inverse of :func:`extract_blocks` on the transmitted support. The
    index list must cover the mask's zero blocks exactly.
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    zero_blocks = split_sets(mask).transmitted
    if set(indices) != zero_blocks:
        raise ValueError("index list does not match the mask's transmitted blocks")
    if len(indices) != len(set(indices)):
        raise ValueError("duplicate block index")
    if blocks.shape[0] != len(indices):
        raise ValueError("payload block count does not match index list")
    l = mask.block_side
    out = np.zeros(dims.latent_shape, dtype=np.float64)
    for k, (i, j) in enumerate(indices):
        u, v = i * l, j * l
        out[:, u : u + l, v : v + l] = blocks[k]
    return out


def exact_count(ratio: float, n_total: int) -> int:
    """``ratio * n_total`` as an exact integer; reject fractional counts."""
    count = ratio * n_total
    rounded = round(count)
    if abs(count - rounded) > 1e-9:
        raise ValueError(f"ratio {ratio} of {n_total} blocks is not an integer")
    return int(rounded)


def select_request(
    withheld: frozenset[BlockIndex],
    rho: float,
    n_total: int,
    rng: np.random.Generator,
) -> tuple[BlockIndex, ...]:
    """Uniform sample of min(rho*n_total, |withheld|) blocks, without
    replacement, returned in row-major order. Empty input yields an empty
    request (caller treats the pool as exhausted)."""
    budget = exact_count(rho, n_total)
    if budget <= 0:
        raise ValueError("per-round budget must select at least one block")
    pool = sorted(withheld)
    if not pool:
        return ()
    k = min(budget, len(pool))
    chosen = rng.choice(len(pool), size=k, replace=False)
    return tuple(sorted(pool[idx] for idx in chosen))


def update_sets(sets: IndexSets, delta: Iterable[BlockIndex]) -> IndexSets:
    """Move ``delta`` from withheld to transmitted, preserving the partition."""
    delta = frozenset(delta)
    if not delta <= sets.withheld:
        raise ValueError("requested blocks are not a subset of the withheld set")
    return IndexSets(
        transmitted=sets.transmitted | delta,
        withheld=sets.withheld - delta,
    )
