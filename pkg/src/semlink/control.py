"""Receiver-driven retransmission control.

One session: the receiver gets a caption and a fraction of the latent
blocks, reconstructs, reads a caption back off its own reconstruction, and
scores it against the caption it was sent. Below threshold it asks the
transmitter for another fixed-size batch of withheld blocks and repeats,
up to a hard round limit.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .backends import BackendSuite
from .blocks import (
    DEFAULT_DIMS,
    BlockIndex,
    BlockMask,
    TensorDims,
    embed_blocks,
    exact_count,
    lift_mask,
    partition_dims,
    rate_report,
    select_request,
    split_sets,
    update_sets,
)
from .inpaint import run_inpainting, step_count, strength

SCHEMES = ("main", "no_guidance", "full_mask")

_PUNCT = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT).split()


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok in a:
        cur = [0]
        for j, other in enumerate(b, 1):
            if tok == other:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """Sentence-level ROUGE-L F-measure with equal precision/recall weight.

    Token LCS length L against candidate length m and reference length n
    gives F = 2L / (m + n); empty inputs or a zero-length LCS score 0.
    """
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    return 2.0 * lcs / (len(cand) + len(ref))


def spawn_streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent per-role generators: (mask draw, request draw, init noise)."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def draw_initial_mask(
    n_h: int, n_w: int, block_side: int, q0: float, rng: np.random.Generator
) -> BlockMask:
    """Uniformly choose exactly ``q0 * n`` blocks to transmit; 1 = withheld."""
    n = n_h * n_w
    n_tx = exact_count(q0, n)
    grid = np.ones((n_h, n_w), dtype=np.uint8)
    chosen = rng.choice(n, size=n_tx, replace=False)
    grid[np.unravel_index(np.sort(chosen), (n_h, n_w))] = 0
    return BlockMask(grid, block_side)


@dataclass(frozen=True)
class SessionConfig:
    tau: float
    snr_db: float
    block_side: int
    seed: int
    q0: float = 0.125
    rho: float = 0.0625
    t_max: int = 6
    w: float = 9.0
    dims: TensorDims = DEFAULT_DIMS
    stochastic_init: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.t_max < 0:
            raise ValueError("t_max must be nonnegative")
        if self.w < 0.0:
            raise ValueError("guidance weight must be nonnegative")
        _, _, n = partition_dims(self.dims, self.block_side)
        exact_count(self.q0, n)  # both budgets must be whole block counts
        if self.rho > 0.0:
            exact_count(self.rho, n)

    @property
    def n_blocks(self) -> int:
        return partition_dims(self.dims, self.block_side)[2]


@dataclass(frozen=True)
class InitialDelivery:
    caption: str | None
    mask: BlockMask
    indices: tuple[BlockIndex, ...]
    blocks: np.ndarray
    latent_bits: int = 0
    text_bits: int = 0
    meta_bits: int = 0


@dataclass(frozen=True)
class BlockDelivery:
    indices: tuple[BlockIndex, ...]
    blocks: np.ndarray
    latent_bits: int = 0
    meta_bits: int = 0


class SessionLink(Protocol):
    """Receiver's view of the transmitter."""

    def initial(self) -> InitialDelivery: ...

    def request(self, indices: tuple[BlockIndex, ...]) -> BlockDelivery: ...


@dataclass(frozen=True)
class RoundRecord:
    t: int
    d: float
    s: float
    steps: int
    r_guided: float | None
    r_plain: float | None
    r: float | None
    requested: tuple[BlockIndex, ...]


@dataclass(frozen=True)
class ReplaySchedule:
    """The request sequence of a finished session, for ablation reruns."""

    deltas: tuple[tuple[BlockIndex, ...], ...]

    @classmethod
    def from_rounds(cls, rounds: tuple[RoundRecord, ...]) -> "ReplaySchedule":
        return cls(tuple(r.requested for r in rounds if r.requested))


@dataclass(frozen=True)
class SessionResult:
    image: np.ndarray = field(repr=False)
    caption_received: str | None
    caption_final: str
    rounds: tuple[RoundRecord, ...]
    terminated_by: str  # "threshold" | "exhausted" | "schedule"
    q: float
    d: float
    kappa: float
    latent_bits: int
    text_bits: int
    meta_bits: int
    denoise_steps: int

    @property
    def t_final(self) -> int:
        return self.rounds[-1].t

    @property
    def r_final(self) -> float | None:
        return self.rounds[-1].r


def _score_branches(
    z_tilde: np.ndarray,
    lifted: np.ndarray,
    caption: str,
    weights: tuple[float, ...],
    s: float,
    suite: BackendSuite,
    init_noise: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray, tuple[float, ...]]:
    """Run one reconstruction per conditioning weight and score each.

    Returns (best latent, best image, per-branch scores); ties keep the
    earliest branch, so with the conditioned branch listed first it wins.
    """
    best = None
    scores = []
    for gamma in weights:
        z_hat = run_inpainting(
            z_tilde, lifted, caption, gamma, s, suite.schedule, suite.denoiser, init_noise
        )
        image = suite.decoder.decode(z_hat)
        score = rouge_l(suite.captioner.caption(image), caption)
        scores.append(score)
        if best is None or score > best[0]:
            best = (score, z_hat, image)
    return best[1], best[2], tuple(scores)


def drive_session(
    link: SessionLink,
    cfg: SessionConfig,
    suite: BackendSuite,
    scheme: str = "main",
    replay: ReplaySchedule | None = None,
) -> SessionResult:
    """Run the adaptive loop against a transmitter behind ``link``.

    ``main`` and ``full_mask`` score a conditioned and an unconditioned
    reconstruction each round and stop once the better one reads back a
    caption within ``cfg.tau``. ``no_guidance`` skips scoring entirely and
    replays a previously recorded request schedule, so it needs ``replay``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme: {scheme!r}")
    if scheme == "no_guidance":
        if replay is None:
            raise ValueError("no_guidance runs replay a recorded request schedule")
        weights: tuple[float, ...] = (0.0,)
    else:
        weights = (cfg.w, 0.0)

    init = link.initial()
    n_h, n_w = init.mask.n_h, init.mask.n_w
    n_blocks = n_h * n_w
    sets = split_sets(init.mask)
    if init.indices != tuple(sorted(sets.transmitted)):
        raise ValueError("initial delivery does not match its own mask")
    received = dict(zip(init.indices, init.blocks))
    caption = init.caption if init.caption is not None else ""

    _, request_rng, noise_rng = spawn_streams(cfg.seed)
    latent_bits = init.latent_bits
    meta_bits = init.meta_bits
    denoise_steps = 0
    rounds: list[RoundRecord] = []
    terminated_by = None
    z_best = image = None

    t = 0
    while True:
        mask = BlockMask.from_withheld(n_h, n_w, cfg.block_side, sets.withheld)
        lifted = lift_mask(mask)
        indices = tuple(sorted(sets.transmitted))
        z_tilde = embed_blocks(
            np.array([received[i] for i in indices]).reshape(
                len(indices), cfg.dims.c_lat, cfg.block_side, cfg.block_side
            ),
            indices,
            mask,
            cfg.dims,
        )
        d = len(sets.withheld) / n_blocks
        s = strength(cfg.snr_db, d)
        steps = step_count(s, suite.schedule.n_steps)
        init_noise = (
            noise_rng.standard_normal(cfg.dims.latent_shape)
            if cfg.stochastic_init
            else None
        )
        z_best, image, scores = _score_branches(
            z_tilde, lifted, caption, weights, s, suite, init_noise
        )
        denoise_steps += steps * len(weights)

        if replay is not None:
            r_guided, r_plain, r = None, None, None
        elif len(weights) == 2:
            r_guided, r_plain = scores
            r = max(scores)
        else:
            r_guided, r_plain, r = None, scores[0], scores[0]

        if replay is not None:
            if t < len(replay.deltas):
                delta = replay.deltas[t]
            else:
                delta, terminated_by = (), "schedule"
        elif r >= cfg.tau:
            delta, terminated_by = (), "threshold"
        elif t >= cfg.t_max:
            delta, terminated_by = (), "exhausted"
        else:
            delta = select_request(sets.withheld, cfg.rho, n_blocks, request_rng)
            if not delta:
                terminated_by = "exhausted"

        rounds.append(RoundRecord(t, d, s, steps, r_guided, r_plain, r, delta))
        if terminated_by is not None:
            break

        delivery = link.request(delta)
        if delivery.indices != delta:
            raise ValueError("delivery does not match the requested blocks")
        received.update(zip(delta, delivery.blocks))
        sets = update_sets(sets, delta)
        latent_bits += delivery.latent_bits
        meta_bits += delivery.meta_bits
        t += 1

    final_mask = BlockMask.from_withheld(n_h, n_w, cfg.block_side, sets.withheld)
    rates = rate_report(final_mask, cfg.dims)
    return SessionResult(
        image=image,
        caption_received=init.caption,
        caption_final=suite.captioner.caption(image),
        rounds=tuple(rounds),
        terminated_by=terminated_by,
        q=rates.q,
        d=rates.d,
        kappa=rates.kappa,
        latent_bits=latent_bits,
        text_bits=init.text_bits,
        meta_bits=meta_bits,
        denoise_steps=denoise_steps,
    )
