"""Reproducible experiment grids over the toy link.

The synthetic corpus is a set of two-tone images whose caption words sit at
controlled margins from the captioner's decision thresholds. Withheld
regions reconstruct darker and less saturated than the source, so images
with slim margins need more delivered blocks before their caption reads
back correctly; margins are staggered so stopping rounds spread out over
the whole range instead of clustering at one value.

Paired runs: at fixed grid coordinates every scheme sees the same session
seed and the same channel seed, and the ablation schemes reuse the request
schedule recorded by the main scheme, so differences between scheme rows
are attributable to the scheme alone.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .backends import BackendSuite
from .blocks import TensorDims
from .control import ReplaySchedule, SessionConfig, SessionResult, rouge_l
from .metrics import psnr, ssim
from .phy import ChannelConfig
from .session import run_end_to_end

#: (top RGB, bottom RGB) per corpus image, ordered from caption-robust to
#: caption-fragile. Comments give the slot expected to lag behind.
_CORPUS_COLORS: tuple[tuple[tuple[float, float, float], tuple[float, float, float]], ...] = (
    ((0.15, 0.15, 0.15), (0.12, 0.12, 0.12)),  # dark gray on gray: instant
    ((0.45, 0.06, 0.06), (0.06, 0.06, 0.45)),  # dark, strong hues: instant
    ((0.05, 0.35, 0.05), (0.30, 0.30, 0.02)),  # dark green/yellow: instant
    ((0.20, 0.20, 0.20), (0.50, 0.08, 0.08)),  # dark gray/red: instant
    ((0.05, 0.05, 0.05), (0.08, 0.08, 0.08)),  # near black: instant
    ((0.40, 0.12, 0.12), (0.12, 0.12, 0.40)),  # saturation clears early
    ((0.12, 0.40, 0.12), (0.40, 0.12, 0.40)),  # green/magenta, early
    ((0.30, 0.14, 0.14), (0.14, 0.14, 0.30)),  # slim saturation: mid
    ((0.55, 0.05, 0.05), (0.26, 0.12, 0.12)),  # bottom hue lags to mid
    ((0.26, 0.14, 0.14), (0.14, 0.14, 0.26)),  # slimmest saturation: late
    ((0.90, 0.50, 0.20), (0.20, 0.50, 0.90)),  # medium luma lags to late
    ((0.85, 0.60, 0.35), (0.35, 0.60, 0.85)),  # medium luma lags to late
    ((0.98, 0.97, 0.92), (0.99, 0.95, 0.95)),  # bright gray: luma lags late
    ((0.95, 0.95, 0.50), (0.95, 0.95, 0.55)),  # bright yellow: final round
    ((0.90, 0.80, 0.62), (0.78, 0.84, 0.70)),  # three slim slots: exhausts
    ((0.75, 0.35, 0.15), (0.15, 0.35, 0.75)),  # luma out of reach: exhausts
)


def synthetic_corpus(dims: TensorDims, count: int = 16, seed: int = 2026) -> list[np.ndarray]:
    """Two-tone test images with a faint deterministic ripple texture."""
    if count > len(_CORPUS_COLORS):
        raise ValueError(f"at most {len(_CORPUS_COLORS)} corpus images are defined")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0 : dims.h, 0 : dims.w]
    images = []
    for top, bottom in _CORPUS_COLORS[:count]:
        img = np.empty(dims.image_shape)
        half = dims.h // 2
        for c in range(3):
            img[c, :half, :] = top[c]
            img[c, half:, :] = bottom[c]
        freq = rng.uniform(0.05, 0.2)
        phase = rng.uniform(0.0, 2 * np.pi)
        ripple = 0.015 * np.sin(freq * (xx + yy) + phase)
        images.append(np.clip(img + ripple[None, :, :], 0.0, 1.0))
    return images


@dataclass(frozen=True)
class ExperimentGrid:
    snrs: tuple[float, ...] = (5.0, 7.0, 10.0)
    taus: tuple[float, ...] = (0.3, 0.5, 0.7, 0.9)
    block_sides: tuple[int, ...] = (2,)
    schemes: tuple[str, ...] = ("main", "no_guidance", "full_mask")
    n_seeds: int = 5
    master_seed: int = 2026


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    image_id: int
    snr_db: float
    tau: float
    block_side: int
    replicate: int
    t_final: int
    terminated_by: str
    q: float
    d: float
    kappa: float
    r_final: float | None  # receiver-side score against the received caption
    rouge: float  # evaluation-side score against the clean source caption
    ssim: float
    psnr: float
    latent_bits: int
    text_bits: int
    denoise_steps: int


def _cell_seeds(
    master: int, replicate: int, image_id: int, snr: float, tau: float, side: int
) -> tuple[int, int]:
    key = [master, replicate, image_id, int(round(snr * 1000)), int(round(tau * 1000)), side]
    state = np.random.SeedSequence(key).generate_state(2)
    return int(state[0]), int(state[1])


def _row(
    scheme: str,
    image_id: int,
    snr: float,
    tau: float,
    side: int,
    replicate: int,
    result: SessionResult,
    source: np.ndarray,
    clean_caption: str,
) -> ResultRow:
    out = result.image
    return ResultRow(
        scheme=scheme,
        image_id=image_id,
        snr_db=snr,
        tau=tau,
        block_side=side,
        replicate=replicate,
        t_final=result.t_final,
        terminated_by=result.terminated_by,
        q=result.q,
        d=result.d,
        kappa=result.kappa,
        r_final=result.r_final,
        rouge=rouge_l(result.caption_final, clean_caption),
        ssim=ssim(out, source),
        psnr=psnr(out, source),
        latent_bits=result.latent_bits,
        text_bits=result.text_bits,
        denoise_steps=result.denoise_steps,
    )


def run_cell(
    image: np.ndarray,
    image_id: int,
    snr: float,
    tau: float,
    side: int,
    replicate: int,
    grid: ExperimentGrid,
    suite: BackendSuite,
) -> list[ResultRow]:
    """All scheme rows for one grid coordinate, sharing seeds and noise."""
    sess_seed, chan_seed = _cell_seeds(
        grid.master_seed, replicate, image_id, snr, tau, side
    )
    cfg = SessionConfig(
        tau=tau, snr_db=snr, block_side=side, seed=sess_seed, dims=suite.dims
    )
    channel = ChannelConfig(snr_db=snr, seed=chan_seed)
    clean_caption = suite.captioner.caption(image)

    rows = []
    main = run_end_to_end(image, cfg, suite, channel, scheme="main")
    if "main" in grid.schemes:
        rows.append(_row("main", image_id, snr, tau, side, replicate, main, image, clean_caption))
    if "no_guidance" in grid.schemes:
        replay = ReplaySchedule.from_rounds(main.rounds)
        res = run_end_to_end(
            image, cfg, suite, channel, scheme="no_guidance", replay=replay
        )
        rows.append(_row("no_guidance", image_id, snr, tau, side, replicate, res, image, clean_caption))
    if "full_mask" in grid.schemes:
        res = run_end_to_end(image, cfg, suite, channel, scheme="full_mask")
        rows.append(_row("full_mask", image_id, snr, tau, side, replicate, res, image, clean_caption))
    return rows


def run_grid(
    images: list[np.ndarray],
    grid: ExperimentGrid,
    suite: BackendSuite,
) -> tuple[list[ResultRow], list[tuple[dict, Exception]]]:
    """Sweep the full grid; failed cells are collected, not raised."""
    rows: list[ResultRow] = []
    failures: list[tuple[dict, Exception]] = []
    for image_id, image in enumerate(images):
        for snr in grid.snrs:
            for tau in grid.taus:
                for side in grid.block_sides:
                    for replicate in range(grid.n_seeds):
                        coords = dict(
                            image_id=image_id, snr=snr, tau=tau,
                            block_side=side, replicate=replicate,
                        )
                        try:
                            rows.extend(
                                run_cell(image, image_id, snr, tau, side, replicate, grid, suite)
                            )
                        except Exception as exc:  # noqa: BLE001 - cell isolation
                            failures.append((coords, exc))
    return rows, failures


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: list[ResultRow]) -> str:
    """Stable text form: fixed column order, shortest-round-trip floats."""
    buf = io.StringIO()
    names = [f.name for f in fields(ResultRow)]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in rows:
        writer.writerow([_format_value(getattr(row, name)) for name in names])
    return buf.getvalue()


def rows_to_json(rows: list[ResultRow]) -> str:
    return json.dumps([asdict(r) for r in rows], indent=2) + "\n"
