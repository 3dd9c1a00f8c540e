"""Command-line front end.

Exit codes: 0 on success, 1 on bad usage, 2 when any sweep cell failed
(partial results are still written).
"""

from __future__ import annotations

import sys

import click
import numpy as np

from .backends import toy_suite
from .blocks import DEFAULT_DIMS, TensorDims
from .control import ReplaySchedule, SessionConfig
from .experiments import (
    ExperimentGrid,
    rows_to_csv,
    rows_to_json,
    run_grid,
    synthetic_corpus,
)
from .phy import ChannelConfig
from .session import run_end_to_end

_DESK_DIMS = TensorDims(3, 128, 128, 4, 16, 16)


def _parse_dims(label: str) -> TensorDims:
    if label == "full":
        return DEFAULT_DIMS
    if label == "desk":
        return _DESK_DIMS
    raise click.BadParameter(f"unknown dims preset: {label!r}")


@click.group()
def main() -> None:
    """Semantic image link simulator."""


@main.command()
@click.option("--image-id", type=int, default=0, show_default=True)
@click.option("--tau", type=float, default=0.9, show_default=True)
@click.option("--snr", type=float, default=10.0, show_default=True)
@click.option("--block-side", "-l", type=int, default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--channel-seed", type=int, default=1, show_default=True)
@click.option("--scheme", type=click.Choice(["main", "no_guidance", "full_mask"]), default="main")
@click.option("--dims", default="desk", show_default=True, help="desk or full")
@click.option("--transport", type=click.Choice(["memory", "tcp"]), default="memory")
def run(image_id, tau, snr, block_side, seed, channel_seed, scheme, dims, transport):
    """Run one session on a synthetic corpus image and print round logs."""
    dims = _parse_dims(dims)
    suite = toy_suite(dims)
    images = synthetic_corpus(dims)
    if not 0 <= image_id < len(images):
        raise click.BadParameter(f"image-id must be in [0, {len(images) - 1}]")
    cfg = SessionConfig(tau=tau, snr_db=snr, block_side=block_side, seed=seed, dims=dims)
    channel = ChannelConfig(snr_db=snr, seed=channel_seed)
    replay = None
    if scheme == "no_guidance":
        base = run_end_to_end(images[image_id], cfg, suite, channel, scheme="main",
                              transport=transport)
        replay = ReplaySchedule.from_rounds(base.rounds)
    result = run_end_to_end(
        images[image_id], cfg, suite, channel, scheme=scheme, replay=replay,
        transport=transport,
    )
    click.echo(f"caption sent: {result.caption_received!r}")
    click.echo(f"caption read: {result.caption_final!r}")
    for r in result.rounds:
        score = "-" if r.r is None else f"{r.r:.3f}"
        click.echo(
            f"round {r.t}: withheld={r.d:.4f} strength={r.s:.4f} "
            f"steps={r.steps} score={score} requested={len(r.requested)}"
        )
    click.echo(
        f"done: {result.terminated_by}, q={result.q}, kappa={result.kappa:.6f}, "
        f"latent_bits={result.latent_bits}, text_bits={result.text_bits}"
    )


@main.command()
@click.option("--snr", "snrs", type=float, multiple=True, default=(5.0, 7.0, 10.0), show_default=True)
@click.option("--tau", "taus", type=float, multiple=True, default=(0.3, 0.5, 0.7, 0.9), show_default=True)
@click.option("--block-side", "-l", "block_sides", type=int, multiple=True, default=(2,), show_default=True)
@click.option("--scheme", "schemes", multiple=True,
              type=click.Choice(["main", "no_guidance", "full_mask"]),
              default=("main", "no_guidance", "full_mask"), show_default=True)
@click.option("--seeds", type=int, default=5, show_default=True, help="replicates per cell")
@click.option("--master-seed", type=int, default=2026, show_default=True)
@click.option("--images", type=int, default=16, show_default=True, help="corpus size")
@click.option("--dims", default="desk", show_default=True, help="desk or full")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), default="-",
              show_default=True, help="output path, - for stdout")
def sweep(snrs, taus, block_sides, schemes, seeds, master_seed, images, dims, fmt, out):
    """Run the experiment grid and emit one row per (cell, scheme)."""
    dims = _parse_dims(dims)
    suite = toy_suite(dims)
    corpus = synthetic_corpus(dims, count=images)
    grid = ExperimentGrid(
        snrs=tuple(snrs), taus=tuple(taus), block_sides=tuple(block_sides),
        schemes=tuple(schemes), n_seeds=seeds, master_seed=master_seed,
    )
    rows, failures = run_grid(corpus, grid, suite)
    text = rows_to_csv(rows) if fmt == "csv" else rows_to_json(rows)
    if out == "-":
        click.echo(text, nl=False)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    for coords, exc in failures:
        click.echo(f"cell failed: {coords}: {exc!r}", err=True)
    if failures:
        sys.exit(2)


@main.command("phy-bench")
@click.option("--payloads", type=int, default=1000, show_default=True)
@click.option("--coeffs", type=int, default=4, show_default=True, help="coefficients per payload")
@click.option("--seed", type=int, default=0, show_default=True)
def phy_bench(payloads, coeffs, seed):
    """Round-trip random payloads through the noiseless coded chain."""
    import time

    from .phy import latent_to_symbols, symbols_to_latent

    rng = np.random.default_rng(seed)
    batch = [rng.normal(size=coeffs) for _ in range(payloads)]
    latent_to_symbols(batch[0])  # warm any jit caches before timing
    start = time.perf_counter()
    for payload in batch:
        symbols, _, pad = latent_to_symbols(payload)
        back = symbols_to_latent(symbols, coeffs, pad, noise_var=1e-2)
        if not np.array_equal(back, payload):
            click.echo("round-trip mismatch", err=True)
            sys.exit(2)
    elapsed = time.perf_counter() - start
    click.echo(f"{payloads} payloads x {coeffs} coefficients: {elapsed:.2f} s, all bit-exact")


@main.command()
def selftest() -> None:
    """Tiny smoke run: one session per scheme on one image."""
    dims = _DESK_DIMS
    suite = toy_suite(dims)
    image = synthetic_corpus(dims, count=1)[0]
    cfg = SessionConfig(tau=0.9, snr_db=10.0, block_side=2, seed=0, dims=dims)
    channel = ChannelConfig(snr_db=10.0, seed=1)
    main_res = run_end_to_end(image, cfg, suite, channel, scheme="main")
    replay = ReplaySchedule.from_rounds(main_res.rounds)
    for scheme, kwargs in (
        ("main", {}),
        ("no_guidance", {"replay": replay}),
        ("full_mask", {}),
    ):
        result = run_end_to_end(image, cfg, suite, channel, scheme=scheme, **kwargs)
        click.echo(
            f"{scheme}: t={result.t_final} {result.terminated_by} "
            f"q={result.q} caption={result.caption_final!r}"
        )


if __name__ == "__main__":
    main()
