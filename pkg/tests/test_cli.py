"""Command-line behavior through click's test runner."""

from click.testing import CliRunner

from semlink.cli import main


def test_run_prints_round_log():
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--image-id", "0", "--tau", "0.5"])
    assert result.exit_code == 0
    assert "caption sent:" in result.output
    assert "round 0:" in result.output
    assert "done:" in result.output


def test_run_rejects_bad_image_id():
    runner = CliRunner()
    result = runner.invoke(main, ["run", "--image-id", "99"])
    assert result.exit_code != 0


def test_selftest_covers_all_schemes():
    runner = CliRunner()
    result = runner.invoke(main, ["selftest"])
    assert result.exit_code == 0
    for scheme in ("main", "no_guidance", "full_mask"):
        assert scheme in result.output


def test_sweep_csv_reproducible(tmp_path):
    runner = CliRunner()
    args = [
        "sweep", "--images", "2", "--seeds", "1", "--tau", "0.3",
        "--snr", "10.0", "--scheme", "main",
    ]
    first = runner.invoke(main, args + ["--out", str(tmp_path / "a.csv")])
    second = runner.invoke(main, args + ["--out", str(tmp_path / "b.csv")])
    assert first.exit_code == 0 and second.exit_code == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_sweep_json_to_stdout():
    runner = CliRunner()
    result = runner.invoke(
        main,
        ["sweep", "--images", "1", "--seeds", "1", "--tau", "0.3", "--snr",
         "10.0", "--scheme", "main", "--format", "json"],
    )
    assert result.exit_code == 0
    assert result.output.lstrip().startswith("[")


def test_phy_bench_small():
    runner = CliRunner()
    result = runner.invoke(main, ["phy-bench", "--payloads", "5", "--coeffs", "2"])
    assert result.exit_code == 0
    assert "bit-exact" in result.output
