"""The plots package consumes boardsim only through its command line and
CSV outputs: demo inputs are produced by invoking the installed `boardsim`
entry point."""

import subprocess
import sys
from pathlib import Path

import pytest

from boardplot import cli


@pytest.fixture(scope="module")
def demo_outputs(tmp_path_factory):
    base = tmp_path_factory.mktemp("demo")
    cmds = [
        ["sync-bench", "--boards", "2", "--reps", "400", "--jitter-ps", "20",
         "--seed", "3", "--out", str(base / "skew")],
        ["res-flux", "--freq-range=0:1.2e6:100e3", "--bias-range=-1:1:0.25",
         "--nshots", "4", "--seed", "3", "--out", str(base / "resflux")],
        ["cz-chevron", "--pair", "q2,q7", "--dur-range", "0:40:4",
         "--amp-range", "0.15:0.35:0.05", "--nshots", "8", "--seed", "3",
         "--out", str(base / "chevron")],
    ]
    for cmd in cmds:
        proc = subprocess.run([sys.executable, "-m", "boardsim.cli"] + cmd,
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    return base


def run_cli(argv):
    return cli.main(argv)


def test_skew_histogram(demo_outputs, tmp_path):
    out = tmp_path / "skew.png"
    rc = run_cli(["--input", str(demo_outputs / "skew" / "skew.csv"),
                  "--kind", "skew-hist", "--out", str(out),
                  "--no-timestamp"])
    assert rc == 0
    assert out.stat().st_size > 0


def test_spectroscopy_grid_2x5(demo_outputs, tmp_path):
    out = tmp_path / "grid.png"
    rc = run_cli(["--input",
                  str(demo_outputs / "resflux" / "resflux_q*.csv"),
                  "--kind", "heatmap-grid", "--grid", "2x5",
                  "--out", str(out), "--no-timestamp"])
    assert rc == 0
    assert out.stat().st_size > 0


def test_chevron_heatmap(demo_outputs, tmp_path):
    out = tmp_path / "chevron.png"
    rc = run_cli(["--input",
                  str(demo_outputs / "chevron" / "chevron_q2q7.csv"),
                  "--kind", "heatmap", "--out", str(out), "--no-timestamp"])
    assert rc == 0
    assert out.stat().st_size > 0


def test_deterministic_bytes_without_timestamp(demo_outputs, tmp_path):
    src = str(demo_outputs / "chevron" / "chevron_q2q7.csv")
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    for out in (a, b):
        assert run_cli(["--input", src, "--kind", "heatmap",
                        "--out", str(out), "--no-timestamp"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_input_is_left_untouched(demo_outputs, tmp_path):
    src = demo_outputs / "skew" / "skew.csv"
    before = src.read_bytes()
    run_cli(["--input", str(src), "--kind", "skew-hist",
             "--out", str(tmp_path / "x.png"), "--no-timestamp"])
    assert src.read_bytes() == before


def test_malformed_csv_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("just,two\n1,2\n")
    rc = run_cli(["--input", str(bad), "--kind", "heatmap",
                  "--out", str(tmp_path / "no.png")])
    assert rc != 0
    err = capsys.readouterr().err
    assert "columns" in err
    assert not (tmp_path / "no.png").exists()


def test_missing_input_rejected(tmp_path):
    rc = run_cli(["--input", str(tmp_path / "absent.csv"),
                  "--kind", "heatmap", "--out", str(tmp_path / "no.png")])
    assert rc != 0


def test_grid_too_small_rejected(demo_outputs, tmp_path):
    rc = run_cli(["--input",
                  str(demo_outputs / "resflux" / "resflux_q*.csv"),
                  "--kind", "heatmap-grid", "--grid", "1x2",
                  "--out", str(tmp_path / "no.png")])
    assert rc != 0
