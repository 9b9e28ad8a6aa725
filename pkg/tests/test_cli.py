"""Tests for the score-recon command line."""

import tempfile
from pathlib import Path

import pytest

from score_recon.cli import build_parser, main
from score_recon.diffusion import load_checkpoint
from score_recon.imgcore import load_image


@pytest.fixture
def workdir():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        assert main(["phantoms", "--kind", "piecewise-blobs", "--size", "16", "--count", "3",
                     "--seed", "0", "--out", str(root / "data")]) == 0
        yield root


def test_parser_requires_a_verb():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_rf_table(capsys):
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "rf.csv"
        assert main(["rf", "--csv", str(path)]) == 0
        lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[:4] == ["network,receptive_field,network_extent", "d=1,49,49", "d=2,143,143", "d=3,331,333"]
    assert lines[4:] == ["d=4,707,713", "d=4*,707,global"]
    assert "49" in capsys.readouterr().out


def test_phantoms_verb(workdir):
    files = sorted(p.name for p in (workdir / "data").iterdir())
    assert files == ["slice_0000.srimg", "slice_0001.srimg", "slice_0002.srimg"]


def test_masks_verb(workdir):
    out = workdir / "masks"
    argv = ["masks", "--rows", "32", "--cols", "32", "--seed", "1", "--out", str(out)]
    assert main([*argv, "--preset", "G1D4", "--preset", "R11"]) == 0
    lines = (out / "masks.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "mask,kept,kept_fraction,acceleration"
    assert [line.split(",")[0] for line in lines[1:]] == ["G1D4", "R11"]
    assert (out / "G1D4.srimg").exists()


def test_reconstruct_is_reproducible(workdir, capsys):
    outputs = []
    for k in range(2):
        out = workdir / f"zf{k}"
        argv = [
            "reconstruct", "--modality", "mri", "--mask", "G1D4", "--method", "zero-filled",
            "--seed", "0", "--dataset", str(workdir / "data"), "--output", str(out), "--no-timings",
        ]
        assert main(argv) == 0
        outputs.append((out / "metrics.csv").read_bytes())
    assert outputs[0] == outputs[1]
    assert "over 3 slices" in capsys.readouterr().out


def test_tv_verb(workdir):
    argv = [
        "tv", "--modality", "mri", "--mask", "full", "--lam", "100",
        "--dataset", str(workdir / "data"), "--output", str(workdir / "tv"),
    ]
    assert main(argv) == 0
    assert (workdir / "tv" / "report.md").exists()


def test_invalid_experiment_exits_with_two(workdir, capsys):
    argv = ["reconstruct", "--modality", "mri", "--method", "pc", "--dataset", str(workdir / "data")]
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert "error: Experiment validation failed" in err
    assert "A score model is required" in err


def test_train_then_sample(workdir):
    ckpt = workdir / "net.ckpt"
    loss = workdir / "loss.csv"
    argv = [
        "train", "--dataset", str(workdir / "data"), "--out", str(ckpt), "--seed", "0",
        "--depth", "1", "--base-channels", "8", "--deep-channels", "8", "--blocks", "1",
        "--iterations", "3", "--warmup", "1", "--batch", "2", "--n", "10", "--loss-csv", str(loss),
    ]
    assert main(argv) == 0
    assert load_checkpoint(ckpt).echo["extra"]["seed"] == 0
    assert len(loss.read_text(encoding="utf-8").splitlines()) == 4

    out = workdir / "samples"
    argv = ["sample", "--checkpoint", str(ckpt), "--seed", "1", "--size", "16", "--n", "5", "--out", str(out)]
    assert main(argv) == 0
    assert load_image(out / "sample_0000.srimg").shape == (16, 16)


def test_sample_from_fitted_prior(workdir):
    out = workdir / "prior"
    argv = ["sample", "--dataset", str(workdir / "data"), "--seed", "2", "--count", "2",
            "--n", "20", "--out", str(out)]
    assert main(argv) == 0
    assert sorted(p.name for p in out.iterdir()) == ["sample_0000.srimg", "sample_0001.srimg"]


def test_metrics_verb(workdir, capsys):
    data = str(workdir / "data")
    table = workdir / "metrics.csv"
    hist = workdir / "hist"
    argv = ["metrics", "--recon", data, "--reference", data, "--mask", "full", "--out", str(table),
            "--dataset", data, "--hist-dir", str(hist)]
    assert main(argv) == 0
    rows = table.read_text(encoding="utf-8").splitlines()
    assert rows[1].split(",")[:3] == ["slice_0000", "full", "inf"]
    assert (hist / "hist_x.csv").exists() and (hist / "hist_y.csv").exists()
    assert load_image(hist / "mean.srimg").shape == (16, 16)
    assert "3 slices" in capsys.readouterr().err
