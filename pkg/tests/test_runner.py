"""End-to-end tests for the experiment runner."""

import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from score_recon import ExperimentBuilder, run_experiment
from score_recon.diffusion import TrainConfig, save_checkpoint, train
from score_recon.errors import DegenerateInputError
from score_recon.imgcore import load_image, make_rng, save_image
from score_recon.phantoms import make_phantoms, write_phantoms
from score_recon.runner import NORMALIZATION_NOTE, normalize, run_lambda_sweep, square
from score_recon.scoremodel import NetConfig, build_scorenet


def _dataset(root, count=3, size=32, kind="piecewise-blobs", seed=0):
    data = Path(root) / "data"
    write_phantoms(data, make_phantoms(kind, size, count, make_rng(seed)))
    return data


def _mri(name, data, out, method="zero-filled"):
    return (
        ExperimentBuilder(name)
        .modality("mri")
        .method(method)
        .dataset(data)
        .output(out)
        .record_timings(False)
    )


class TestHelpers(unittest.TestCase):
    def test_square_pads_centred(self):
        out = square(np.ones((2, 4)))
        self.assertEqual(out.shape, (4, 4))
        np.testing.assert_array_equal(out[1:3], np.ones((2, 4)))
        self.assertEqual(out[0].sum(), 0)

    def test_normalize(self):
        np.testing.assert_allclose(normalize(np.array([[1.0, 4.0]])), [[0.25, 1.0]])
        with self.assertRaises(DegenerateInputError):
            normalize(np.zeros((2, 2)))


@pytest.mark.asyncio
async def test_zero_filled_run_writes_outputs():
    with tempfile.TemporaryDirectory() as tmp:
        data = _dataset(tmp)
        out = Path(tmp) / "run"
        cfg = _mri("zf", data, out).mask("G1D4").seed(0).notes("baseline").build()
        report = await run_experiment(cfg)

        assert len(report.rows) == 3
        assert all(math.isfinite(r.psnr) and r.ssim is not None for r in report.rows)
        assert all(r.time_s is None and r.status == "ok" for r in report.rows)
        assert report.lam is None
        assert report.dataset == "data"

        metrics = (out / "metrics.csv").read_text(encoding="utf-8").splitlines()
        assert metrics[0] == "id,mask,psnr,ssim,time_s,status"
        assert metrics[1].startswith("slice_0000,G1D4,")
        assert (out / "split.txt").read_text(encoding="utf-8").split() == [
            "slice_0000",
            "slice_0001",
            "slice_0002",
        ]
        report_md = (out / "report.md").read_text(encoding="utf-8")
        assert report_md.startswith("# zf")
        assert NORMALIZATION_NOTE in report_md
        assert "baseline" in report_md
        assert "method: zero-filled" in (out / "config.yaml").read_text(encoding="utf-8")
        assert load_image(out / "recon" / "slice_0001.srimg").shape == (32, 32)
        assert (out / "diff" / "slice_0001.srimg").exists()
        assert (out / "png" / "slice_0001.png").read_bytes().startswith(b"\x89PNG")
        assert (out / "png" / "slice_0001_diff.png").exists()


@pytest.mark.asyncio
async def test_reruns_are_byte_identical_across_worker_counts():
    with tempfile.TemporaryDirectory() as tmp:
        data = _dataset(tmp, count=4, size=16)
        outputs = []
        for workers in (1, 3):
            out = Path(tmp) / f"run{workers}"
            cfg = (
                _mri("pc", data, out, method="pc")
                .mask("G2D4")
                .gaussian_oracle()
                .schedule(n=20, sigma_max=10.0)
                .seed(5)
                .workers(workers)
                .build()
            )
            await run_experiment(cfg)
            outputs.append(out)
        first, second = outputs
        assert (first / "metrics.csv").read_bytes() == (second / "metrics.csv").read_bytes()
        for path in sorted((first / "recon").iterdir()):
            assert path.read_bytes() == (second / "recon" / path.name).read_bytes()


@pytest.mark.asyncio
async def test_oracle_pc_full_mask_is_exact():
    with tempfile.TemporaryDirectory() as tmp:
        data = _dataset(tmp, count=2, size=16)
        cfg = (
            _mri("exact", data, Path(tmp) / "run", method="pc")
            .mask("full")
            .gaussian_oracle(mean=0.5, variance=0.1)
            .schedule(n=20, sigma_max=10.0)
            .seed(1)
            .build()
        )
        report = await run_experiment(cfg)
        assert all(r.psnr >= 50 for r in report.rows)
        assert report.lam == 1.0


@pytest.mark.asyncio
async def test_unusable_slices_are_skipped():
    with tempfile.TemporaryDirectory() as tmp:
        data = _dataset(tmp, count=2, size=16)
        (data / "broken.srimg").write_bytes(b"not an image")
        save_image(data / "zero.srimg", np.zeros((16, 16)))
        (data / "readme.txt").write_text("ignored", encoding="utf-8")
        cfg = _mri("skip", data, Path(tmp) / "run").mask("full").build()
        report = await run_experiment(cfg)
        assert [r.slice_id for r in report.rows] == ["slice_0000", "slice_0001"]


@pytest.mark.asyncio
async def test_constant_slice_gets_a_failure_row():
    with tempfile.TemporaryDirectory() as tmp:
        data = _dataset(tmp, count=2, size=16)
        save_image(data / "flat.srimg", np.full((16, 16), 0.5))
        out = Path(tmp) / "run"
        cfg = (
            _mri("flat", data, out, method="pc")
            .mask("G2D4")
            .gaussian_oracle(mean=0.5, variance=0.1)
            .schedule(n=20, sigma_max=10.0)
            .seed(2)
            .build()
        )
        report = await run_experiment(cfg)
        assert [r.slice_id for r in report.rows] == ["flat", "slice_0000", "slice_0001"]
        flat = report.rows[0]
        assert flat.status == "degenerate" and flat.psnr is None and flat.ssim is None
        assert all(r.status == "ok" and math.isfinite(r.psnr) for r in report.rows[1:])
        assert report.failures == 1
        assert "(1 failed)" in (out / "report.md").read_text(encoding="utf-8")
        metrics = (out / "metrics.csv").read_text(encoding="utf-8").splitlines()
        assert metrics[1] == "flat,G2D4,,,,degenerate"
        assert (out / "recon" / "flat.srimg").exists()


@pytest.mark.asyncio
async def test_dataset_errors():
    with tempfile.TemporaryDirectory() as tmp:
        empty = Path(tmp) / "empty"
        empty.mkdir()
        cfg = _mri("empty", empty, Path(tmp) / "run").mask("full").build()
        with pytest.raises(DegenerateInputError, match="no usable slices"):
            await run_experiment(cfg)
        cfg = _mri("missing", Path(tmp) / "absent", Path(tmp) / "run").mask("full").build()
        with pytest.raises(FileNotFoundError):
            await run_experiment(cfg)


@pytest.mark.asyncio
async def test_ct_tv_run_squares_slices():
    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        data.mkdir()
        head = make_phantoms("shepp-logan", 24, 1, make_rng(0))[0]
        save_image(data / "slice_0000.srimg", head[:, 2:22])
        cfg = (
            ExperimentBuilder("ct")
            .sparse_view(16)
            .method("tv")
            .lam(10.0)
            .tv(max_iters=10)
            .dataset(data)
            .output(Path(tmp) / "run")
            .build()
        )
        report = await run_experiment(cfg)
        assert report.mask == "SV16"
        assert report.rows[0].mask == "SV16"
        assert load_image(Path(tmp) / "run" / "recon" / "slice_0000.srimg").shape == (24, 24)


@pytest.mark.asyncio
async def test_checkpoint_model_reports_depth():
    with tempfile.TemporaryDirectory() as tmp:
        data = _dataset(tmp, count=2, size=16)
        ckpt = Path(tmp) / "net.ckpt"
        net = NetConfig(depth=1, base_channels=8, deep_channels=8, blocks_per_stage=1)
        images = make_phantoms("gaussian-draws", 16, 2, make_rng(1))
        result = train(build_scorenet(net, make_rng(0)), images, TrainConfig(iterations=0), make_rng(0))
        save_checkpoint(ckpt, result)
        cfg = (
            _mri("ckpt", data, Path(tmp) / "run", method="pc")
            .mask("full")
            .model_checkpoint(ckpt)
            .schedule(n=5, sigma_max=10.0)
            .seed(2)
            .build()
        )
        report = await run_experiment(cfg)
        assert report.depth == "d=1"
        assert len(report.rows) == 2


@pytest.mark.asyncio
async def test_lambda_sweep_writes_fidelities():
    with tempfile.TemporaryDirectory() as tmp:
        data = _dataset(tmp, count=1, size=16)
        out = Path(tmp) / "sweep_run"
        cfg = (
            _mri("sweep", data, out, method="pc")
            .mask("lowpass", half_width=3)
            .gaussian_oracle(mean=0.2, variance=0.1)
            .schedule(n=30, sigma_max=10.0)
            .seed(3)
            .build()
        )
        images, fidelities = await run_lambda_sweep(cfg, [0.001, 1.0])
        assert len(images) == 2
        assert fidelities[1] * 10 <= fidelities[0]
        lines = (out / "sweep.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "lambda,fidelity,psnr"
        assert [line.split(",")[0] for line in lines[1:]] == ["0.001", "1"]
        assert (out / "sweep" / "lambda_0.001.srimg").exists()
