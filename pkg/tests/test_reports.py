"""Tests for per-slice rows and comparison tables."""

import math
import tempfile
from pathlib import Path

from score_recon.reports import ReconReport, SliceResult, compare_table, write_compare_table


def _report(**kwargs):
    defaults = dict(name="knee-pc", dataset="knee", mask="G1D4", method="pc", depth="d=4")
    defaults.update(kwargs)
    return ReconReport(**defaults)


def test_missing_metrics_are_empty_cells():
    report = _report(rows=[SliceResult("slice_0000", "G1D4", psnr=30.0)])
    assert report.metrics_csv() == "id,mask,psnr,ssim,time_s,status\nslice_0000,G1D4,30.000000,,,ok\n"


def test_infinite_psnr_is_written_as_inf():
    report = _report(rows=[SliceResult("a", "full", psnr=math.inf, ssim=1.0, time_s=0.25)])
    assert report.metrics_csv().splitlines()[1] == "a,full,inf,1.000000,0.250,ok"


def test_compare_table_aggregates():
    report = _report(
        rows=[
            SliceResult("a", "G1D4", psnr=30.0),
            SliceResult("b", "G1D4", psnr=32.0),
            SliceResult("c", "G1D4", status="diverged"),
        ]
    )
    lines = compare_table([report]).splitlines()
    assert lines[0] == "dataset,mask,method,d,psnr_mean,psnr_std,ssim_mean,ssim_std,time_s"
    assert lines[1] == "knee,G1D4,pc,d=4,31.000000,1.000000,,,"
    assert report.failures == 1
    assert "3 slices (1 failed)" in report.summary()


def test_compare_table_without_rows():
    assert compare_table([_report(method="tv", depth="")]).splitlines()[1] == "knee,G1D4,tv,,,,,,"


def test_write_compare_table():
    reports = [_report(), _report(name="knee-ald", method="ald")]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "compare.csv"
        write_compare_table(path, reports)
        assert path.read_text(encoding="utf-8") == compare_table(reports)
        assert len(path.read_text(encoding="utf-8").splitlines()) == 3
