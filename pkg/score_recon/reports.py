"""
Per-slice result rows, aggregate reports and comparison tables.

Missing values are written as empty cells, never as zero.
"""

import csv
import io
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .analysis import mean_std

METRICS_COLUMNS = ("id", "mask", "psnr", "ssim", "time_s", "status")
COMPARE_COLUMNS = (
    "dataset",
    "mask",
    "method",
    "d",
    "psnr_mean",
    "psnr_std",
    "ssim_mean",
    "ssim_std",
    "time_s",
)


@dataclass(frozen=True)
class SliceResult:
    """One reconstructed slice; metrics are None when unavailable."""

    slice_id: str
    mask: str
    psnr: float | None = None
    ssim: float | None = None
    time_s: float | None = None
    status: str = "ok"


def _fmt(value: float | None, digits: int = 6) -> str:
    if value is None or math.isnan(value):
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}f}"


@dataclass
class ReconReport:
    """Rows of one experiment plus descriptive labels used in comparison tables."""

    name: str
    dataset: str
    mask: str
    method: str
    depth: str = ""
    lam: float | None = None
    rows: list[SliceResult] = field(default_factory=list)

    def _values(self, attr: str) -> list[float]:
        return [v for r in self.rows if (v := getattr(r, attr)) is not None]

    @property
    def psnr_stats(self) -> tuple[float, float]:
        return mean_std(self._values("psnr"))

    @property
    def ssim_stats(self) -> tuple[float, float]:
        return mean_std(self._values("ssim"))

    @property
    def mean_time(self) -> float:
        times = self._values("time_s")
        return math.fsum(times) / len(times) if times else math.nan

    @property
    def failures(self) -> int:
        return sum(1 for r in self.rows if r.status != "ok")

    def metrics_csv(self) -> str:
        """CSV text with one row per slice."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [r.slice_id, r.mask, _fmt(r.psnr), _fmt(r.ssim), _fmt(r.time_s, 3), r.status]
            )
        return buf.getvalue()

    def summary(self) -> str:
        psnr_mean, psnr_std = self.psnr_stats
        ssim_mean, ssim_std = self.ssim_stats
        return (
            f"{self.name}: PSNR {psnr_mean:.2f} ± {psnr_std:.2f} dB, "
            f"SSIM {ssim_mean:.4f} ± {ssim_std:.4f} over {len(self.rows)} slices "
            f"({self.failures} failed)"
        )

    def __repr__(self) -> str:
        return f"ReconReport(name='{self.name}', mask='{self.mask}', method='{self.method}', rows={len(self.rows)})"


def compare_table(reports: Sequence[ReconReport]) -> str:
    """
    One CSV row per report: dataset, mask, method, d, PSNR and SSIM mean and
    standard deviation, mean time per slice.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARE_COLUMNS)
    for rep in reports:
        psnr_mean, psnr_std = rep.psnr_stats
        ssim_mean, ssim_std = rep.ssim_stats
        writer.writerow(
            [
                rep.dataset,
                rep.mask,
                rep.method,
                rep.depth,
                _fmt(psnr_mean),
                _fmt(psnr_std),
                _fmt(ssim_mean),
                _fmt(ssim_std),
                _fmt(rep.mean_time, 3),
            ]
        )
    return buf.getvalue()


def write_compare_table(path: str | Path, reports: Sequence[ReconReport]) -> None:
    Path(path).write_text(compare_table(reports), encoding="utf-8")
