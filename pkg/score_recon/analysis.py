"""
Image-quality metrics and dataset statistics.

PSNR and SSIM use the dynamic range of the reference image as peak value.
"""

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .errors import DegenerateInputError, DimensionError, ParameterError
from .imgcore import Image, as_image, fd_h, fd_v

logger = logging.getLogger(__name__)

SSIM_MIN_SIDE = 11
DEFAULT_HIST_RANGE = (-0.35, 0.35)
DEFAULT_HIST_BINS = 101


def _pair(x: npt.ArrayLike, ref: npt.ArrayLike) -> tuple[Image, Image]:
    a = as_image(x, "x")
    b = as_image(ref, "ref")
    if a.shape != b.shape:
        raise DimensionError(f"Shapes differ: {a.shape} vs reference {b.shape}")
    return a, b


def dynamic_range(ref: Image) -> float:
    return float(np.max(ref) - np.min(ref))


def psnr(x: npt.ArrayLike, ref: npt.ArrayLike) -> float:
    """
    Peak signal-to-noise ratio in dB with peak = max(ref) - min(ref).

    Returns ``math.inf`` when the images are identical.

    Raises:
        DimensionError: If the shapes differ
        DegenerateInputError: If the reference is constant
    """
    a, b = _pair(x, ref)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    peak = dynamic_range(b)
    if peak == 0.0:
        raise DegenerateInputError("PSNR is undefined for a constant reference image")
    return 10.0 * math.log10(peak**2 / mse)


def ssim(x: npt.ArrayLike, ref: npt.ArrayLike) -> float:
    """
    Mean structural similarity, 11x11 Gaussian window with sigma 1.5.

    K1 = 0.01, K2 = 0.03 and the data range is that of ``ref``.

    Raises:
        DimensionError: If the shapes differ or either side is below 11 pixels
    """
    from skimage.metrics import structural_similarity

    a, b = _pair(x, ref)
    if min(a.shape) < SSIM_MIN_SIDE:
        raise DimensionError(f"SSIM needs images of at least {SSIM_MIN_SIDE}x{SSIM_MIN_SIDE}, got {a.shape}")
    data_range = dynamic_range(b)
    if data_range == 0.0:
        if np.array_equal(a, b):
            return 1.0
        raise DegenerateInputError("SSIM is undefined for a constant reference image")
    return float(
        structural_similarity(
            a,
            b,
            data_range=data_range,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
    )


def mean_image(dataset: Sequence[npt.ArrayLike]) -> Image:
    """Pixelwise mean of equally shaped images."""
    if not dataset:
        raise DegenerateInputError("Cannot average an empty dataset")
    images = [as_image(x) for x in dataset]
    shape = images[0].shape
    if any(img.shape != shape for img in images):
        raise DimensionError("All images in the dataset must share one shape")
    return np.mean(np.stack(images), axis=0)


@dataclass(frozen=True)
class Histogram:
    """
    Normalized histogram on fixed bins.

    ``counts`` is a density (sum(counts * widths) == 1) when ``normalized``.
    """

    bin_edges: npt.NDArray[np.float64]
    counts: npt.NDArray[np.float64]
    normalized: bool = True

    def __post_init__(self) -> None:
        if len(self.counts) != len(self.bin_edges) - 1:
            raise DimensionError("Histogram needs exactly one count per bin")

    @property
    def centers(self) -> npt.NDArray[np.float64]:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self) -> npt.NDArray[np.float64]:
        return np.diff(self.bin_edges)

    @property
    def neg_log_density(self) -> npt.NDArray[np.float64]:
        """-log(density); empty bins map to +inf."""
        with np.errstate(divide="ignore"):
            return -np.log(self.counts)

    def mass(self) -> float:
        return float(np.sum(self.counts * self.widths))


def _pooled_histogram(values: npt.NDArray[np.float64], bins: int, lo: float, hi: float) -> Histogram:
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    total = counts.sum()
    if total == 0:
        logger.warning("No gradient values fall in [%g, %g]; histogram is empty", lo, hi)
        return Histogram(edges, counts.astype(np.float64), normalized=False)
    density = counts / (total * np.diff(edges))
    return Histogram(edges, density.astype(np.float64))


def grad_neg_log_hist(
    dataset: Sequence[npt.ArrayLike],
    bins: int = DEFAULT_HIST_BINS,
    lo: float = DEFAULT_HIST_RANGE[0],
    hi: float = DEFAULT_HIST_RANGE[1],
) -> tuple[Histogram, Histogram]:
    """
    Histograms of all horizontal and vertical finite differences in a dataset.

    Values are pooled over every image, binned on [lo, hi] and normalized to
    unit mass within the range; use :attr:`Histogram.neg_log_density` for the
    negative log plot.

    Returns:
        tuple: (histogram of fd_h values, histogram of fd_v values)
    """
    if not lo < hi:
        raise ParameterError(f"Need lo < hi, got {lo}, {hi}")
    if bins < 1:
        raise ParameterError(f"bins must be >= 1, got {bins}")
    if not dataset:
        raise DegenerateInputError("Cannot histogram an empty dataset")
    images = [as_image(x) for x in dataset]
    h_vals = np.concatenate([fd_h(x).ravel() for x in images])
    v_vals = np.concatenate([fd_v(x).ravel() for x in images])
    return _pooled_histogram(h_vals, bins, lo, hi), _pooled_histogram(v_vals, bins, lo, hi)


def write_histogram_csv(path: str | Path, hist: Histogram) -> None:
    """Two columns: bin_center, neg_log_density (``inf`` for empty bins)."""
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["bin_center", "neg_log_density"])
        for center, value in zip(hist.centers, hist.neg_log_density, strict=True):
            writer.writerow([repr(float(center)), repr(float(value))])


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """
    Mean and population standard deviation of finite values; NaN when none.

    Infinite or NaN entries (a PSNR of an exact reconstruction, say) are
    left out with a warning naming how many were dropped.
    """
    finite = [v for v in values if math.isfinite(v)]
    if len(finite) < len(values):
        dropped = len(values) - len(finite)
        logger.warning("mean_std dropped %d non-finite of %d values", dropped, len(values))
    if not finite:
        return math.nan, math.nan
    arr = np.asarray(finite)
    return float(arr.mean()), float(arr.std())
