"""
Synthetic datasets for desk-scale experiments.

Three kinds are available: jittered Shepp-Logan heads, piecewise-constant
blobs and smooth Gaussian random fields. All images lie in [0, 1].
"""

import logging
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError
from .imgcore import Image, RngState, save_image

logger = logging.getLogger(__name__)

RAW_SUFFIX = ".srimg"

# (intensity, x0, y0, semi-axis a, semi-axis b, rotation in degrees)
_SHEPP_LOGAN = (
    (1.0, 0.0, 0.0, 0.69, 0.92, 0.0),
    (-0.8, 0.0, -0.0184, 0.6624, 0.874, 0.0),
    (-0.2, 0.22, 0.0, 0.11, 0.31, -18.0),
    (-0.2, -0.22, 0.0, 0.16, 0.41, 18.0),
    (0.1, 0.0, 0.35, 0.21, 0.25, 0.0),
    (0.1, 0.0, 0.1, 0.046, 0.046, 0.0),
    (0.1, 0.0, -0.1, 0.046, 0.046, 0.0),
    (0.1, -0.08, -0.605, 0.046, 0.023, 0.0),
    (0.1, 0.0, -0.605, 0.023, 0.023, 0.0),
    (0.1, 0.06, -0.605, 0.023, 0.046, 0.0),
)


class PhantomKind(str, Enum):
    SHEPP_LOGAN = "shepp-logan"
    PIECEWISE_BLOBS = "piecewise-blobs"
    GAUSSIAN_DRAWS = "gaussian-draws"


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    x = coords[None, :].repeat(size, axis=0)
    y = -coords[:, None].repeat(size, axis=1)
    return x, y


def shepp_logan(size: int, rng: RngState | None = None, jitter: float = 0.0) -> Image:
    """
    Modified Shepp-Logan phantom on a ``size`` x ``size`` grid.

    With ``jitter > 0`` each ellipse centre moves by N(0, jitter) and each
    semi-axis is scaled by U(1 - 2*jitter, 1 + 2*jitter).
    """
    x, y = _grid(size)
    img = np.zeros((size, size))
    for value, x0, y0, a, b, phi in _SHEPP_LOGAN:
        if rng is not None and jitter > 0:
            x0 += rng.normal(0.0, jitter)
            y0 += rng.normal(0.0, jitter)
            a *= rng.uniform(1 - 2 * jitter, 1 + 2 * jitter)
            b *= rng.uniform(1 - 2 * jitter, 1 + 2 * jitter)
        t = np.deg2rad(phi)
        xr = (x - x0) * np.cos(t) + (y - y0) * np.sin(t)
        yr = -(x - x0) * np.sin(t) + (y - y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


def piecewise_blobs(size: int, rng: RngState) -> Image:
    """Zero background with 3 to 6 overlapping discs and rectangles of constant intensity."""
    x, y = _grid(size)
    img = np.zeros((size, size))
    for _ in range(int(rng.integers(3, 7))):
        value = rng.uniform(0.2, 1.0)
        cx, cy = rng.uniform(-0.6, 0.6, size=2)
        if rng.random() < 0.5:
            r = rng.uniform(0.1, 0.35)
            region = (x - cx) ** 2 + (y - cy) ** 2 <= r**2
        else:
            hw, hh = rng.uniform(0.1, 0.35, size=2)
            region = (np.abs(x - cx) <= hw) & (np.abs(y - cy) <= hh)
        img[region] = value
    return img


def gaussian_draw(size: int, rng: RngState, correlation: float | None = None) -> Image:
    """White noise smoothed by a Gaussian filter (width size/16), rescaled to [0, 1]."""
    width = size / 16.0 if correlation is None else correlation
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=width, mode="wrap")
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)


def make_phantoms(kind: str | PhantomKind, size: int, count: int, rng: RngState) -> list[Image]:
    """
    Generate ``count`` synthetic images of one kind.

    Shepp-Logan image 0 is the unjittered phantom; later ones are jittered.

    Raises:
        ParameterError: For an unknown kind or negative count
        DimensionError: For a non-positive size
    """
    try:
        kind = PhantomKind(kind)
    except ValueError as e:
        raise ParameterError(
            f"Unknown phantom kind '{kind}'. Must be one of {[k.value for k in PhantomKind]}"
        ) from e
    if size < 1:
        raise DimensionError(f"Phantom size must be positive, got {size}")
    if count < 0:
        raise ParameterError(f"Phantom count must be >= 0, got {count}")

    images = []
    for k in range(count):
        if kind is PhantomKind.SHEPP_LOGAN:
            images.append(shepp_logan(size, rng, jitter=0.02 if k > 0 else 0.0))
        elif kind is PhantomKind.PIECEWISE_BLOBS:
            images.append(piecewise_blobs(size, rng))
        else:
            images.append(gaussian_draw(size, rng))
    logger.debug("Generated %d %s phantoms of size %d", count, kind.value, size)
    return images


def write_phantoms(directory: str | Path, images: list[Image], prefix: str = "slice") -> list[Path]:
    """Write images as ``<prefix>_<index>.srimg`` files and return their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, img in enumerate(images):
        path = directory / f"{prefix}_{k:04d}{RAW_SUFFIX}"
        save_image(path, img)
        paths.append(path)
    return paths
