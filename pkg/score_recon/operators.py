"""
Linear measurement operators for MRI and CT.

MRI uses the orthonormal 2-D DFT in unshifted ``numpy.fft`` layout followed by
a binary k-space mask. CT uses a parallel-beam Radon transform stored as a
sparse matrix with bilinear interpolation, unit detector spacing and unit ray
step, so :func:`backproject` is its exact transpose.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import sparse

from .errors import DegenerateInputError, DimensionError, FormatError, ParameterError
from .imgcore import ComplexField, Image, as_image
from .masks import KMask

logger = logging.getLogger(__name__)

EVALUATION_ANGLE_SETS = {"SV60": 60, "SV30": 30}


class Modality(str, Enum):
    MRI = "mri"
    CT = "ct"


def dft2(x: npt.ArrayLike) -> ComplexField:
    """Orthonormal 2-D DFT (unitary, DC at index [0, 0])."""
    return np.fft.fft2(np.asarray(x), norm="ortho")


def idft2(k: npt.ArrayLike) -> ComplexField:
    """Inverse of :func:`dft2`."""
    return np.fft.ifft2(np.asarray(k), norm="ortho")


def _check_mask(shape: tuple[int, ...], mask: KMask) -> None:
    if tuple(shape) != mask.shape:
        raise DimensionError(f"Array shape {tuple(shape)} does not match mask shape {mask.shape}")


def mri_forward(x: npt.ArrayLike, mask: KMask) -> ComplexField:
    """A x = M F x; unacquired frequencies are zero."""
    arr = np.asarray(x)
    _check_mask(arr.shape, mask)
    return dft2(arr) * mask.keep


def mri_adjoint(y: npt.ArrayLike, mask: KMask) -> ComplexField:
    """A* y = F^-1 M y (complex)."""
    arr = np.asarray(y)
    _check_mask(arr.shape, mask)
    return idft2(arr * mask.keep)


@dataclass(frozen=True)
class AngleSet:
    """Projection angles in radians, strictly increasing in [0, pi)."""

    angles: tuple[float, ...]
    label: str = "custom"

    def __post_init__(self) -> None:
        vals = tuple(float(a) for a in self.angles)
        if not vals:
            raise ParameterError("AngleSet must contain at least one angle")
        if any(a < 0 or a >= math.pi for a in vals):
            raise ParameterError("Angles must lie in [0, pi)")
        if any(b <= a for a, b in zip(vals, vals[1:], strict=False)):
            raise ParameterError("Angles must be strictly increasing")
        object.__setattr__(self, "angles", vals)

    def __len__(self) -> int:
        return len(self.angles)

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.angles, dtype=np.float64)


def sparse_view_angles(n: int) -> AngleSet:
    """Equispaced angles k*pi/n, k = 0..n-1."""
    if n < 1:
        raise ParameterError(f"Number of views must be positive, got {n}")
    return AngleSet(tuple(k * math.pi / n for k in range(n)), label=f"SV{n}")


def preset_angles(name: str) -> AngleSet:
    """Named sparse-view sets: ``SV60`` and ``SV30``."""
    key = name.upper()
    if key not in EVALUATION_ANGLE_SETS:
        raise ParameterError(f"Unknown angle preset '{name}'. Must be one of {list(EVALUATION_ANGLE_SETS)}")
    return sparse_view_angles(EVALUATION_ANGLE_SETS[key])


def save_angles(path: str | Path, angles: AngleSet) -> None:
    """Write one angle (radians, repr precision) per line."""
    Path(path).write_text("".join(f"{a!r}\n" for a in angles.angles), encoding="utf-8")


def load_angles(path: str | Path) -> AngleSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Angle file not found: {path}")
    try:
        vals = [float(line) for line in path.read_text(encoding="utf-8").split() if line]
    except ValueError as e:
        raise FormatError(f"Angle file {path} holds a non-numeric entry") from e
    return AngleSet(tuple(vals), label=path.stem)


@lru_cache(maxsize=8)
def _radon_matrix(size: int, angles: tuple[float, ...], detectors: int) -> sparse.csr_matrix:
    """Sparse system matrix of shape (len(angles) * detectors, size * size)."""
    centre = (size - 1) / 2.0
    t = np.arange(detectors) - (detectors - 1) / 2.0
    reach = math.ceil(math.sqrt(2.0) * size / 2.0) + 1
    s = np.arange(-reach, reach + 1, dtype=np.float64)

    rows_out: list[npt.NDArray[np.intp]] = []
    cols_out: list[npt.NDArray[np.intp]] = []
    vals_out: list[npt.NDArray[np.float64]] = []
    det_index = np.broadcast_to(np.arange(detectors)[:, None], (detectors, s.size))
    for a, theta in enumerate(angles):
        c, sn = math.cos(theta), math.sin(theta)
        px = t[:, None] * c - s[None, :] * sn + centre
        py = t[:, None] * sn + s[None, :] * c + centre
        x0 = np.floor(px).astype(np.intp)
        y0 = np.floor(py).astype(np.intp)
        fx = px - x0
        fy = py - y0
        for dx, dy, w in (
            (0, 0, (1 - fx) * (1 - fy)),
            (1, 0, fx * (1 - fy)),
            (0, 1, (1 - fx) * fy),
            (1, 1, fx * fy),
        ):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < size) & (yi >= 0) & (yi < size) & (w > 0)
            rows_out.append(a * detectors + det_index[ok])
            cols_out.append(yi[ok] * size + xi[ok])
            vals_out.append(w[ok])

    mat = sparse.coo_matrix(
        (np.concatenate(vals_out), (np.concatenate(rows_out), np.concatenate(cols_out))),
        shape=(len(angles) * detectors, size * size),
    ).tocsr()
    logger.debug("Radon matrix %dx%d with %d non-zeros", mat.shape[0], mat.shape[1], mat.nnz)
    return mat


def _square_side(x: Image) -> int:
    if x.shape[0] != x.shape[1]:
        raise DimensionError(f"CT images must be square, got shape {x.shape}")
    return int(x.shape[0])


def radon(x: npt.ArrayLike, angles: AngleSet, detectors: int | None = None) -> Image:
    """
    Parallel-beam line integrals, shape (len(angles), detectors).

    Args:
        x: Square image
        angles: Projection angles
        detectors: Detector bins (default: image side)
    """
    img = as_image(x)
    size = _square_side(img)
    det = size if detectors is None else detectors
    if det < 1:
        raise DimensionError(f"Detector count must be positive, got {det}")
    mat = _radon_matrix(size, angles.angles, det)
    return np.asarray(mat @ img.ravel()).reshape(len(angles), det)


def backproject(sino: npt.ArrayLike, angles: AngleSet, size: int) -> Image:
    """Exact adjoint of :func:`radon` for the given geometry."""
    arr = np.asarray(sino, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != len(angles):
        raise DimensionError(f"Sinogram shape {arr.shape} does not match {len(angles)} angles")
    mat = _radon_matrix(size, angles.angles, int(arr.shape[1]))
    return np.asarray(mat.T @ arr.ravel()).reshape(size, size)


def _ramlak_response(length: int) -> npt.NDArray[np.float64]:
    """Frequency response of the spatial Ram-Lak kernel on a circular grid."""
    kernel = np.zeros(length)
    kernel[0] = 0.25
    n = np.concatenate([np.arange(1, length // 2 + 1, 2), np.arange(length // 2 - 1, 0, -2)])
    kernel[1::2] = -1.0 / (np.pi * n) ** 2
    return np.real(np.fft.fft(kernel))


def fbp(sino: npt.ArrayLike, angles: AngleSet, size: int) -> Image:
    """
    Filtered back-projection with the Ram-Lak filter.

    Each projection is convolved with the spatial Ram-Lak kernel (via FFT on a
    zero-padded grid) and back-projected with weight pi / len(angles).

    Raises:
        DegenerateInputError: If fewer than two angles are given
    """
    arr = np.asarray(sino, dtype=np.float64)
    if len(angles) < 2:
        raise DegenerateInputError("FBP needs at least two projection angles")
    if arr.ndim != 2 or arr.shape[0] != len(angles):
        raise DimensionError(f"Sinogram shape {arr.shape} does not match {len(angles)} angles")
    det = int(arr.shape[1])
    padded = max(64, 1 << math.ceil(math.log2(2 * det)))
    response = _ramlak_response(padded)
    spectrum = np.fft.fft(arr, n=padded, axis=1)
    filtered = np.real(np.fft.ifft(spectrum * response, axis=1))[:, :det]
    return backproject(filtered, angles, size) * (math.pi / len(angles))


class MeasurementOp(ABC):
    """
    A linear forward model y = A x for a fixed image shape.

    ``adjoint`` is the exact Hilbert adjoint. ``dc_adjoint`` is the
    back-projection used in data-consistency steps: A* for MRI and FBP for
    CT, which approximates the pseudo-inverse of the sparse-view Radon
    transform much better than its transpose.
    """

    modality: Modality
    image_shape: tuple[int, int]

    @abstractmethod
    def forward(self, x: npt.ArrayLike) -> npt.NDArray[Any]:
        """Apply A."""

    @abstractmethod
    def adjoint(self, y: npt.ArrayLike) -> npt.NDArray[Any]:
        """Apply the exact adjoint of A."""

    @abstractmethod
    def dc_adjoint(self, y: npt.ArrayLike) -> npt.NDArray[Any]:
        """Apply the data-consistency back-projection."""

    @abstractmethod
    def norm_squared(self) -> float:
        """Squared spectral norm of A."""

    def zero_filled(self, y: npt.ArrayLike) -> Image:
        """Baseline reconstruction Re(dc_adjoint(y))."""
        return np.real(self.dc_adjoint(y)).astype(np.float64)

    def residual(self, x: npt.ArrayLike, y: npt.ArrayLike) -> npt.NDArray[Any]:
        """A x - y."""
        return self.forward(x) - np.asarray(y)

    @property
    def label(self) -> str:
        return self.modality.value


@dataclass(frozen=True)
class MriOperator(MeasurementOp):
    mask: KMask
    modality: Modality = field(default=Modality.MRI, init=False)

    @property
    def image_shape(self) -> tuple[int, int]:  # type: ignore[override]
        return self.mask.shape

    def forward(self, x: npt.ArrayLike) -> ComplexField:
        return mri_forward(x, self.mask)

    def adjoint(self, y: npt.ArrayLike) -> ComplexField:
        return mri_adjoint(y, self.mask)

    def dc_adjoint(self, y: npt.ArrayLike) -> ComplexField:
        return mri_adjoint(y, self.mask)

    def norm_squared(self) -> float:
        return 1.0

    @property
    def label(self) -> str:
        return self.mask.label

    def __repr__(self) -> str:
        return f"MriOperator(mask={self.mask!r})"


@dataclass(frozen=True)
class CtOperator(MeasurementOp):
    angles: AngleSet
    size: int
    detectors: int | None = None
    modality: Modality = field(default=Modality.CT, init=False)

    def __post_init__(self) -> None:
        if self.size < 1:
            raise DimensionError(f"CT image side must be positive, got {self.size}")
        if self.detectors is None:
            object.__setattr__(self, "detectors", self.size)

    @property
    def image_shape(self) -> tuple[int, int]:  # type: ignore[override]
        return (self.size, self.size)

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (len(self.angles), int(self.detectors or self.size))

    def forward(self, x: npt.ArrayLike) -> Image:
        img = as_image(x)
        if img.shape != self.image_shape:
            raise DimensionError(f"Image shape {img.shape} does not match operator {self.image_shape}")
        return radon(img, self.angles, self.detectors)

    def adjoint(self, y: npt.ArrayLike) -> Image:
        return backproject(y, self.angles, self.size)

    def dc_adjoint(self, y: npt.ArrayLike) -> Image:
        return fbp(y, self.angles, self.size)

    def norm_squared(self) -> float:
        return _radon_norm_squared(self.size, self.angles.angles, int(self.detectors or self.size))

    @property
    def label(self) -> str:
        return self.angles.label

    def __repr__(self) -> str:
        return f"CtOperator(angles={self.angles.label}, size={self.size}, detectors={self.detectors})"


@lru_cache(maxsize=8)
def _radon_norm_squared(size: int, angles: tuple[float, ...], detectors: int, iters: int = 60) -> float:
    """Largest eigenvalue of R^T R by power iteration from a constant start."""
    mat = _radon_matrix(size, angles, detectors)
    v = np.full(size * size, 1.0 / size)
    value = 0.0
    for _ in range(iters):
        w = mat.T @ (mat @ v)
        value = float(np.linalg.norm(w))
        if value == 0.0:
            return 0.0
        v = w / value
    return value
