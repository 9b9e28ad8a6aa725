"""
Image grids, finite differences and the randomness contract.

Images are 2-D float64 numpy arrays in row-major order; complex fields are
complex128 arrays of the same shape. Randomness always flows through an
explicit ``numpy.random.Generator`` built on the counter-based Philox bit
generator, so equal seeds and equal call sequences give equal streams.
"""

import struct
from pathlib import Path
from typing import TypeAlias

import numpy as np
import numpy.typing as npt

from .errors import DimensionError, FormatError

Image: TypeAlias = npt.NDArray[np.float64]
ComplexField: TypeAlias = npt.NDArray[np.complex128]
RngState: TypeAlias = np.random.Generator

RAW_MAGIC = b"SRIMG1"
_RAW_HEADER = struct.Struct("<II")


def as_image(x: npt.ArrayLike, name: str = "image") -> Image:
    """
    Validate and convert an array to an Image.

    Args:
        x: Array-like with two dimensions
        name: Label used in error messages

    Returns:
        Image: C-contiguous float64 copy-or-view of ``x``

    Raises:
        DimensionError: If ``x`` is not two-dimensional or is empty
        ValueError: If any entry is not finite
    """
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def fd_h(x: Image) -> Image:
    """Horizontal forward difference; the last column is zero (Neumann)."""
    out = np.zeros_like(x, dtype=np.float64)
    out[:, :-1] = x[:, 1:] - x[:, :-1]
    return out


def fd_v(x: Image) -> Image:
    """Vertical forward difference; the last row is zero (Neumann)."""
    out = np.zeros_like(x, dtype=np.float64)
    out[:-1, :] = x[1:, :] - x[:-1, :]
    return out


def fd_h_adjoint(g: Image) -> Image:
    """Adjoint of :func:`fd_h` with respect to the Frobenius inner product."""
    out = np.zeros_like(g, dtype=np.float64)
    out[:, :-1] -= g[:, :-1]
    out[:, 1:] += g[:, :-1]
    return out


def fd_v_adjoint(g: Image) -> Image:
    """Adjoint of :func:`fd_v` with respect to the Frobenius inner product."""
    out = np.zeros_like(g, dtype=np.float64)
    out[:-1, :] -= g[:-1, :]
    out[1:, :] += g[:-1, :]
    return out


def make_rng(seed: int, *stream: int) -> RngState:
    """
    Create a deterministic generator for ``seed`` and an optional stream key.

    Streams with different keys are statistically independent, which lets the
    harness give every slice its own generator without the result depending
    on execution order.

    Args:
        seed: Non-negative 64-bit seed
        *stream: Optional integers identifying a sub-stream (e.g. slice index)

    Returns:
        RngState: Philox-backed numpy Generator
    """
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def gaussian_field(rows: int, cols: int, rng: RngState) -> Image:
    """Draw an image of i.i.d. standard normal entries, advancing ``rng``."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"Field dimensions must be positive, got {rows}x{cols}")
    return rng.standard_normal((rows, cols))


def save_image(path: str | Path, x: npt.ArrayLike) -> None:
    """
    Write an image in the raw format.

    Layout: magic ``SRIMG1``, two little-endian uint32 dims (rows, cols),
    then rows*cols little-endian float32 values in row-major order.
    """
    Path(path).write_bytes(encode_image(x))


def encode_image(x: npt.ArrayLike) -> bytes:
    """Serialize an image to raw-format bytes."""
    arr = as_image(x)
    rows, cols = arr.shape
    return RAW_MAGIC + _RAW_HEADER.pack(rows, cols) + arr.astype("<f4").tobytes(order="C")


def decode_image(blob: bytes, source: str = "<bytes>") -> Image:
    """Parse raw-format bytes into an Image."""
    head = len(RAW_MAGIC) + _RAW_HEADER.size
    if len(blob) < head or not blob.startswith(RAW_MAGIC):
        raise FormatError(f"Not a raw image (bad magic): {source}")
    rows, cols = _RAW_HEADER.unpack_from(blob, len(RAW_MAGIC))
    expected = head + 4 * rows * cols
    if len(blob) != expected:
        raise FormatError(
            f"Raw image {source} declares {rows}x{cols} but holds {len(blob) - head} data bytes"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=head).reshape(rows, cols)
    return data.astype(np.float64)


def load_image(path: str | Path) -> Image:
    """Read an image written by :func:`save_image`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Raw image not found: {path}")
    return decode_image(path.read_bytes(), str(path))
