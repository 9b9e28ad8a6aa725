"""
k-space undersampling masks.

Masks are generated in centred coordinates (DC in the middle) and stored in
the native layout of ``numpy.fft`` (DC at index 0), so they can be multiplied
directly with :func:`score_recon.operators.dft2` output. Every stochastic
generator consumes an explicit generator and is reproducible from its seed.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .errors import DimensionError, ParameterError
from .imgcore import RngState, load_image, save_image

logger = logging.getLogger(__name__)

EVALUATION_MASKS = ("G1D4", "G1D8", "G2D4", "R11", "P15")


@dataclass(frozen=True, eq=False)
class KMask:
    """
    Binary k-space sampling mask M = diag(m_1, ..., m_n).

    Attributes:
        keep: Boolean array, True where the frequency is acquired (fft layout)
        label: Short name used in reports (e.g. "G1D4")
    """

    keep: npt.NDArray[np.bool_]
    label: str = "custom"

    def __post_init__(self) -> None:
        keep = np.ascontiguousarray(self.keep, dtype=bool)
        if keep.ndim != 2:
            raise DimensionError(f"Mask must be 2-D, got shape {keep.shape}")
        if not keep.any():
            raise ParameterError(f"Mask '{self.label}' keeps no frequencies")
        keep.setflags(write=False)
        object.__setattr__(self, "keep", keep)

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.keep.shape[0]), int(self.keep.shape[1]))

    @property
    def kept(self) -> int:
        return int(self.keep.sum())

    @property
    def kept_fraction(self) -> float:
        return self.kept / self.keep.size

    @property
    def acceleration(self) -> float:
        return self.keep.size / self.kept

    def centered(self) -> npt.NDArray[np.bool_]:
        """Return the mask with DC moved to the centre, for display."""
        return np.fft.fftshift(self.keep)

    def is_conjugate_symmetric(self) -> bool:
        """True if keep[k] == keep[-k] for every frequency k."""
        mirrored = np.roll(self.keep[::-1, ::-1], shift=(1, 1), axis=(0, 1))
        return bool(np.array_equal(self.keep, mirrored))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KMask):
            return NotImplemented
        return np.array_equal(self.keep, other.keep)

    def __hash__(self) -> int:
        return hash((self.shape, self.keep.tobytes()))

    def __repr__(self) -> str:
        rows, cols = self.shape
        return f"KMask(label='{self.label}', shape={rows}x{cols}, kept_fraction={self.kept_fraction:.4f})"


def _from_centered(keep_centered: npt.NDArray[np.bool_], label: str) -> KMask:
    return KMask(np.fft.ifftshift(keep_centered), label=label)


def _weighted_choice(
    weights: npt.NDArray[np.float64], count: int, rng: RngState
) -> npt.NDArray[np.intp]:
    """Draw ``count`` distinct indices with probability proportional to ``weights``."""
    if count <= 0:
        return np.empty(0, dtype=np.intp)
    # Gumbel top-k is equivalent to successive draws without replacement
    keys = np.log(weights) + rng.gumbel(size=weights.shape)
    return np.argsort(-keys, kind="stable")[:count]


def _budget(total: int, accel: float) -> int:
    return max(1, math.floor(total / accel + 0.5))


def mask_gaussian1d(
    cols: int,
    accel: float,
    center_frac: float,
    rng: RngState,
    rows: int | None = None,
) -> KMask:
    """
    Cartesian 1-D Gaussian variable-density mask (phase-encoding columns).

    ``floor(cols * center_frac)`` central columns are always kept; the other
    kept columns are drawn without replacement with probability proportional
    to a Gaussian profile of standard deviation cols/6 centred at k=0, until
    ``round(cols / accel)`` columns are kept in total.

    Args:
        cols: Number of phase-encoding columns
        accel: Acceleration factor (>= 1)
        center_frac: Fraction of always-kept central columns, in [0, 1)
        rng: Generator consumed for the random columns
        rows: Number of rows (defaults to ``cols``); the mask is constant along rows

    Returns:
        KMask: Mask labelled ``G1D<accel>``
    """
    rows = cols if rows is None else rows
    if cols < 1 or rows < 1:
        raise DimensionError(f"Mask dimensions must be positive, got {rows}x{cols}")
    if accel < 1:
        raise ParameterError(f"Acceleration must be >= 1, got {accel}")
    if not 0 <= center_frac < 1:
        raise ParameterError(f"center_frac must lie in [0, 1), got {center_frac}")

    n_center = math.floor(cols * center_frac)
    n_total = max(_budget(cols, accel), n_center)
    start = cols // 2 - n_center // 2
    chosen = np.zeros(cols, dtype=bool)
    chosen[start : start + n_center] = True

    candidates = np.flatnonzero(~chosen)
    k = candidates - cols // 2
    sigma = cols / 6.0
    weights = np.exp(-0.5 * (k / sigma) ** 2)
    picked = _weighted_choice(weights, n_total - n_center, rng)
    chosen[candidates[picked]] = True

    label = f"G1D{accel:g}"
    logger.debug("%s: %d of %d columns kept (%d central)", label, n_total, cols, n_center)
    return _from_centered(np.broadcast_to(chosen, (rows, cols)).copy(), label)


def mask_gaussian2d(rows: int, cols: int, accel: float, rng: RngState) -> KMask:
    """
    2-D Gaussian variable-density mask.

    Exactly ``round(rows * cols / accel)`` locations are drawn without
    replacement with probability proportional to a separable Gaussian of
    standard deviations rows/6 and cols/6 around DC.
    """
    if rows < 1 or cols < 1:
        raise DimensionError(f"Mask dimensions must be positive, got {rows}x{cols}")
    if accel < 1:
        raise ParameterError(f"Acceleration must be >= 1, got {accel}")
    kr = np.arange(rows) - rows // 2
    kc = np.arange(cols) - cols // 2
    weights = np.exp(-0.5 * ((kr[:, None] / (rows / 6.0)) ** 2 + (kc[None, :] / (cols / 6.0)) ** 2))
    picked = _weighted_choice(weights.ravel(), _budget(rows * cols, accel), rng)
    keep = np.zeros(rows * cols, dtype=bool)
    keep[picked] = True
    return _from_centered(keep.reshape(rows, cols), f"G2D{accel:g}")


def mask_radial(rows: int, cols: int, spokes: int) -> KMask:
    """
    Radial mask of ``spokes`` straight lines through the k-space centre.

    Spoke k has angle k*pi/spokes; each spoke is rasterised at half-pixel
    steps out to the corners of the grid.
    """
    if rows < 1 or cols < 1:
        raise DimensionError(f"Mask dimensions must be positive, got {rows}x{cols}")
    if spokes < 1:
        raise ParameterError(f"Radial mask needs at least one spoke, got {spokes}")
    radius = math.hypot(rows / 2, cols / 2)
    t = np.arange(-radius, radius + 0.5, 0.5)
    theta = np.arange(spokes) * math.pi / spokes
    r_idx = np.rint(np.outer(np.sin(theta), t) + rows // 2).astype(np.intp).ravel()
    c_idx = np.rint(np.outer(np.cos(theta), t) + cols // 2).astype(np.intp).ravel()
    inside = (r_idx >= 0) & (r_idx < rows) & (c_idx >= 0) & (c_idx < cols)
    keep = np.zeros((rows, cols), dtype=bool)
    keep[r_idx[inside], c_idx[inside]] = True
    return _from_centered(keep, f"R{spokes}")


def spokes_for_acceleration(rows: int, cols: int, accel: float) -> int:
    """Smallest spoke count whose radial mask keeps at least 1/accel of k-space."""
    target = 1.0 / accel
    for spokes in range(1, 4 * max(rows, cols) + 1):
        if mask_radial(rows, cols, spokes).kept_fraction >= target:
            return spokes
    return 4 * max(rows, cols)


def _poisson_points(
    rows: int,
    cols: int,
    radius: float,
    forced: npt.NDArray[np.bool_],
    rng: RngState,
) -> npt.NDArray[np.bool_]:
    """Maximal random sequential Poisson-disk set on the grid, outside ``forced``."""
    reach = math.ceil(radius)
    offsets = [
        (dr, dc)
        for dr in range(-reach, reach + 1)
        for dc in range(-reach, reach + 1)
        if 0 < dr * dr + dc * dc < radius * radius
    ]
    accepted = np.zeros((rows, cols), dtype=bool)
    for flat in rng.permutation(rows * cols):
        r, c = divmod(int(flat), cols)
        if forced[r, c]:
            continue
        blocked = False
        for dr, dc in offsets:
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols and accepted[rr, cc]:
                blocked = True
                break
        if not blocked:
            accepted[r, c] = True
    return accepted


def mask_poisson_disk(
    rows: int,
    cols: int,
    accel: float,
    rng: RngState,
    radius: float | None = None,
    center_size: int | None = None,
) -> KMask:
    """
    Poisson-disk mask with a fully sampled square centre.

    Outside the centre no two kept points are closer than ``radius`` grid
    units. When ``radius`` is omitted it starts from the random-sequential
    packing estimate sqrt(0.7 * accel) and shrinks by 5% until enough points
    fit; surplus points are then dropped at random so the mask keeps exactly
    ``round(rows * cols / accel)`` locations.

    Args:
        rows: Mask rows
        cols: Mask columns
        accel: Acceleration factor (>= 1)
        rng: Generator consumed for point order and thinning
        radius: Minimum distance between kept points outside the centre
        center_size: Side of the forced central square (default 4% of the smaller side, at least 2)
    """
    if rows < 1 or cols < 1:
        raise DimensionError(f"Mask dimensions must be positive, got {rows}x{cols}")
    if accel < 1:
        raise ParameterError(f"Acceleration must be >= 1, got {accel}")
    if radius is not None and radius <= 0:
        raise ParameterError(f"Poisson-disk radius must be positive, got {radius}")

    side = max(2, round(0.04 * min(rows, cols))) if center_size is None else center_size
    forced = np.zeros((rows, cols), dtype=bool)
    r0, c0 = rows // 2 - side // 2, cols // 2 - side // 2
    forced[max(r0, 0) : r0 + side, max(c0, 0) : c0 + side] = True

    budget = _budget(rows * cols, accel)
    wanted = max(budget - int(forced.sum()), 0)
    adaptive = radius is None
    current = math.sqrt(0.7 * accel) if radius is None else radius
    while True:
        points = _poisson_points(rows, cols, current, forced, rng)
        if points.sum() >= wanted or not adaptive or current <= 1.0:
            break
        current *= 0.95

    flat = np.flatnonzero(points)
    if flat.size > wanted:
        flat = rng.choice(flat, size=wanted, replace=False)
    keep = forced.copy()
    keep.ravel()[flat] = True
    logger.debug("P%g: radius %.3f, %d points kept", accel, current, int(keep.sum()))
    return _from_centered(keep, f"P{accel:g}")


def mask_lowpass(rows: int, cols: int, half_width: int) -> KMask:
    """
    Conjugate-symmetric band of columns |k| <= half_width (constant along rows).

    Because the band is symmetric, Re(A* y) of data from a real image is an
    exact orthogonal projection, which is what the data-consistency algebra
    relies on.
    """
    if half_width < 0:
        raise ParameterError(f"half_width must be >= 0, got {half_width}")
    k = np.fft.fftfreq(cols, d=1.0 / cols)
    band = np.abs(k) <= half_width
    return KMask(np.broadcast_to(band, (rows, cols)).copy(), label=f"LP{half_width}")


def full_mask(rows: int, cols: int) -> KMask:
    """Mask keeping every frequency (A = F)."""
    return KMask(np.ones((rows, cols), dtype=bool), label="full")


def preset_mask(name: str, rows: int, cols: int, rng: RngState) -> KMask:
    """
    Build one of the named evaluation masks.

    Names: ``G1D4``/``G1D8`` (1-D Gaussian, 4% centre), ``G2D4`` (2-D Gaussian),
    ``R11`` (radial, about 11-fold), ``P15`` (Poisson disk, 15-fold), ``full``.
    """
    key = name.upper()
    if key == "G1D4":
        return mask_gaussian1d(cols, 4, 0.04, rng, rows=rows)
    if key == "G1D8":
        return mask_gaussian1d(cols, 8, 0.04, rng, rows=rows)
    if key == "G2D4":
        return mask_gaussian2d(rows, cols, 4, rng)
    if key == "R11":
        spokes = spokes_for_acceleration(rows, cols, 11)
        return KMask(mask_radial(rows, cols, spokes).keep, label="R11")
    if key == "P15":
        return mask_poisson_disk(rows, cols, 15, rng)
    if key == "FULL":
        return full_mask(rows, cols)
    raise ParameterError(f"Unknown mask preset '{name}'. Must be one of {[*EVALUATION_MASKS, 'full']}")


def save_mask(path: str | Path, mask: KMask) -> None:
    """Write a mask in the raw image format with 0/1 entries (fft layout)."""
    save_image(path, mask.keep.astype(np.float64))


def load_mask(path: str | Path, label: str | None = None) -> KMask:
    """Read a mask written by :func:`save_mask`."""
    path = Path(path)
    data = load_image(path)
    return KMask(data > 0.5, label=label or path.stem)
