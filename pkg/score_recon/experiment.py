"""
ExperimentConfig: the validated description of one reconstruction run.

Instances are produced by :class:`~score_recon.experiment_builder.ExperimentBuilder`
(or its async twin) from Markdown experiment cards or fluent calls, and consumed
by :func:`score_recon.runner.run_experiment`.
"""

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .diffusion import SigmaSchedule, make_schedule
from .errors import ParameterError
from .imgcore import RngState
from .masks import (
    KMask,
    full_mask,
    mask_gaussian1d,
    mask_gaussian2d,
    mask_lowpass,
    mask_poisson_disk,
    mask_radial,
    preset_mask,
    spokes_for_acceleration,
)
from .operators import CtOperator, MeasurementOp, Modality, MriOperator, sparse_view_angles
from .samplers import AldParams, PcParams
from .variational import TvParams

RANDOM_MASKS = {"G1D4", "G1D8", "G2D4", "P15", "GAUSSIAN1D", "GAUSSIAN2D", "POISSON"}
MRI_MASKS = RANDOM_MASKS | {"R11", "RADIAL", "LOWPASS", "FULL"}


class Method(str, Enum):
    ALD = "ald"
    PC = "pc"
    TV = "tv"
    ZERO_FILLED = "zero-filled"

    @property
    def stochastic(self) -> bool:
        return self in (Method.ALD, Method.PC)


@dataclass(frozen=True)
class MaskSpec:
    """
    Undersampling pattern.

    MRI kinds: the presets ``G1D4``, ``G1D8``, ``G2D4``, ``R11``, ``P15``, or the
    generators ``gaussian1d``, ``gaussian2d``, ``radial``, ``poisson``,
    ``lowpass`` and ``full``. CT uses ``sparse-view`` with ``views`` angles.
    """

    kind: str = "G1D4"
    accel: float = 4.0
    center_frac: float = 0.04
    spokes: int | None = None
    half_width: int = 1
    views: int = 60
    detectors: int | None = None

    @property
    def random(self) -> bool:
        return self.kind.upper() in RANDOM_MASKS

    @property
    def label(self) -> str:
        key = self.kind.upper()
        if key == "SPARSE-VIEW":
            return f"SV{self.views}"
        prefixes = {"GAUSSIAN1D": "G1D", "GAUSSIAN2D": "G2D", "POISSON": "P", "RADIAL": "R"}
        if key in prefixes:
            return f"{prefixes[key]}{self.accel:g}"
        if key == "LOWPASS":
            return f"LP{self.half_width}"
        return self.kind

    def build_mask(self, rows: int, cols: int, rng: RngState) -> KMask:
        key = self.kind.upper()
        if key == "GAUSSIAN1D":
            return mask_gaussian1d(cols, self.accel, self.center_frac, rng, rows=rows)
        if key == "GAUSSIAN2D":
            return mask_gaussian2d(rows, cols, self.accel, rng)
        if key == "POISSON":
            return mask_poisson_disk(rows, cols, self.accel, rng)
        if key == "RADIAL":
            spokes = self.spokes or spokes_for_acceleration(rows, cols, self.accel)
            return mask_radial(rows, cols, spokes)
        if key == "LOWPASS":
            return mask_lowpass(rows, cols, self.half_width)
        if key == "FULL":
            return full_mask(rows, cols)
        return preset_mask(self.kind, rows, cols, rng)


@dataclass(frozen=True)
class ModelSpec:
    """
    Where the score comes from.

    ``kind`` is ``checkpoint`` (``path`` to an SRCKPT1 file, EMA weights unless
    ``use_ema`` is false) or ``gaussian-oracle``; the oracle is either ``fit``
    to the normalized dataset or built from scalar ``mean`` and ``variance``.
    """

    kind: str = "gaussian-oracle"
    path: Path | None = None
    use_ema: bool = True
    fit: str = "dataset"
    mean: float = 0.0
    variance: float = 1.0


@dataclass(frozen=True)
class ScheduleSpec:
    n: int | None = None
    sigma_min: float = 0.01
    sigma_max: float = 378.0


@dataclass(frozen=True)
class SamplerSpec:
    n_start: int = 230
    m: int = 3
    eps0: float = 2e-5
    snr: float = 0.16
    corrector_steps: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment."""

    name: str
    modality: Modality
    mask: MaskSpec
    method: Method
    dataset: Path
    output: Path
    seed: int | None = None
    model: ModelSpec | None = None
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    tv: TvParams = field(default_factory=TvParams)
    lam: float = 1.0
    workers: int = 1
    record_timings: bool = True
    notes: str = ""
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def stochastic(self) -> bool:
        return self.method.stochastic or self.mask.random

    @property
    def mask_label(self) -> str:
        return self.mask.label

    def sigma_schedule(self) -> SigmaSchedule:
        n = self.schedule.n or (500 if self.method is Method.ALD else 250)
        return make_schedule(n, self.schedule.sigma_min, self.schedule.sigma_max)

    def ald_params(self) -> AldParams:
        s = self.sampler
        n = len(self.sigma_schedule())
        return AldParams(n=n, n_start=min(s.n_start, n), m=s.m, lam=self.lam, eps0=s.eps0)

    def pc_params(self) -> PcParams:
        s = self.sampler
        return PcParams(
            n=len(self.sigma_schedule()), lam=self.lam, snr=s.snr, corrector_steps=s.corrector_steps
        )

    def tv_params(self) -> TvParams:
        return replace(self.tv, lam=self.lam)

    def build_operator(self, shape: tuple[int, int], rng: RngState) -> MeasurementOp:
        """Measurement operator for images of ``shape`` (square for CT)."""
        rows, cols = shape
        if self.modality is Modality.CT:
            if rows != cols:
                raise ParameterError(f"CT operator needs a square image, got {rows}x{cols}")
            return CtOperator(sparse_view_angles(self.mask.views), rows, self.mask.detectors)
        return MriOperator(self.mask.build_mask(rows, cols, rng))

    def to_dict(self) -> dict[str, Any]:
        """Plain-data echo suitable for YAML."""

        def plain(value: Any) -> Any:
            if isinstance(value, Enum):
                return value.value
            if isinstance(value, Path):
                return str(value)
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            if isinstance(value, list | tuple):
                return [plain(v) for v in value]
            return value

        data = plain(asdict(self))
        if self.model is None:
            data["model"] = None
        return data

    def __repr__(self) -> str:
        return (
            f"ExperimentConfig(name='{self.name}', modality={self.modality.value}, "
            f"mask={self.mask_label}, method={self.method.value}, seed={self.seed})"
        )
