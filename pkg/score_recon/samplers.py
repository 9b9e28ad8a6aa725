"""
Posterior samplers: annealed Langevin dynamics and predictor-corrector.

Both samplers treat the measurement y = A x through the data-consistency
mapping x <- Re(x + lambda * A*(y - A x)), where A* is the operator's
``dc_adjoint`` (F^-1 M for MRI, filtered back-projection for CT). With
lambda = 0 they reduce to unconditional sampling from the score model.
"""

import copy
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt
from tqdm import tqdm

from .analysis import psnr
from .diffusion import SigmaSchedule
from .errors import DimensionError, ParameterError, SamplerDivergenceError
from .imgcore import Image, RngState
from .operators import MeasurementOp
from .scoremodel import ScoreModel

logger = logging.getLogger(__name__)

ProgressHook = Callable[[int, float | None], None]


@dataclass(frozen=True)
class AldParams:
    """
    Annealed Langevin dynamics settings.

    The step size at noise level sigma is eps0 * (sigma / sigma_1)^2 and the
    data term is tempered by gamma = sigma.
    """

    n: int = 500
    n_start: int = 230
    m: int = 3
    lam: float = 1.0
    eps0: float = 2e-5

    def __post_init__(self) -> None:
        errors = []
        if self.n < 1:
            errors.append(f"n must be >= 1, got {self.n}")
        if not 1 <= self.n_start <= self.n:
            errors.append(f"n_start must lie in 1..n, got {self.n_start}")
        if self.m < 0:
            errors.append(f"m must be >= 0, got {self.m}")
        if not 0 <= self.lam <= 1:
            errors.append(f"lam must lie in [0, 1], got {self.lam}")
        if self.eps0 <= 0:
            errors.append(f"eps0 must be positive, got {self.eps0}")
        if errors:
            raise ParameterError("AldParams validation failed:\n" + "\n".join(f"  - {e}" for e in errors))

    def step_size(self, sigma: float, sigma_1: float) -> float:
        return self.eps0 * (sigma / sigma_1) ** 2


@dataclass(frozen=True)
class PcParams:
    """Predictor-corrector settings; ``snr`` drives the corrector step size."""

    n: int = 250
    lam: float = 1.0
    snr: float = 0.16
    corrector_steps: int = 1

    def __post_init__(self) -> None:
        errors = []
        if self.n < 1:
            errors.append(f"n must be >= 1, got {self.n}")
        if not 0 <= self.lam <= 1:
            errors.append(f"lam must lie in [0, 1], got {self.lam}")
        if self.snr <= 0:
            errors.append(f"snr must be positive, got {self.snr}")
        if self.corrector_steps < 0:
            errors.append(f"corrector_steps must be >= 0, got {self.corrector_steps}")
        if errors:
            raise ParameterError("PcParams validation failed:\n" + "\n".join(f"  - {e}" for e in errors))


def data_consistency(
    x: Image, y: npt.ArrayLike, op: MeasurementOp, lam: float
) -> Image:
    """
    Re(x + lam * A*(y - A x)).

    For conjugate-symmetric MRI masks and lam = 1 this is the orthogonal
    projection onto {x : A x = y}.

    Raises:
        ParameterError: If lam is outside [0, 1]
        DimensionError: If x does not have the operator's image shape
    """
    if not 0 <= lam <= 1:
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != op.image_shape:
        raise DimensionError(f"Image shape {x.shape} does not match operator {op.image_shape}")
    if lam == 0:
        return x.copy()
    correction = op.dc_adjoint(np.asarray(y) - op.forward(x))
    return np.real(x + lam * correction).astype(np.float64)


def _check_finite(x: Image, level: int, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise SamplerDivergenceError(level, step)


def _report(
    hook: ProgressHook | None, every: int, level: int, x: Image, reference: Image | None
) -> None:
    if hook is None or level % every:
        return
    hook(level, psnr(x, reference) if reference is not None else None)


def _check_schedule(schedule: SigmaSchedule, n: int) -> None:
    if len(schedule) != n:
        raise ParameterError(f"Schedule has {len(schedule)} levels, sampler expects {n}")


def ald_sample(
    model: ScoreModel,
    y: npt.ArrayLike,
    op: MeasurementOp,
    p: AldParams,
    schedule: SigmaSchedule,
    rng: RngState,
    reference: Image | None = None,
    callback: ProgressHook | None = None,
    every: int = 10,
    progress: bool = False,
) -> Image:
    """
    Posterior sampling by annealed Langevin dynamics.

    Starts from x ~ N(0, I) and runs levels i = n_start-1 .. 0 with ``p.m``
    in-place Langevin steps at sigma = schedule[i + 1]:

        x <- x + eps (s(x, sigma) - lam Re(A*(A x - y)) / gamma^2) + sqrt(2 eps) z

    Args:
        model: Score model
        y: Measurements
        op: Measurement operator
        p: Sampler settings
        schedule: Noise ladder with ``p.n`` levels
        rng: Generator for initialisation and Langevin noise
        reference: Ground truth for progress PSNR
        callback: Called with (level, psnr or None) every ``every`` levels
        every: Callback period in levels
        progress: Show a tqdm progress bar

    Returns:
        Image: The final iterate

    Raises:
        SamplerDivergenceError: If an iterate becomes non-finite
    """
    _check_schedule(schedule, p.n)
    y = np.asarray(y)
    rows, cols = op.image_shape
    x = rng.standard_normal((rows, cols))
    sigma_1 = schedule[1]

    for i in tqdm(range(p.n_start - 1, -1, -1), desc="ald", disable=not progress):
        sigma = schedule[i + 1]
        eps = p.step_size(sigma, sigma_1)
        gamma = sigma
        for j in range(p.m):
            grad = np.asarray(model(x, sigma), dtype=np.float64)
            if p.lam > 0:
                grad = grad - p.lam * np.real(op.dc_adjoint(op.forward(x) - y)) / gamma**2
            x = x + eps * grad + math.sqrt(2 * eps) * rng.standard_normal((rows, cols))
            _check_finite(x, i, j)
        _report(callback, every, i, x, reference)
        logger.debug("ald level %d (sigma=%.4g) done", i, sigma)
    return x


def _pc_chain(
    model: ScoreModel,
    shape: tuple[int, int],
    y: npt.ArrayLike | None,
    op: MeasurementOp | None,
    p: PcParams,
    schedule: SigmaSchedule,
    rng: RngState,
    reference: Image | None,
    callback: ProgressHook | None,
    every: int,
    progress: bool,
) -> Image:
    _check_schedule(schedule, p.n)
    conditioned = op is not None and y is not None and p.lam > 0

    def consistency(x: Image) -> Image:
        if not conditioned:
            return x
        assert op is not None and y is not None
        return data_consistency(x, y, op, p.lam)

    x = schedule[p.n] * rng.standard_normal(shape)
    for i in tqdm(range(p.n - 1, -1, -1), desc="pc", disable=not progress):
        hi, lo = schedule[i + 1], schedule[i]
        delta = hi**2 - lo**2
        score = np.asarray(model(x, hi), dtype=np.float64)
        x = x + delta * score + math.sqrt(delta) * rng.standard_normal(shape)
        x = consistency(x)
        _check_finite(x, i, 0)

        # sigma_0 = 0 has no Langevin corrector
        if lo > 0:
            for j in range(p.corrector_steps):
                g = np.asarray(model(x, lo), dtype=np.float64)
                z = rng.standard_normal(shape)
                g_norm = float(np.linalg.norm(g))
                if g_norm == 0.0:
                    continue
                eps = 2.0 * (p.snr * float(np.linalg.norm(z)) / g_norm) ** 2
                x = x + eps * g + math.sqrt(2 * eps) * z
                x = consistency(x)
                _check_finite(x, i, j + 1)
        _report(callback, every, i, x, reference)
    return x


def pc_sample(
    model: ScoreModel,
    y: npt.ArrayLike,
    op: MeasurementOp,
    p: PcParams,
    schedule: SigmaSchedule,
    rng: RngState,
    reference: Image | None = None,
    callback: ProgressHook | None = None,
    every: int = 10,
    progress: bool = False,
) -> Image:
    """
    Posterior sampling with the predictor-corrector scheme.

    Starts from x ~ N(0, sigma_N^2 I). For i = n-1 .. 0 a reverse-diffusion
    predictor step with variance sigma_{i+1}^2 - sigma_i^2 is followed by
    data consistency; while sigma_i > 0 a Langevin corrector step with
    eps = 2 (snr |z| / |s|)^2 and another data consistency follow.

    Arguments and errors are as for :func:`ald_sample`.
    """
    return _pc_chain(
        model, op.image_shape, y, op, p, schedule, rng, reference, callback, every, progress
    )


def unconditional_sample(
    model: ScoreModel,
    shape: tuple[int, int],
    schedule: SigmaSchedule,
    rng: RngState,
    p: PcParams | None = None,
    progress: bool = False,
) -> Image:
    """Draw from the prior alone: predictor-corrector with lambda = 0."""
    params = replace(p or PcParams(n=len(schedule)), lam=0.0)
    return _pc_chain(model, shape, None, None, params, schedule, rng, None, None, 1, progress)


def lambda_sweep(
    model: ScoreModel,
    y: npt.ArrayLike,
    op: MeasurementOp,
    lambdas: list[float],
    schedule: SigmaSchedule,
    rng: RngState,
    p: PcParams | None = None,
) -> list[Image]:
    """
    One predictor-corrector run per lambda, all from the same generator state.

    ``rng`` itself is not advanced, so entry k equals ``pc_sample`` at
    ``lambdas[k]`` with a generator in the same state.
    """
    base = p or PcParams(n=len(schedule))
    out = []
    for lam in lambdas:
        out.append(pc_sample(model, y, op, replace(base, lam=lam), schedule, copy.deepcopy(rng)))
        logger.debug("lambda %.4g done", lam)
    return out
