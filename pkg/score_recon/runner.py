"""
Experiment orchestration.

For every slice of the dataset the runner normalizes the reference by its
maximum, simulates noise-free measurements y = A x, reconstructs with the
configured method and scores the result. Slices run concurrently in worker
threads; each slice owns the generator ``make_rng(seed, 1, index)`` so the
worker count never changes the output bytes.
"""

import asyncio
import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import aiofiles
import aiofiles.os
import numpy as np
from ruamel.yaml import YAML

from .analysis import psnr, ssim
from .diffusion import load_checkpoint
from .errors import DegenerateInputError, DimensionError, FormatError, SamplerDivergenceError
from .experiment import ExperimentConfig, Method
from .imgcore import Image, decode_image, encode_image, make_rng
from .operators import MeasurementOp, Modality
from .phantoms import RAW_SUFFIX
from .reports import ReconReport, SliceResult
from .samplers import ald_sample, lambda_sweep, pc_sample
from .scoremodel import GaussianScore, ScoreModel
from .variational import reconstruct_tv

logger = logging.getLogger(__name__)

MASK_STREAM = 0
SLICE_STREAM = 1
NORMALIZATION_NOTE = (
    "Each slice is divided by its maximum intensity before undersampling; "
    "CT slices are first zero-padded to a centred square."
)


@dataclass(frozen=True)
class Slice:
    index: int
    slice_id: str
    image: Image


def square(x: Image) -> Image:
    """Zero-pad the short side so the image becomes square, keeping it centred."""
    rows, cols = x.shape
    if rows == cols:
        return x
    side = max(rows, cols)
    out = np.zeros((side, side))
    r0, c0 = (side - rows) // 2, (side - cols) // 2
    out[r0 : r0 + rows, c0 : c0 + cols] = x
    return out


def normalize(x: Image) -> Image:
    peak = float(np.max(x))
    if peak <= 0:
        raise DegenerateInputError("Slice has no positive intensity to normalize by")
    return x / peak


async def list_slices(dataset: Path) -> list[Path]:
    """A single raw file, or every ``*.srimg`` file of a directory in name order."""
    if not await aiofiles.os.path.exists(dataset):
        raise FileNotFoundError(f"Dataset not found: {dataset}")
    if await aiofiles.os.path.isfile(dataset):
        return [dataset]
    names = await aiofiles.os.listdir(dataset)
    return sorted(dataset / n for n in names if n.endswith(RAW_SUFFIX))


async def load_dataset(cfg: ExperimentConfig) -> list[Slice]:
    """
    Read and normalize every readable slice.

    Unreadable or empty slices are skipped with a warning.

    Raises:
        DegenerateInputError: If no usable slice remains
    """
    slices = []
    for index, path in enumerate(await list_slices(cfg.dataset)):
        try:
            async with aiofiles.open(path, "rb") as f:
                blob = await f.read()
            img = decode_image(blob, str(path))
            if cfg.modality is Modality.CT:
                img = square(img)
            slices.append(Slice(index, path.stem, normalize(img)))
        except (FormatError, DegenerateInputError, OSError) as e:
            logger.warning("Skipping slice %s: %s", path, e)
    if not slices:
        raise DegenerateInputError(f"Dataset {cfg.dataset} holds no usable slices")
    return slices


def build_model(cfg: ExperimentConfig, slices: list[Slice]) -> ScoreModel | None:
    """Score model for sampler methods; None for TV and zero-filled."""
    if not cfg.method.stochastic or cfg.model is None:
        return None
    spec = cfg.model
    if spec.kind == "checkpoint":
        assert spec.path is not None
        ckpt = load_checkpoint(spec.path)
        return ckpt.ema if spec.use_ema else ckpt.model
    shape = slices[0].image.shape
    if spec.fit == "scalar":
        return GaussianScore(np.full(shape, spec.mean), spec.variance)
    if any(s.image.shape != shape for s in slices):
        raise DimensionError("Fitting a Gaussian oracle needs slices of one shape")
    return GaussianScore.fit([s.image for s in slices])


class ExperimentRunner:
    """Holds the per-experiment state shared by the slice workers."""

    def __init__(self, cfg: ExperimentConfig, progress: bool = False):
        self.cfg = cfg
        self.progress = progress
        self._ops: dict[tuple[int, int], MeasurementOp] = {}
        self._model: ScoreModel | None = None

    def operator(self, shape: tuple[int, int]) -> MeasurementOp:
        # one mask per image shape, always drawn from the mask stream
        if shape not in self._ops:
            self._ops[shape] = self.cfg.build_operator(shape, make_rng(self.cfg.seed or 0, MASK_STREAM))
        return self._ops[shape]

    def reconstruct(self, op: MeasurementOp, y: np.ndarray, index: int) -> Image:
        cfg = self.cfg
        rng = make_rng(cfg.seed or 0, SLICE_STREAM, index)
        if cfg.method is Method.ZERO_FILLED:
            return op.zero_filled(y)
        if cfg.method is Method.TV:
            return reconstruct_tv(y, op, cfg.tv_params()).image
        assert self._model is not None
        # progress bars would interleave across worker threads
        bar = self.progress and cfg.workers == 1
        if cfg.method is Method.ALD:
            return ald_sample(
                self._model, y, op, cfg.ald_params(), cfg.sigma_schedule(), rng, progress=bar
            )
        return pc_sample(
            self._model, y, op, cfg.pc_params(), cfg.sigma_schedule(), rng, progress=bar
        )

    def run_slice(self, item: Slice) -> tuple[SliceResult, Image | None]:
        op = self.operator(item.image.shape)
        y = op.forward(item.image)
        start = time.perf_counter()
        try:
            recon = self.reconstruct(op, y, item.index)
        except SamplerDivergenceError as e:
            logger.warning("Slice %s failed: %s", item.slice_id, e)
            return SliceResult(item.slice_id, op.label, status="diverged"), None
        elapsed = time.perf_counter() - start
        time_s = elapsed if self.cfg.record_timings else None
        try:
            score = psnr(recon, item.image)
            try:
                quality = ssim(recon, item.image)
            except DimensionError:
                quality = None
        except DegenerateInputError as e:
            logger.warning("Slice %s cannot be scored: %s", item.slice_id, e)
            return SliceResult(item.slice_id, op.label, time_s=time_s, status="degenerate"), recon
        row = SliceResult(
            slice_id=item.slice_id,
            mask=op.label,
            psnr=score,
            ssim=quality,
            time_s=time_s,
        )
        return row, recon

    async def run(self) -> ReconReport:
        cfg = self.cfg
        logger.info("Starting experiment %r", cfg)
        slices = await load_dataset(cfg)
        self._model = build_model(cfg, slices)
        await aiofiles.os.makedirs(cfg.output / "recon", exist_ok=True)
        await aiofiles.os.makedirs(cfg.output / "diff", exist_ok=True)
        await aiofiles.os.makedirs(cfg.output / "png", exist_ok=True)

        semaphore = asyncio.Semaphore(cfg.workers)

        async def worker(item: Slice) -> SliceResult:
            async with semaphore:
                row, recon = await asyncio.to_thread(self.run_slice, item)
            if recon is not None:
                await self._write_slice(item, recon)
            return row

        rows = await asyncio.gather(*(worker(s) for s in slices))
        depth = ""
        if cfg.method.stochastic and cfg.model is not None and cfg.model.kind == "checkpoint":
            depth = getattr(getattr(self._model, "config", None), "label", "")
        report = ReconReport(
            name=cfg.name,
            dataset=cfg.dataset.name,
            mask=cfg.mask_label,
            method=cfg.method.value,
            depth=depth,
            lam=cfg.lam if cfg.method is not Method.ZERO_FILLED else None,
            rows=list(rows),
        )
        await self._write_summary(report, slices)
        logger.info("Finished: %s", report.summary())
        return report

    async def _write_slice(self, item: Slice, recon: Image) -> None:
        out = self.cfg.output
        diff = np.abs(recon - item.image)
        png_recon, png_diff = await asyncio.to_thread(
            lambda: (_png_bytes(recon, 0.0, 1.0), _png_bytes(diff, 0.0, None))
        )
        files = {
            out / "recon" / f"{item.slice_id}{RAW_SUFFIX}": encode_image(recon),
            out / "diff" / f"{item.slice_id}{RAW_SUFFIX}": encode_image(diff),
            out / "png" / f"{item.slice_id}.png": png_recon,
            out / "png" / f"{item.slice_id}_diff.png": png_diff,
        }
        for path, blob in files.items():
            async with aiofiles.open(path, "wb") as f:
                await f.write(blob)

    async def _write_summary(self, report: ReconReport, slices: list[Slice]) -> None:
        cfg = self.cfg
        yaml = YAML(typ="safe")
        yaml.default_flow_style = False
        echo = io.StringIO()
        yaml.dump(cfg.to_dict(), echo)
        header = [
            f"# {cfg.name}",
            "",
            f"- modality: {cfg.modality.value}",
            f"- mask: {cfg.mask_label}",
            f"- method: {cfg.method.value}",
            f"- seed: {cfg.seed}",
            f"- normalization: {NORMALIZATION_NOTE}",
            "",
        ]
        if cfg.notes:
            header += [cfg.notes, ""]
        body = "\n".join(header) + report.summary() + "\n"
        outputs = {
            cfg.output / "metrics.csv": report.metrics_csv(),
            cfg.output / "config.yaml": echo.getvalue(),
            cfg.output / "split.txt": "".join(f"{s.slice_id}\n" for s in slices),
            cfg.output / "report.md": body,
        }
        for path, text in outputs.items():
            async with aiofiles.open(path, "w", encoding="utf-8") as f:
                await f.write(text)


def _png_bytes(x: Image, vmin: float, vmax: float | None) -> bytes:
    from matplotlib import image as mpimg

    buf = io.BytesIO()
    mpimg.imsave(buf, x, cmap="gray", vmin=vmin, vmax=vmax, format="png")
    return buf.getvalue()


async def run_experiment(cfg: ExperimentConfig, progress: bool = False) -> ReconReport:
    """
    Run one experiment end to end and write its outputs under ``cfg.output``.

    Writes ``recon/`` and ``diff/`` raw images, PNG previews, ``metrics.csv``,
    the ``config.yaml`` echo, ``split.txt`` and a ``report.md`` header.
    Sampler divergence and slices whose reference is constant yield a
    failure row instead of aborting the run.

    Raises:
        FileNotFoundError: If the dataset path does not exist
        DegenerateInputError: If the dataset holds no usable slices
    """
    return await ExperimentRunner(cfg, progress).run()


async def run_lambda_sweep(
    cfg: ExperimentConfig, lambdas: list[float]
) -> tuple[list[Image], list[float]]:
    """
    Predictor-corrector reconstructions of the first slice for each lambda.

    Returns the images and their data fidelities |A x - y|; images are also
    written to ``cfg.output/sweep`` together with ``sweep.csv``.
    """
    runner = ExperimentRunner(cfg)
    slices = await load_dataset(cfg)
    model = build_model(cfg, slices)
    if model is None:
        raise DegenerateInputError("A lambda sweep needs a score model")
    item = slices[0]
    op = runner.operator(item.image.shape)
    y = op.forward(item.image)
    rng = make_rng(cfg.seed or 0, SLICE_STREAM, item.index)
    images = await asyncio.to_thread(
        lambda_sweep, model, y, op, lambdas, cfg.sigma_schedule(), rng, cfg.pc_params()
    )
    fidelities = [float(np.linalg.norm(op.forward(x) - y)) for x in images]

    await aiofiles.os.makedirs(cfg.output / "sweep", exist_ok=True)
    lines = ["lambda,fidelity,psnr\n"]
    for lam, x, fid in zip(lambdas, images, fidelities, strict=True):
        async with aiofiles.open(cfg.output / "sweep" / f"lambda_{lam:g}{RAW_SUFFIX}", "wb") as f:
            await f.write(encode_image(x))
        lines.append(f"{lam:g},{fid:.6e},{psnr(x, item.image):.6f}\n")
    async with aiofiles.open(cfg.output / "sweep.csv", "w", encoding="utf-8") as f:
        await f.write("".join(lines))
    return images, fidelities
