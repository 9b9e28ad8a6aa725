"""
Variance-exploding noise schedule, denoising score matching and training.

The continuous diffusion time is replaced by the discrete index i = 1..N of a
geometric noise ladder sigma_1 < ... < sigma_N; sigma_0 = 0 is implied below
it. Training draws the index uniformly per example.
"""

import copy
import csv
import io
import logging
import math
import struct
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import torch
from ruamel.yaml import YAML
from tqdm import tqdm

from .errors import DimensionError, FormatError, ParameterError, TrainingDivergenceError
from .imgcore import Image, RngState, as_image
from .scoremodel import NetConfig, ScoreModel, ScoreNet, TorchScoreModel

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SRCKPT1"


@dataclass(frozen=True)
class SigmaSchedule:
    """
    Geometric noise ladder, 1-based: ``schedule[1] == sigma_min``.

    ``schedule[0]`` is 0.0, the noise-free end of the reverse process.
    """

    sigmas: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.sigmas) < 2:
            raise ParameterError("A schedule needs at least two noise levels")
        if any(s <= 0 for s in self.sigmas):
            raise ParameterError("Noise levels must be positive")
        if any(b <= a for a, b in zip(self.sigmas, self.sigmas[1:], strict=False)):
            raise ParameterError("Noise levels must be strictly increasing")

    def __len__(self) -> int:
        return len(self.sigmas)

    def __getitem__(self, i: int) -> float:
        if i == 0:
            return 0.0
        if not 1 <= i <= len(self.sigmas):
            raise IndexError(f"Schedule index {i} outside 0..{len(self.sigmas)}")
        return self.sigmas[i - 1]

    @property
    def sigma_min(self) -> float:
        return self.sigmas[0]

    @property
    def sigma_max(self) -> float:
        return self.sigmas[-1]

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.asarray(self.sigmas, dtype=np.float64)


def make_schedule(n: int, sigma_min: float, sigma_max: float) -> SigmaSchedule:
    """
    sigma_i = sigma_min * (sigma_max / sigma_min) ** ((i - 1) / (n - 1)), i = 1..n.

    Raises:
        ParameterError: If n < 2 or not 0 < sigma_min < sigma_max
    """
    if n < 2:
        raise ParameterError(f"Schedule length must be >= 2, got {n}")
    if not 0 < sigma_min < sigma_max:
        raise ParameterError(f"Need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    ratio = sigma_max / sigma_min
    sigmas = [sigma_min * ratio ** (k / (n - 1)) for k in range(n)]
    sigmas[-1] = float(sigma_max)
    return SigmaSchedule(tuple(sigmas))


def default_schedule() -> SigmaSchedule:
    """500 levels from 0.01 to 378."""
    return make_schedule(500, 0.01, 378.0)


def perturb(x0: Image, sigma: float, rng: RngState) -> Image:
    """Sample the VE transition kernel: x0 + sigma * z."""
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    x0 = np.asarray(x0, dtype=np.float64)
    z = rng.standard_normal(x0.shape)
    return x0 + sigma * z


def _as_batch(x0: Sequence[Image] | npt.NDArray[np.float64]) -> list[Image]:
    batch = list(x0) if not isinstance(x0, np.ndarray) or x0.ndim == 3 else [x0]
    if not batch:
        raise ParameterError("Score-matching batch must not be empty")
    return [as_image(x, "x0") for x in batch]


def dsm_loss(
    model: ScoreModel,
    x0: Sequence[Image] | npt.NDArray[np.float64],
    schedule: SigmaSchedule,
    rng: RngState,
) -> float:
    """
    Denoising score-matching loss with weight sigma^2, averaged over the batch.

    For each image a level i is drawn uniformly from 1..N and the squared
    error between ``model(x_t, sigma_i)`` and the conditional score
    (x0 - x_t) / sigma_i^2 is accumulated over pixels.

    Raises:
        DimensionError: If the model output shape differs from the input
    """
    batch = _as_batch(x0)
    total = 0.0
    for img in batch:
        sigma = schedule[int(rng.integers(1, len(schedule) + 1))]
        xt = perturb(img, sigma, rng)
        score = np.asarray(model(xt, sigma), dtype=np.float64)
        if score.shape != img.shape:
            raise DimensionError(f"Model returned shape {score.shape} for input {img.shape}")
        target = (img - xt) / sigma**2
        total += sigma**2 * float(np.sum((score - target) ** 2))
    return total / len(batch)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and bookkeeping settings for :func:`train`."""

    iterations: int = 10_000
    lr_peak: float = 2e-4
    warmup_iters: int = 5000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    grad_clip: float = 1.0
    ema_rate: float = 0.999
    batch: int = 8
    log_every: int = 500

    def __post_init__(self) -> None:
        errors = []
        if self.iterations < 0:
            errors.append(f"iterations must be >= 0, got {self.iterations}")
        if self.warmup_iters < 0:
            errors.append(f"warmup_iters must be >= 0, got {self.warmup_iters}")
        for name in ("lr_peak", "grad_clip", "batch", "log_every"):
            if getattr(self, name) <= 0:
                errors.append(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("adam_beta1", "adam_beta2", "ema_rate"):
            if not 0 < getattr(self, name) < 1:
                errors.append(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if errors:
            raise ParameterError("TrainConfig validation failed:\n" + "\n".join(f"  - {e}" for e in errors))

    def learning_rate(self, iteration: int) -> float:
        """Linear warmup to ``lr_peak`` over ``warmup_iters`` (0-based iteration)."""
        if self.warmup_iters == 0:
            return self.lr_peak
        return self.lr_peak * min(1.0, (iteration + 1) / self.warmup_iters)


@dataclass
class TrainResult:
    model: TorchScoreModel
    ema: TorchScoreModel
    losses: list[float] = field(default_factory=list)


def _dsm_loss_torch(
    net: ScoreNet,
    x0: torch.Tensor,
    sigmas: torch.Tensor,
    generator: torch.Generator,
) -> torch.Tensor:
    z = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    xt = x0 + sigmas[:, None, None, None] * z
    score = net(xt, sigmas)
    # sigma^2 * |score + z / sigma|^2 == |sigma * score + z|^2
    per_image = torch.sum((sigmas[:, None, None, None] * score + z) ** 2, dim=(1, 2, 3))
    return per_image.mean()


@torch.no_grad()
def update_ema(ema: torch.nn.Module, net: torch.nn.Module, rate: float) -> None:
    for ema_param, param in zip(ema.parameters(), net.parameters(), strict=True):
        ema_param.mul_(rate).add_(param, alpha=1.0 - rate)


def train(
    model: TorchScoreModel,
    dataset: Sequence[Image],
    cfg: TrainConfig,
    rng: RngState,
    schedule: SigmaSchedule | None = None,
    progress: bool = False,
) -> TrainResult:
    """
    Train a score network by denoising score matching.

    Adam with linear learning-rate warmup, global-norm gradient clipping and an
    exponential moving average copy of the weights kept for evaluation.
    Mini-batches and noise levels are drawn from ``rng``; perturbation noise
    comes from a torch generator seeded from ``rng``.

    Args:
        model: Network to train in place
        dataset: Training images, all of the same shape
        cfg: Optimizer settings
        rng: Generator for batches, levels and noise
        schedule: Noise ladder (default 500 levels from 0.01 to 378)
        progress: Show a tqdm progress bar

    Returns:
        TrainResult: The trained model, its EMA copy and the loss trace

    Raises:
        ParameterError: If the dataset is empty
        TrainingDivergenceError: If the loss becomes non-finite
    """
    if not dataset:
        raise ParameterError("Training dataset must not be empty")
    schedule = schedule or default_schedule()
    images = np.stack([as_image(x) for x in dataset])
    model.check_shape(images.shape[1:])
    data = torch.as_tensor(images, dtype=torch.float32, device=model.device)[:, None]
    sigma_table = torch.as_tensor(schedule.as_array(), dtype=torch.float32, device=model.device)

    net = model.net
    ema_net = copy.deepcopy(net)
    ema_net.requires_grad_(False)
    optimizer = torch.optim.Adam(
        net.parameters(), lr=cfg.learning_rate(0), betas=(cfg.adam_beta1, cfg.adam_beta2)
    )
    generator = torch.Generator(device=model.device).manual_seed(int(rng.integers(0, 2**63 - 1)))

    losses: list[float] = []
    net.train()
    steps = tqdm(range(cfg.iterations), desc="train", disable=not progress)
    for it in steps:
        for group in optimizer.param_groups:
            group["lr"] = cfg.learning_rate(it)
        idx = torch.as_tensor(rng.integers(0, len(images), size=cfg.batch), device=model.device)
        levels = torch.as_tensor(rng.integers(0, len(schedule), size=cfg.batch), device=model.device)
        loss = _dsm_loss_torch(net, data[idx], sigma_table[levels], generator)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergenceError(it, value)

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
        optimizer.step()
        update_ema(ema_net, net, cfg.ema_rate)

        losses.append(value)
        if progress:
            steps.set_postfix(loss=f"{value:.4f}")
        if (it + 1) % cfg.log_every == 0:
            logger.info("iteration %d: loss %.6f, lr %.3g", it + 1, value, cfg.learning_rate(it))

    net.eval()
    return TrainResult(model=model, ema=TorchScoreModel(ema_net, model.device), losses=losses)


def write_loss_trace(path: str | Path, losses: Sequence[float]) -> None:
    """Write the loss trace as CSV with columns iteration, loss."""
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iteration", "loss"])
        for it, loss in enumerate(losses):
            writer.writerow([it, repr(float(loss))])


def _flat_state(net: torch.nn.Module) -> npt.NDArray[np.float32]:
    return np.concatenate(
        [t.detach().cpu().reshape(-1).numpy().astype("<f4") for t in net.state_dict().values()]
    )


def _load_flat_state(net: torch.nn.Module, flat: npt.NDArray[np.float32]) -> None:
    state = net.state_dict()
    offset = 0
    for key, tensor in state.items():
        n = tensor.numel()
        state[key] = torch.from_numpy(flat[offset : offset + n].astype(np.float32)).reshape(tensor.shape)
        offset += n
    net.load_state_dict(state)


def _yaml() -> YAML:
    yaml = YAML(typ="safe")
    yaml.default_flow_style = False
    return yaml


def save_checkpoint(
    path: str | Path,
    result: TrainResult,
    train_cfg: TrainConfig | None = None,
    extra: dict[str, Any] | None = None,
) -> None:
    """
    Write model and EMA weights.

    Layout: magic ``SRCKPT1``, uint32 length of a YAML config echo, the YAML
    text, uint64 parameter count, then the float32 model weights followed by
    the float32 EMA weights, all little-endian in ``state_dict`` order.
    """
    echo: dict[str, Any] = {"net": result.model.config.to_dict()}
    if train_cfg is not None:
        echo["train"] = asdict(train_cfg)
    if extra:
        echo["extra"] = dict(extra)
    buf = io.StringIO()
    _yaml().dump(echo, buf)
    text = buf.getvalue().encode("utf-8")

    weights = _flat_state(result.model.net)
    ema = _flat_state(result.ema.net)
    with Path(path).open("wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(text)))
        f.write(text)
        f.write(struct.pack("<Q", weights.size))
        f.write(weights.tobytes())
        f.write(ema.tobytes())
    logger.info("Checkpoint written to %s (%d parameters)", path, weights.size)


@dataclass
class Checkpoint:
    model: TorchScoreModel
    ema: TorchScoreModel
    config: NetConfig
    echo: dict[str, Any]


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"Not a checkpoint (bad magic): {path}")
    try:
        pos = len(CHECKPOINT_MAGIC)
        (text_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        echo = _yaml().load(blob[pos : pos + text_len].decode("utf-8"))
        pos += text_len
        (count,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError(f"Truncated checkpoint header: {path}") from e
    if len(blob) != pos + 8 * count:
        raise FormatError(f"Checkpoint {path} declares {count} parameters but holds {len(blob) - pos} bytes")
    weights = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
    ema_weights = np.frombuffer(blob, dtype="<f4", count=count, offset=pos + 4 * count)

    cfg = NetConfig(**echo["net"])
    nets = []
    for flat in (weights, ema_weights):
        net = ScoreNet(cfg)
        if sum(t.numel() for t in net.state_dict().values()) != count:
            raise FormatError(f"Checkpoint {path} does not match the network described in its header")
        _load_flat_state(net, flat)
        net.eval()
        nets.append(net)
    return Checkpoint(TorchScoreModel(nets[0]), TorchScoreModel(nets[1]), cfg, echo)
