"""
Score models: the evaluation protocol, an analytic Gaussian oracle, the
convolutional score network and its receptive-field ledger.

The network is built with torch and wrapped in :class:`TorchScoreModel` so
that samplers only ever see ``model(x, sigma) -> Image`` on numpy arrays.
"""

import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Any, Protocol, runtime_checkable

import numpy as np
import numpy.typing as npt
import torch
from torch import nn
from torch.nn import functional as F  # noqa: N812

from .errors import DimensionError, ParameterError
from .imgcore import Image, RngState, as_image

logger = logging.getLogger(__name__)


@runtime_checkable
class ScoreModel(Protocol):
    """Anything that maps (image, noise level) to an estimate of the score."""

    def __call__(self, x: Image, sigma: float) -> Image: ...


class GaussianScore:
    """
    Exact score of N(mu, cov) perturbed by N(0, sigma^2 I).

    ``cov`` may be a scalar (isotropic), an array shaped like ``mu`` (diagonal)
    or an (n, n) symmetric positive definite matrix over the flattened pixels.

    Example:
        >>> prior = GaussianScore(np.zeros((8, 8)), 1.0)
        >>> score = prior(np.ones((8, 8)), sigma=1.0)  # -(x - mu) / 2 everywhere
    """

    def __init__(self, mu: npt.ArrayLike, cov: float | npt.ArrayLike) -> None:
        self.mu = as_image(mu, "mu")
        n = self.mu.size
        cov_arr = np.asarray(cov, dtype=np.float64)
        self._eigvals: npt.NDArray[np.float64] | None = None
        self._eigvecs: npt.NDArray[np.float64] | None = None

        if cov_arr.ndim == 0 or cov_arr.shape == self.mu.shape:
            diag = np.broadcast_to(cov_arr, self.mu.shape).astype(np.float64)
            if not np.all(np.isfinite(diag)) or np.any(diag <= 0):
                raise ParameterError("Diagonal covariance must be finite and strictly positive")
            self._diag: npt.NDArray[np.float64] | None = diag
        elif cov_arr.shape == (n, n):
            if not np.allclose(cov_arr, cov_arr.T, rtol=1e-10, atol=1e-12):
                raise ParameterError("Covariance matrix must be symmetric")
            w, v = np.linalg.eigh(cov_arr)
            if w[0] <= 0:
                raise ParameterError(f"Covariance matrix is not positive definite (min eigenvalue {w[0]:.3g})")
            self._diag = None
            self._eigvals, self._eigvecs = w, v
        else:
            raise DimensionError(
                f"Covariance shape {cov_arr.shape} fits neither mu {self.mu.shape} nor ({n}, {n})"
            )

    @classmethod
    def fit(cls, dataset: list[Image], full: bool = False, floor: float = 1e-6) -> "GaussianScore":
        """
        Fit mean and covariance to a dataset of equally shaped images.

        Args:
            dataset: Images to fit
            full: Estimate the full pixel covariance instead of its diagonal
            floor: Added to the variances so the estimate stays positive definite
        """
        if not dataset:
            raise ParameterError("Cannot fit a Gaussian prior to an empty dataset")
        stack = np.stack([as_image(x) for x in dataset])
        mu = stack.mean(axis=0)
        if full:
            flat = stack.reshape(len(dataset), -1)
            cov = np.cov(flat, rowvar=False, bias=True).reshape(flat.shape[1], flat.shape[1])
            return cls(mu, cov + floor * np.eye(flat.shape[1]))
        return cls(mu, stack.var(axis=0) + floor)

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.mu.shape[0]), int(self.mu.shape[1]))

    def covariance(self) -> npt.NDArray[np.float64]:
        """Full (n, n) covariance matrix."""
        if self._diag is not None:
            return np.diag(self._diag.ravel())
        assert self._eigvecs is not None and self._eigvals is not None
        return (self._eigvecs * self._eigvals) @ self._eigvecs.T

    def trace(self) -> float:
        if self._diag is not None:
            return float(self._diag.sum())
        assert self._eigvals is not None
        return float(self._eigvals.sum())

    def __call__(self, x: Image, sigma: float) -> Image:
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape != self.mu.shape:
            raise DimensionError(f"Input shape {arr.shape} does not match prior shape {self.mu.shape}")
        diff = arr - self.mu
        s2 = float(sigma) ** 2
        if self._diag is not None:
            return -diff / (self._diag + s2)
        assert self._eigvecs is not None and self._eigvals is not None
        coeff = (self._eigvecs.T @ diff.ravel()) / (self._eigvals + s2)
        return -(self._eigvecs @ coeff).reshape(self.mu.shape)

    def log_density(self, x: Image, sigma: float) -> float:
        """log N(x; mu, cov + sigma^2 I), used for gradient checks."""
        diff = (np.asarray(x, dtype=np.float64) - self.mu).ravel()
        s2 = float(sigma) ** 2
        if self._diag is not None:
            var = self._diag.ravel() + s2
            return float(-0.5 * np.sum(diff**2 / var + np.log(2 * math.pi * var)))
        assert self._eigvecs is not None and self._eigvals is not None
        var = self._eigvals + s2
        proj = self._eigvecs.T @ diff
        return float(-0.5 * np.sum(proj**2 / var + np.log(2 * math.pi * var)))

    def sample(self, rng: RngState) -> Image:
        """Draw one image from the unperturbed prior."""
        z = rng.standard_normal(self.mu.shape)
        if self._diag is not None:
            return self.mu + np.sqrt(self._diag) * z
        assert self._eigvecs is not None and self._eigvals is not None
        return self.mu + (self._eigvecs @ (np.sqrt(self._eigvals) * z.ravel())).reshape(self.mu.shape)

    def __repr__(self) -> str:
        kind = "diagonal" if self._diag is not None else "full"
        return f"GaussianScore(shape={self.shape}, covariance={kind})"


def gaussian_score(mu: Image, cov: float | npt.ArrayLike, x: Image, sigma: float) -> Image:
    """Functional form of :class:`GaussianScore`: -(cov + sigma^2 I)^-1 (x - mu)."""
    return GaussianScore(mu, cov)(x, sigma)


@dataclass(frozen=True)
class NetConfig:
    """
    Architecture of the score network.

    Attributes:
        depth: Number of resolutions d (1..4)
        base_channels: Channels at full resolution
        deep_channels: Channels at every lower resolution
        blocks_per_stage: Residual blocks per encoder stage
        attention: Self-attention at the lowest resolution (only with depth 4)
        fourier_scale: Scale of the random Fourier features of log(sigma)
        in_channels: Image channels
    """

    depth: int = 4
    base_channels: int = 128
    deep_channels: int = 256
    blocks_per_stage: int = 4
    attention: bool = False
    fourier_scale: float = 16.0
    in_channels: int = 1

    def __post_init__(self) -> None:
        errors = []
        if not 1 <= self.depth <= 4:
            errors.append(f"depth must be in 1..4, got {self.depth}")
        if self.attention and self.depth != 4:
            errors.append("attention is only permitted at depth 4")
        for name in ("base_channels", "deep_channels", "blocks_per_stage", "in_channels"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be positive, got {getattr(self, name)}")
        if self.fourier_scale <= 0:
            errors.append(f"fourier_scale must be positive, got {self.fourier_scale}")
        if errors:
            raise ParameterError("NetConfig validation failed:\n" + "\n".join(f"  - {e}" for e in errors))

    @classmethod
    def standard(cls, depth: int, attention: bool = False) -> "NetConfig":
        """Full-size configuration of the d=1..4 and d=4* networks."""
        return cls(depth=depth, attention=attention)

    @property
    def label(self) -> str:
        return f"d={self.depth}{'*' if self.attention else ''}"

    @property
    def embed_dim(self) -> int:
        return 4 * self.base_channels

    def channels(self, level: int) -> int:
        """Channel width at resolution level 1..depth."""
        return self.base_channels if level == 1 else self.deep_channels

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


EVALUATION_NETWORKS = (
    NetConfig.standard(1),
    NetConfig.standard(2),
    NetConfig.standard(3),
    NetConfig.standard(4),
    NetConfig.standard(4, attention=True),
)


def _norm_groups(channels: int) -> int:
    for g in range(min(32, channels), 0, -1):
        if channels % g == 0 and channels // g >= 4:
            return g
    return 1


class PixelGroupNorm(nn.Module):
    """Group normalization over channel groups, computed independently at every pixel."""

    def __init__(self, channels: int, eps: float = 1e-6) -> None:
        super().__init__()
        self.groups = _norm_groups(channels)
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        g = x.reshape(b, self.groups, c // self.groups, h, w)
        mean = g.mean(dim=2, keepdim=True)
        var = g.var(dim=2, keepdim=True, unbiased=False)
        g = (g - mean) / torch.sqrt(var + self.eps)
        return g.reshape(b, c, h, w) * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class GaussianFourierProjection(nn.Module):
    """Fixed random Fourier features of log(sigma)."""

    def __init__(self, embed_dim: int, scale: float) -> None:
        super().__init__()
        self.register_buffer("W", torch.randn(embed_dim // 2) * scale)

    def forward(self, log_sigma: torch.Tensor) -> torch.Tensor:
        proj = log_sigma[:, None] * self.W[None, :] * 2 * math.pi
        return torch.cat([torch.sin(proj), torch.cos(proj)], dim=-1)


class Blur(nn.Module):
    """Depthwise 3x3 binomial filter, optionally strided."""

    def __init__(self, channels: int, stride: int = 1) -> None:
        super().__init__()
        taps = torch.tensor([1.0, 2.0, 1.0])
        kernel = torch.outer(taps, taps) / 16.0
        self.register_buffer("kernel", kernel.expand(channels, 1, 3, 3).clone())
        self.stride = stride
        self.channels = channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv2d(x, self.kernel, stride=self.stride, padding=1, groups=self.channels)


class ResBlock(nn.Module):
    """norm, SiLU, conv3x3, +sigma bias, norm, SiLU, conv3x3, residual add."""

    def __init__(self, in_ch: int, out_ch: int, embed_dim: int) -> None:
        super().__init__()
        self.norm1 = PixelGroupNorm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb = nn.Linear(embed_dim, out_ch)
        self.norm2 = PixelGroupNorm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    """Single-head dot-product attention over all pixels."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.norm = PixelGroupNorm(channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(dim=1)
        attn = torch.softmax(torch.einsum("bci,bcj->bij", q, k) / math.sqrt(c), dim=-1)
        out = torch.einsum("bij,bcj->bci", attn, v).reshape(b, c, h, w)
        return x + self.proj(out)


class Upsample(nn.Module):
    """Nearest-neighbour x2, binomial blur, 3x3 conv."""

    def __init__(self, in_ch: int, out_ch: int) -> None:
        super().__init__()
        self.blur = Blur(in_ch)
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(self.blur(F.interpolate(x, scale_factor=2.0, mode="nearest")))


class ScoreNet(nn.Module):
    """
    U-Net score network with ``cfg.depth`` resolutions.

    Encoder stages run ``blocks_per_stage`` residual blocks and then downsample
    (strided blur followed by a residual block). The bottleneck runs
    ``2 * blocks_per_stage + 3`` blocks, the decoder mirrors the encoder with
    skip concatenation. The input is scaled by 1 / sqrt(1 + sigma^2), the
    head is a 3x3 then a 1x1 convolution and the output is divided by sigma.
    """

    def __init__(self, cfg: NetConfig) -> None:
        super().__init__()
        self.cfg = cfg
        b = cfg.blocks_per_stage
        emb = cfg.embed_dim
        self.fourier = GaussianFourierProjection(emb, cfg.fourier_scale)
        self.embed = nn.Sequential(nn.Linear(emb, emb), nn.SiLU(), nn.Linear(emb, emb))
        self.conv_in = nn.Conv2d(cfg.in_channels, cfg.channels(1), 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.down_blurs = nn.ModuleList()
        self.down_blocks = nn.ModuleList()
        for level in range(1, cfg.depth):
            ch, nxt = cfg.channels(level), cfg.channels(level + 1)
            self.enc_blocks.append(nn.ModuleList(ResBlock(ch, ch, emb) for _ in range(b)))
            self.down_blurs.append(Blur(ch, stride=2))
            self.down_blocks.append(ResBlock(ch, nxt, emb))

        deep = cfg.channels(cfg.depth)
        self.mid_in = nn.ModuleList(ResBlock(deep, deep, emb) for _ in range(b))
        self.mid_a = ResBlock(deep, deep, emb)
        self.attn: nn.Module = SelfAttention(deep) if cfg.attention else nn.Identity()
        self.mid_b = ResBlock(deep, deep, emb)
        self.mid_out = nn.ModuleList(ResBlock(2 * deep, deep, emb) for _ in range(b))
        self.mid_join = ResBlock(2 * deep, deep, emb)

        self.ups = nn.ModuleList()
        self.dec_join = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        for level in range(cfg.depth - 1, 0, -1):
            ch, lower = cfg.channels(level), cfg.channels(level + 1)
            self.ups.append(Upsample(lower, ch))
            self.dec_join.append(ResBlock(2 * ch, ch, emb))
            self.dec_blocks.append(nn.ModuleList(ResBlock(2 * ch, ch, emb) for _ in range(b)))

        top = cfg.channels(1)
        self.conv_out = nn.Conv2d(top, top, 3, padding=1)
        self.proj_out = nn.Conv2d(top, cfg.in_channels, 1)

    def forward(self, x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        emb = self.embed(self.fourier(torch.log(sigma)))
        # pixel-wise input scaling keeps x_t at unit scale for every sigma
        h = self.conv_in(x / torch.sqrt(1.0 + sigma**2)[:, None, None, None])

        level_inputs: list[torch.Tensor] = []
        stage_skips: list[list[torch.Tensor]] = []
        for blocks, blur, down in zip(self.enc_blocks, self.down_blurs, self.down_blocks, strict=True):
            level_inputs.append(h)
            skips = []
            for block in blocks:
                h = block(h, emb)
                skips.append(h)
            stage_skips.append(skips)
            h = down(blur(h), emb)

        mid_input = h
        mid_skips = []
        for block in self.mid_in:
            h = block(h, emb)
            mid_skips.append(h)
        h = self.mid_b(self.attn(self.mid_a(h, emb)), emb)
        for block, skip in zip(self.mid_out, reversed(mid_skips), strict=True):
            h = block(torch.cat([h, skip], dim=1), emb)
        h = self.mid_join(torch.cat([h, mid_input], dim=1), emb)

        for up, join, blocks in zip(self.ups, self.dec_join, self.dec_blocks, strict=True):
            h = up(h)
            h = join(torch.cat([h, level_inputs.pop()], dim=1), emb)
            for block, skip in zip(blocks, reversed(stage_skips.pop()), strict=True):
                h = block(torch.cat([h, skip], dim=1), emb)

        h = self.proj_out(self.conv_out(h))
        return h / sigma[:, None, None, None]


class TorchScoreModel:
    """
    Numpy-facing wrapper around a :class:`ScoreNet`.

    Evaluation runs in float32 without gradient tracking and returns float64.
    """

    def __init__(self, net: ScoreNet, device: str | torch.device = "cpu") -> None:
        self.net = net
        self.device = torch.device(device)
        self.net.to(self.device)

    @property
    def config(self) -> NetConfig:
        return self.net.cfg

    def check_shape(self, shape: tuple[int, ...]) -> None:
        factor = 2 ** (self.config.depth - 1)
        if len(shape) != 2 or shape[0] % factor or shape[1] % factor:
            raise DimensionError(
                f"Image shape {tuple(shape)} is not divisible by {factor} for depth {self.config.depth}"
            )

    def __call__(self, x: Image, sigma: float) -> Image:
        arr = np.asarray(x, dtype=np.float64)
        self.check_shape(arr.shape)
        self.net.eval()
        with torch.no_grad():
            inp = torch.as_tensor(arr, dtype=torch.float32, device=self.device)[None, None]
            sig = torch.full((1,), float(sigma), dtype=torch.float32, device=self.device)
            out = self.net(inp, sig)
        return out[0, 0].cpu().numpy().astype(np.float64)

    def __repr__(self) -> str:
        return f"TorchScoreModel(config={self.config.label}, parameters={count_parameters(self.net):,})"


def build_scorenet(cfg: NetConfig, rng: RngState, image_size: int | None = None) -> TorchScoreModel:
    """
    Build a freshly initialised score network.

    Weights are drawn from torch's generator seeded from ``rng`` inside a
    forked RNG scope, so the global torch state is left untouched.

    Raises:
        DimensionError: If ``image_size`` is given and not divisible by 2^(depth-1)
    """
    if image_size is not None and image_size % 2 ** (cfg.depth - 1):
        raise DimensionError(
            f"Image side {image_size} is not divisible by {2 ** (cfg.depth - 1)} for depth {cfg.depth}"
        )
    seed = int(rng.integers(0, 2**63 - 1))
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = ScoreNet(cfg)
    logger.debug("Built %s score network with %d parameters", cfg.label, count_parameters(net))
    return TorchScoreModel(net)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def parameter_count(cfg: NetConfig) -> int:
    """Number of trainable parameters, computed without allocating weights."""
    with torch.device("meta"):
        net = ScoreNet(cfg)
    return count_parameters(net)


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of the receptive-field ledger.

    ``stride`` is a Fraction so that nearest-neighbour upsampling can be
    entered as stride 1/2.
    """

    kernel: int
    stride: Fraction = Fraction(1)

    def __post_init__(self) -> None:
        if self.kernel < 1:
            raise ParameterError(f"Kernel size must be >= 1, got {self.kernel}")
        stride = Fraction(self.stride)
        if stride <= 0:
            raise ParameterError(f"Stride must be positive, got {self.stride}")
        object.__setattr__(self, "stride", stride)


def receptive_field(layers: list[LayerSpec]) -> int:
    """
    Fold r_{l-1} = s_l * r_l + (k_l - s_l) from r_L = 1 backwards.

    Returns the ceiling of the exact rational result.
    """
    if not layers:
        raise ParameterError("Receptive field needs at least one layer")
    r = Fraction(1)
    for layer in reversed(layers):
        r = layer.stride * r + (layer.kernel - layer.stride)
    return math.ceil(r)


def layer_specs(cfg: NetConfig) -> list[LayerSpec]:
    """Spatial layers of :class:`ScoreNet` in forward order (1x1 skips and attention omitted)."""
    conv3 = LayerSpec(3)
    res_block = [conv3, conv3]
    b = cfg.blocks_per_stage
    layers = [conv3]
    for _ in range(cfg.depth - 1):
        layers += res_block * b
        layers += [LayerSpec(3, Fraction(2))]
        layers += res_block
    layers += res_block * (2 * b + 3)
    for _ in range(cfg.depth - 1):
        layers += [LayerSpec(1, Fraction(1, 2)), LayerSpec(3), conv3]
        layers += res_block * (b + 1)
    layers += [conv3, LayerSpec(1)]
    return layers


def receptive_interval(layers: list[LayerSpec], position: int) -> tuple[int, int]:
    """
    Exact input span [lo, hi] seen by the output pixel at ``position`` (one axis).

    Integer strides are convolutions with padding (k - 1) // 2; stride 1/m with
    kernel 1 is nearest-neighbour upsampling. Unlike :func:`receptive_field`
    the result depends on where the pixel sits relative to the resampling grid.

    Raises:
        ParameterError: For a fractional stride with kernel > 1
    """
    if not layers:
        raise ParameterError("Receptive interval needs at least one layer")
    lo = hi = position
    for layer in reversed(layers):
        s, k = layer.stride, layer.kernel
        if s.denominator == 1:
            m, pad = int(s), (k - 1) // 2
            lo, hi = m * lo - pad, m * hi - pad + k - 1
        elif s.numerator == 1 and k == 1:
            lo, hi = lo // s.denominator, hi // s.denominator
        else:
            raise ParameterError(f"No exact span for kernel {k} with stride {s}")
    return lo, hi


def network_receptive_field(cfg: NetConfig) -> int | None:
    """
    Widest exact span of :class:`ScoreNet` over every alignment with the 2^(depth-1) grid.

    Returns None with attention, which couples every pixel.
    """
    if cfg.attention:
        return None
    layers = layer_specs(cfg)
    widths = []
    for position in range(2 ** (cfg.depth - 1)):
        lo, hi = receptive_interval(layers, position)
        widths.append(hi - lo + 1)
    return max(widths)


def receptive_field_table(configs: tuple[NetConfig, ...] = EVALUATION_NETWORKS) -> dict[str, int]:
    """
    Receptive field r0 for each configuration, keyed by its label.

    Values come from the layer recurrence. A warning is logged wherever the
    built network reaches further, since rounding at nearest-neighbour
    upsampling is position dependent.
    """
    table = {}
    for cfg in configs:
        ledger = receptive_field(layer_specs(cfg))
        exact = network_receptive_field(cfg)
        if exact is not None and exact != ledger:
            logger.warning(
                "%s: layer recurrence gives %d but the network spans up to %d pixels",
                cfg.label,
                ledger,
                exact,
            )
        table[cfg.label] = ledger
    return table
