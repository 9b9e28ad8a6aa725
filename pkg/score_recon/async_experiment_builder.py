"""
AsyncExperimentBuilder for creating ExperimentConfig instances with fluent async-safe chaining.

Methods record operations in a queue and execute them during build(), so a
whole chain needs a single await: ``await builder.a().b().build()``. Card
files are read with aiofiles so the event loop is never blocked.
"""

from __future__ import annotations

import logging
from collections.abc import Awaitable, Callable
from pathlib import Path
from typing import Any, Self, cast

from .experiment import ExperimentConfig
from .experiment_builder import ExperimentBuilder


class AsyncExperimentBuilder:
    """
    Fluent async-safe builder for ExperimentConfig.

    Every call is queued and replayed in order against an internal
    :class:`ExperimentBuilder` during :meth:`build`; errors surface there.

    Examples:
        >>> cfg = await (AsyncExperimentBuilder("g1d4")
        ...              .from_markdown("cards/g1d4_pc.md")
        ...              .seed(3)
        ...              .workers(4)
        ...              .build())

        Debug mode logs each replayed step:
        >>> cfg = await (AsyncExperimentBuilder("debug", debug=True)
        ...              .modality("mri")
        ...              .method("zero-filled")
        ...              .mask("full")
        ...              .dataset("data")
        ...              .build())
        # Will log: "AsyncExperimentBuilder Running sync step: set_modality" etc.
    """

    def __init__(self, name: str | None = None, debug: bool = False):
        """
        Initialize AsyncExperimentBuilder.

        Args:
            name: Optional experiment name (wins over the card's name)
            debug: Enable debug logging of execution steps
        """
        self.name = name
        self._debug = debug
        self._logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        # Queue of (is_async, function) tuples for deferred execution
        self._steps: list[tuple[int, Callable[[], None] | Callable[[], Awaitable[None]]]] = []
        self._builder = ExperimentBuilder(name)

    def _record_sync(self, func: Callable[[], None]) -> None:
        self._steps.append((0, func))

    def _record_async(self, func: Callable[[], Awaitable[None]]) -> None:
        self._steps.append((1, func))

    def _log(self, label: str, func: Callable[[], None] | Callable[[], Awaitable[None]]) -> None:
        if self._debug:
            fname = getattr(func, "__name__", repr(func))
            self._logger.debug("AsyncExperimentBuilder %s: %s", label, fname)

    def _defer(self, step_name: str, method: str, *args: Any, **kwargs: Any) -> Self:
        def step() -> None:
            getattr(self._builder, method)(*args, **kwargs)

        step.__name__ = step_name
        self._record_sync(step)
        return self

    # ---- Sync builder methods ----

    def modality(self, modality: str) -> Self:
        return self._defer("set_modality", "modality", modality)

    def mask(self, kind: str, **params: Any) -> Self:
        return self._defer("set_mask", "mask", kind, **params)

    def sparse_view(self, views: int, detectors: int | None = None) -> Self:
        return self._defer("set_sparse_view", "sparse_view", views, detectors)

    def method(self, method: str) -> Self:
        return self._defer("set_method", "method", method)

    def model_checkpoint(self, path: str | Path, use_ema: bool = True) -> Self:
        return self._defer("set_model_checkpoint", "model_checkpoint", path, use_ema)

    def gaussian_oracle(self, mean: float | None = None, variance: float | None = None) -> Self:
        return self._defer("set_gaussian_oracle", "gaussian_oracle", mean, variance)

    def schedule(
        self, n: int | None = None, sigma_min: float = 0.01, sigma_max: float = 378.0
    ) -> Self:
        return self._defer("set_schedule", "schedule", n, sigma_min, sigma_max)

    def sampler(self, **params: Any) -> Self:
        return self._defer("set_sampler", "sampler", **params)

    def tv(self, **params: Any) -> Self:
        return self._defer("set_tv", "tv", **params)

    def lam(self, lam: float) -> Self:
        return self._defer("set_lam", "lam", lam)

    def seed(self, seed: int) -> Self:
        return self._defer("set_seed", "seed", seed)

    def dataset(self, path: str | Path) -> Self:
        return self._defer("set_dataset", "dataset", path)

    def output(self, path: str | Path) -> Self:
        return self._defer("set_output", "output", path)

    def workers(self, workers: int) -> Self:
        return self._defer("set_workers", "workers", workers)

    def record_timings(self, record: bool) -> Self:
        return self._defer("set_record_timings", "record_timings", record)

    def update_metadata(self, metadata: dict[str, Any]) -> Self:
        return self._defer("update_metadata", "update_metadata", metadata)

    def from_dict(self, config_dict: dict[str, Any]) -> Self:
        return self._defer("load_from_dict", "from_dict", config_dict)

    # ---- Async builder methods ----

    def from_markdown(self, file_path: str | Path) -> Self:
        """
        Load an experiment card asynchronously.

        The file is read during build(), not here.

        Raises:
            FileNotFoundError: If the card doesn't exist (raised during build())
            ValueError: If the card is invalid (raised during build())
        """

        async def load_from_markdown() -> None:
            from .parsers import ExperimentCardParser

            try:
                import aiofiles
                import aiofiles.os
            except ImportError as err:
                raise ImportError(
                    "aiofiles is required for async card loading. Install with: pip install aiofiles"
                ) from err

            file_path_obj = Path(file_path)
            if not await aiofiles.os.path.exists(file_path_obj):
                raise FileNotFoundError(f"Experiment card not found: {file_path_obj}")

            async with aiofiles.open(file_path_obj, encoding="utf-8") as f:
                content = await f.read()

            config = ExperimentCardParser.parse_experiment_markdown(content)
            self._builder.name = self.name or config.get("name") or file_path_obj.stem
            self._builder.from_dict(config)

        self._record_async(load_from_markdown)
        return self

    # ---- Finalizer ----

    async def _replay(self) -> None:
        for is_async, func in self._steps:
            if is_async:
                self._log("Awaiting async step", func)
                await cast(Callable[[], Awaitable[None]], func)()
            else:
                self._log("Running sync step", func)
                cast(Callable[[], None], func)()
        self._steps = []

    async def validate(self) -> None:
        """Replay queued steps and validate without building."""
        await self._replay()
        self._builder.validate()

    async def build(self) -> ExperimentConfig:
        """
        Execute all deferred operations and build the ExperimentConfig.

        Raises:
            ValueError: If validation fails
        """
        await self._replay()
        cfg = self._builder.build()
        self.name = cfg.name
        return cfg

    def __repr__(self) -> str:
        return f"AsyncExperimentBuilder(name='{self.name}', queued_steps={len(self._steps)})"
