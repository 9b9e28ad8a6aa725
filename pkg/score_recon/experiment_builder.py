"""
ExperimentBuilder for creating ExperimentConfig instances with a fluent interface and validation.

This module provides ExperimentBuilder, which assembles an experiment from
Markdown cards, dictionaries or explicit calls and reports every problem at
once when validating.
"""

from pathlib import Path
from typing import Any

from .errors import ParameterError
from .experiment import (
    MRI_MASKS,
    ExperimentConfig,
    MaskSpec,
    Method,
    ModelSpec,
    SamplerSpec,
    ScheduleSpec,
)
from .operators import Modality
from .variational import TvParams

MODEL_KINDS = ("checkpoint", "gaussian-oracle")
ORACLE_FITS = ("dataset", "scalar")


class ExperimentBuilder:
    """
    Builder pattern for creating ExperimentConfig instances with validation.

    Example:
        >>> # Recommended: load from an experiment card
        >>> cfg = ExperimentBuilder.from_markdown("cards/g1d4_pc.md").build()

        >>> # Override fields after loading
        >>> cfg = (ExperimentBuilder.from_markdown("cards/g1d4_pc.md")
        ...        .seed(11)
        ...        .workers(4)
        ...        .build())

        >>> # Manual construction
        >>> cfg = (ExperimentBuilder("oracle_full")
        ...        .modality("mri")
        ...        .mask("full")
        ...        .method("pc")
        ...        .gaussian_oracle(mean=0.0, variance=4.0)
        ...        .dataset("data/phantoms")
        ...        .seed(0)
        ...        .build())
    """

    def __init__(self, name: str | None = None):
        """
        Initialize ExperimentBuilder with an optional experiment name.

        Args:
            name: Optional identifier for the experiment. If None, it is resolved
                from the card frontmatter, the card file name, or a default.
        """
        self.name = name
        self._modality: str | None = None
        self._mask: dict[str, Any] = {}
        self._method: str | None = None
        self._model: dict[str, Any] | None = None
        self._schedule: dict[str, Any] = {}
        self._sampler: dict[str, Any] = {}
        self._tv: dict[str, Any] = {}
        self._lam: float | None = None
        self._seed: int | None = None
        self._dataset: str | Path | None = None
        self._output: str | Path | None = None
        self._workers: int = 1
        self._record_timings: bool = True
        self._notes: str = ""
        self._split: str = ""
        self._metadata: dict[str, Any] = {}

    def set_name(self, name: str) -> "ExperimentBuilder":
        """Set the experiment name."""
        self.name = name
        return self

    def modality(self, modality: str | Modality) -> "ExperimentBuilder":
        """Set the modality: ``mri`` or ``ct``."""
        self._modality = modality.value if isinstance(modality, Modality) else modality
        return self

    def mask(self, kind: str, **params: Any) -> "ExperimentBuilder":
        """Set the undersampling pattern, e.g. ``mask("gaussian1d", accel=8)``."""
        self._mask = {"kind": kind, **params}
        return self

    def sparse_view(self, views: int, detectors: int | None = None) -> "ExperimentBuilder":
        """Convenience for CT: ``views`` equispaced projection angles."""
        self._modality = Modality.CT.value
        self._mask = {"kind": "sparse-view", "views": views, "detectors": detectors}
        return self

    def method(self, method: str | Method) -> "ExperimentBuilder":
        """Set the reconstruction method: ``ald``, ``pc``, ``tv`` or ``zero-filled``."""
        self._method = method.value if isinstance(method, Method) else method
        return self

    def model_checkpoint(self, path: str | Path, use_ema: bool = True) -> "ExperimentBuilder":
        """Use a trained score network from a checkpoint file."""
        self._model = {"kind": "checkpoint", "path": path, "use_ema": use_ema}
        return self

    def gaussian_oracle(
        self, mean: float | None = None, variance: float | None = None
    ) -> "ExperimentBuilder":
        """
        Use an analytic Gaussian prior as score model.

        Without arguments the prior is fitted to the normalized dataset;
        with ``mean`` and ``variance`` it is the isotropic N(mean, variance I).
        """
        if mean is None and variance is None:
            self._model = {"kind": "gaussian-oracle", "fit": "dataset"}
        else:
            self._model = {
                "kind": "gaussian-oracle",
                "fit": "scalar",
                "mean": 0.0 if mean is None else mean,
                "variance": 1.0 if variance is None else variance,
            }
        return self

    def schedule(
        self, n: int | None = None, sigma_min: float = 0.01, sigma_max: float = 378.0
    ) -> "ExperimentBuilder":
        """Set the noise ladder; ``n`` defaults to 500 for ALD and 250 for PC."""
        self._schedule = {"n": n, "sigma_min": sigma_min, "sigma_max": sigma_max}
        return self

    def sampler(self, **params: Any) -> "ExperimentBuilder":
        """Set sampler settings (``n_start``, ``m``, ``eps0``, ``snr``, ``corrector_steps``)."""
        self._sampler.update(params)
        return self

    def tv(self, **params: Any) -> "ExperimentBuilder":
        """Set TV solver settings (``epsilon``, ``max_iters``, ``tol``, ``grad_tol``)."""
        self._tv.update(params)
        return self

    def lam(self, lam: float) -> "ExperimentBuilder":
        """Set the data weight: in [0, 1] for samplers, >= 0 for TV."""
        self._lam = lam
        return self

    def seed(self, seed: int) -> "ExperimentBuilder":
        self._seed = seed
        return self

    def dataset(self, path: str | Path) -> "ExperimentBuilder":
        """Set the dataset: a raw image file or a directory of ``*.srimg`` files."""
        self._dataset = path
        return self

    def output(self, path: str | Path) -> "ExperimentBuilder":
        self._output = path
        return self

    def workers(self, workers: int) -> "ExperimentBuilder":
        """Set the number of slices reconstructed concurrently."""
        self._workers = workers
        return self

    def record_timings(self, record: bool) -> "ExperimentBuilder":
        """Disable to leave ``time_s`` empty so reruns produce identical CSV bytes."""
        self._record_timings = record
        return self

    def notes(self, notes: str) -> "ExperimentBuilder":
        self._notes = notes
        return self

    def update_metadata(self, metadata: dict[str, Any]) -> "ExperimentBuilder":
        """
        Merge user-defined data into the ``metadata`` field.

        Args:
            metadata: Dictionary containing custom metadata to merge

        Returns:
            ExperimentBuilder: Self for method chaining
        """
        if not isinstance(metadata, dict):
            raise ValueError("Metadata must be a dictionary")
        self._metadata.update(metadata)
        return self

    def from_dict(self, config_dict: dict[str, Any]) -> "ExperimentBuilder":
        """
        Load experiment fields from a configuration dictionary.

        Keys that are absent or None leave the current builder value untouched.

        Raises:
            ValueError: If config_dict is not a dictionary
        """
        if not isinstance(config_dict, dict):
            raise ValueError(f"Configuration must be a dictionary for experiment '{self.name}'")

        if not self.name and config_dict.get("name"):
            self.name = str(config_dict["name"])
        if config_dict.get("modality") is not None:
            self._modality = str(config_dict["modality"])
        if config_dict.get("method") is not None:
            self._method = str(config_dict["method"])
        if config_dict.get("mask"):
            self._mask = dict(config_dict["mask"])
        if config_dict.get("model"):
            self._model = dict(config_dict["model"])
        for key in ("schedule", "sampler", "tv"):
            if config_dict.get(key):
                getattr(self, f"_{key}").update(config_dict[key])
        for key in ("lam", "seed", "dataset", "output", "workers", "record_timings"):
            if config_dict.get(key) is not None:
                setattr(self, f"_{key}", config_dict[key])
        if config_dict.get("notes"):
            self._notes = config_dict["notes"]
        if config_dict.get("split"):
            self._split = config_dict["split"]
        if config_dict.get("metadata"):
            self._metadata.update(config_dict["metadata"])
        return self

    def with_markdown(self, content: str) -> "ExperimentBuilder":
        """
        Load an experiment card from Markdown content with YAML frontmatter.

        Example card:
        ```markdown
        ---
        name: corpd_g1d4_pc
        modality: mri
        mask:
          kind: G1D4
        method: pc
        model:
          kind: gaussian-oracle
          fit: dataset
        lam: 1.0
        seed: 7
        dataset: data/phantoms
        output: runs/g1d4
        ---

        # Notes
        Desk-scale stand-in for the 4-fold 1-D Gaussian evaluation.
        ```

        Raises:
            ValueError: If the Markdown format is invalid
        """
        return self._load_from_markdown_content(content, None)

    def with_markdown_file(self, file_path: str | Path) -> "ExperimentBuilder":
        """
        Load an experiment card from a Markdown file.

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValueError: If the Markdown format is invalid
        """
        file_path = Path(file_path)
        if not file_path.exists():
            raise FileNotFoundError(f"Experiment card not found: {file_path}")
        with file_path.open(encoding="utf-8") as f:
            content = f.read()
        return self._load_from_markdown_content(content, file_path.stem)

    @classmethod
    def from_markdown(cls, file_path: str | Path) -> "ExperimentBuilder":
        """Create an ExperimentBuilder from a Markdown experiment card."""
        return cls().with_markdown_file(file_path)

    @classmethod
    def from_config_dict(
        cls, config_dict: dict[str, Any], name: str | None = None
    ) -> "ExperimentBuilder":
        """Create an ExperimentBuilder from a dictionary such as a config echo."""
        return cls(name or config_dict.get("name")).from_dict(config_dict)

    def _resolve_name(self, config: dict[str, Any], fallback_name: str | None = None) -> str:
        """
        Resolve the final name.

        Priority: builder name, frontmatter name, fallback (file stem),
        then ``"unnamed_experiment"``.
        """
        if self.name:
            return self.name
        if config.get("name"):
            return str(config["name"])
        if fallback_name:
            return fallback_name
        return "unnamed_experiment"

    def _load_from_markdown_content(
        self, content: str, fallback_name: str | None = None
    ) -> "ExperimentBuilder":
        from .parsers import ExperimentCardParser

        config = ExperimentCardParser.parse_experiment_markdown(content)
        self.name = self._resolve_name(config, fallback_name)
        return self.from_dict(config)

    def _assemble(self, errors: list[str]) -> ExperimentConfig | None:
        """Convert builder state into an ExperimentConfig, collecting problems in ``errors``."""
        name = self.name
        if not name:
            errors.append("Experiment name is required")

        modality = None
        try:
            modality = Modality(str(self._modality).lower()) if self._modality else None
        except ValueError:
            errors.append(f"Invalid modality '{self._modality}'. Must be one of {[m.value for m in Modality]}")
        if self._modality is None:
            errors.append(f"Modality is required for experiment '{name}'")

        method = None
        try:
            method = Method(str(self._method).lower()) if self._method else None
        except ValueError:
            errors.append(f"Invalid method '{self._method}'. Must be one of {[m.value for m in Method]}")
        if self._method is None:
            errors.append(f"Method is required for experiment '{name}'")

        mask = self._assemble_mask(modality, errors)
        model = self._assemble_model(method, errors)

        try:
            schedule = ScheduleSpec(**self._schedule)
        except TypeError as e:
            errors.append(f"Invalid schedule settings: {e}")
            schedule = ScheduleSpec()
        try:
            sampler = SamplerSpec(**self._sampler)
        except TypeError as e:
            errors.append(f"Invalid sampler settings: {e}")
            sampler = SamplerSpec()
        try:
            tv = TvParams(**self._tv)
        except (TypeError, ParameterError) as e:
            errors.append(f"Invalid tv settings: {e}")
            tv = TvParams()

        lam = 1.0 if self._lam is None else float(self._lam)
        if method is Method.TV and lam < 0:
            errors.append(f"lam must be >= 0 for TV, got {lam}")
        elif method is not None and method.stochastic and not 0 <= lam <= 1:
            errors.append(f"lam must lie in [0, 1] for samplers, got {lam}")

        if self._seed is not None and int(self._seed) < 0:
            errors.append(f"seed must be non-negative, got {self._seed}")
        if self._dataset is None:
            errors.append(f"Dataset path is required for experiment '{name}'")
        if int(self._workers) < 1:
            errors.append(f"workers must be >= 1, got {self._workers}")

        if modality is None or method is None or mask is None or self._dataset is None or not name:
            return None

        cfg = ExperimentConfig(
            name=name,
            modality=modality,
            mask=mask,
            method=method,
            dataset=Path(self._dataset),
            output=Path(self._output) if self._output is not None else Path("runs") / name,
            seed=None if self._seed is None else int(self._seed),
            model=model,
            schedule=schedule,
            sampler=sampler,
            tv=tv,
            lam=lam,
            workers=int(self._workers),
            record_timings=bool(self._record_timings),
            notes="\n\n".join(s for s in (self._notes, self._split and f"Split: {self._split}") if s),
            metadata=dict(self._metadata),
        )
        if cfg.stochastic and cfg.seed is None:
            errors.append(f"Seed is required for stochastic experiment '{name}'")
        try:
            if method is Method.ALD:
                cfg.ald_params()
            elif method is Method.PC:
                cfg.pc_params()
            elif method is Method.TV:
                cfg.tv_params()
        except ParameterError as e:
            errors.append(str(e).replace("\n", " "))
        return cfg

    def _assemble_mask(self, modality: Modality | None, errors: list[str]) -> MaskSpec | None:
        params = dict(self._mask)
        if modality is Modality.CT:
            params.setdefault("kind", "sparse-view")
        try:
            mask = MaskSpec(**params)
        except TypeError as e:
            errors.append(f"Invalid mask settings: {e}")
            return None
        key = mask.kind.upper()
        if modality is Modality.CT and key != "SPARSE-VIEW":
            errors.append(f"CT experiments need a 'sparse-view' mask, got '{mask.kind}'")
        if modality is Modality.MRI and key not in MRI_MASKS:
            errors.append(f"Unknown MRI mask '{mask.kind}'")
        if mask.accel < 1:
            errors.append(f"Mask acceleration must be >= 1, got {mask.accel}")
        if not 0 <= mask.center_frac < 1:
            errors.append(f"Mask center_frac must lie in [0, 1), got {mask.center_frac}")
        if key == "SPARSE-VIEW" and mask.views < 2:
            errors.append(f"Sparse-view CT needs at least 2 views, got {mask.views}")
        return mask

    def _assemble_model(self, method: Method | None, errors: list[str]) -> ModelSpec | None:
        if self._model is None:
            if method is not None and method.stochastic:
                errors.append(f"A score model is required for method '{method.value}'")
            return None
        params = dict(self._model)
        if params.get("path") is not None:
            params["path"] = Path(params["path"])
        try:
            model = ModelSpec(**params)
        except TypeError as e:
            errors.append(f"Invalid model settings: {e}")
            return None
        if model.kind not in MODEL_KINDS:
            errors.append(f"Invalid model kind '{model.kind}'. Must be one of {list(MODEL_KINDS)}")
        if model.kind == "checkpoint" and model.path is None:
            errors.append("Checkpoint models need a 'path'")
        if model.kind == "gaussian-oracle":
            if model.fit not in ORACLE_FITS:
                errors.append(f"Invalid oracle fit '{model.fit}'. Must be one of {list(ORACLE_FITS)}")
            if model.fit == "scalar" and model.variance <= 0:
                errors.append(f"Oracle variance must be positive, got {model.variance}")
        return model

    def validate(self) -> "ExperimentBuilder":
        """
        Validate the current configuration before building.

        Raises:
            ValueError: Listing every problem found
        """
        errors: list[str] = []
        self._assemble(errors)
        if errors:
            error_msg = f"Experiment validation failed for '{self.name}':\n" + "\n".join(
                f"  - {error}" for error in errors
            )
            raise ValueError(error_msg)
        return self

    def build(self) -> ExperimentConfig:
        """
        Build the ExperimentConfig with validation.

        Raises:
            ValueError: If validation fails
        """
        errors: list[str] = []
        cfg = self._assemble(errors)
        if errors or cfg is None:
            error_msg = f"Experiment validation failed for '{self.name}':\n" + "\n".join(
                f"  - {error}" for error in errors
            )
            raise ValueError(error_msg)
        return cfg

    def __repr__(self) -> str:
        return (
            f"ExperimentBuilder(name='{self.name}', modality='{self._modality}', "
            f"method='{self._method}', mask={self._mask.get('kind')!r})"
        )
