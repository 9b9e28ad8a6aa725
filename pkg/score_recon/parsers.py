"""
Parsing of Markdown experiment cards.

A card is a Markdown file whose YAML frontmatter holds the structured
experiment sections and whose body may carry ``# Notes`` and ``# Split``
sections copied into the report header. Shared by the sync and async
experiment builders.
"""

import logging
import re
from typing import Any

SECTION_KEYS = ("mask", "model", "schedule", "sampler", "tv")
SCALAR_KEYS = (
    "name",
    "modality",
    "method",
    "lam",
    "seed",
    "dataset",
    "output",
    "workers",
    "record_timings",
)


class ExperimentCardParser:
    """Shared Markdown parsing utility for both sync and async ExperimentBuilder."""

    @staticmethod
    def parse_experiment_markdown(content: str) -> dict[str, Any]:
        """
        Parse Markdown content into an experiment configuration dictionary.

        Args:
            content: Markdown content string to parse

        Returns:
            dict: Raw configuration with the frontmatter sections, ``notes``,
                  ``split`` and ``metadata`` populated

        Raises:
            ValueError: If the frontmatter is invalid or required fields are missing
            ImportError: If required dependencies are not installed
        """
        try:
            import frontmatter
            from ruamel.yaml import YAML
        except ImportError as err:
            missing_lib = "python-frontmatter" if "frontmatter" in str(err) else "ruamel.yaml"
            raise ImportError(
                f"{missing_lib} is required for experiment cards. Install with: pip install {missing_lib}"
            ) from err

        try:

            class RuamelYAMLHandler(frontmatter.YAMLHandler):  # type: ignore[misc]
                def load(self, fm: str) -> Any:
                    return YAML(typ="safe").load(fm)

            post = frontmatter.loads(content, handler=RuamelYAMLHandler())
            metadata = post.metadata
            main_content = post.content
        except Exception as e:
            raise ValueError(f"Error parsing frontmatter: {e}") from e

        sections = ExperimentCardParser._parse_markdown_sections(main_content)

        config: dict[str, Any] = {key: metadata.get(key) for key in SCALAR_KEYS}
        for key in SECTION_KEYS:
            config[key] = ExperimentCardParser._section(metadata, key)
        config["notes"] = sections.get("notes", "").strip()
        config["split"] = sections.get("split", "").strip()
        config["metadata"] = metadata.get("metadata") or {}

        # Unknown frontmatter keys are ignored; custom data goes under 'metadata:'
        ExperimentCardParser._handle_defaults(config)
        ExperimentCardParser._validate_required_fields(config)
        return config

    @staticmethod
    def _section(metadata: dict[str, Any], key: str) -> dict[str, Any] | None:
        value = metadata.get(key)
        if value is None:
            return None
        if isinstance(value, str) and key in ("mask", "model"):
            # shorthand: "mask: G1D4", "model: runs/net.ckpt"
            return {"kind": value} if key == "mask" else {"kind": "checkpoint", "path": value}
        if not isinstance(value, dict):
            raise ValueError(f"'{key}' in frontmatter must be a mapping, got {type(value).__name__}")
        return dict(value)

    @staticmethod
    def _handle_defaults(config: dict[str, Any]) -> None:
        """Warn about optional fields that fall back to defaults."""
        name = config.get("name") or "unknown"
        if config.get("lam") is None and config.get("method") in ("ald", "pc", "tv"):
            logging.warning(f"'lam' missing for experiment '{name}'. Defaulting to 1.0")
        if config.get("output") is None:
            logging.warning(f"'output' missing for experiment '{name}'. Defaulting to 'runs/{name}'")

    @staticmethod
    def _validate_required_fields(config: dict[str, Any]) -> None:
        errors = []
        if not config.get("modality"):
            errors.append("'modality' is required in frontmatter")
        if not config.get("method"):
            errors.append("'method' is required in frontmatter")
        if not config.get("dataset"):
            errors.append("'dataset' is required in frontmatter")
        if errors:
            name = config.get("name", "unknown")
            raise ValueError(
                f"Required fields missing for experiment '{name}':\n"
                + "\n".join(f"  - {error}" for error in errors)
            )

    @staticmethod
    def _parse_markdown_sections(content: str) -> dict[str, str]:
        """
        Split Markdown content into sections keyed by lower-case header text.

        Supports both # and ## level headers.
        """
        sections = {}
        current_section = None
        current_content: list[str] = []
        header_pattern = re.compile(r"^#{1,2}\s+(.+)$")

        for line in content.splitlines():
            header_match = header_pattern.match(line.strip())
            if header_match:
                if current_section and current_content:
                    sections[current_section] = "\n".join(current_content).strip()
                current_section = header_match.group(1).lower().replace(" ", "_")
                current_content = []
            elif current_section:
                current_content.append(line)

        if current_section and current_content:
            sections[current_section] = "\n".join(current_content).strip()

        return sections
