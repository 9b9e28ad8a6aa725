"""Tests for ExperimentBuilder: Markdown cards, fluent calls and validation."""

import tempfile
from pathlib import Path

import pytest

from score_recon import ExperimentBuilder
from score_recon.experiment import Method
from score_recon.imgcore import make_rng
from score_recon.operators import CtOperator, Modality, MriOperator
from score_recon.parsers import ExperimentCardParser

CARD = """---
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
workers: 2
schedule:
  n: 100
metadata:
  owner: recon-team
---

# Notes
Desk-scale stand-in for the 4-fold evaluation.

# Split
slices 0-9 of the validation set
"""


def _write_card(content, suffix=".md"):
    with tempfile.NamedTemporaryFile(mode="w", suffix=suffix, delete=False, encoding="utf-8") as f:
        f.write(content)
        return Path(f.name)


def test_from_markdown_basic():
    """Load a complete card and build it."""
    path = _write_card(CARD)
    try:
        builder = ExperimentBuilder.from_markdown(path)
        assert builder.name == "corpd_g1d4_pc"
        assert builder._mask == {"kind": "G1D4"}
        assert builder._metadata == {"owner": "recon-team"}

        cfg = builder.build()
        assert cfg.modality is Modality.MRI
        assert cfg.method is Method.PC
        assert cfg.mask_label == "G1D4"
        assert cfg.model is not None and cfg.model.fit == "dataset"
        assert cfg.seed == 7
        assert cfg.workers == 2
        assert cfg.dataset == Path("data/phantoms")
        assert cfg.output == Path("runs/g1d4")
        assert len(cfg.sigma_schedule()) == 100
        assert cfg.pc_params().n == 100
        assert "Desk-scale stand-in" in cfg.notes
        assert "Split: slices 0-9" in cfg.notes
    finally:
        path.unlink()


def test_from_markdown_no_frontmatter():
    path = _write_card("# Notes\nJust prose, no settings.\n")
    try:
        with pytest.raises(ValueError, match="Required fields missing"):
            ExperimentBuilder.from_markdown(path)
    finally:
        path.unlink()


def test_markdown_required_fields_validation():
    path = _write_card("---\nmethod: pc\ndataset: data\n---\n")
    try:
        with pytest.raises(ValueError, match="'modality' is required in frontmatter"):
            ExperimentBuilder.from_markdown(path)
    finally:
        path.unlink()


def test_markdown_invalid_yaml():
    with pytest.raises(ValueError, match="Error parsing frontmatter"):
        ExperimentBuilder().with_markdown("---\nmodality: [mri\n---\n")


def test_markdown_shorthands():
    config = ExperimentCardParser.parse_experiment_markdown(
        "---\nmodality: mri\nmethod: ald\nmask: R11\nmodel: runs/net.ckpt\ndataset: data\n---\n"
    )
    assert config["mask"] == {"kind": "R11"}
    assert config["model"] == {"kind": "checkpoint", "path": "runs/net.ckpt"}
    assert config["notes"] == ""


def test_markdown_section_must_be_mapping():
    with pytest.raises(ValueError, match="'schedule' in frontmatter must be a mapping"):
        ExperimentCardParser.parse_experiment_markdown(
            "---\nmodality: mri\nmethod: pc\ndataset: d\nschedule: 250\n---\n"
        )


def test_name_resolution_priority():
    no_name = CARD.replace("name: corpd_g1d4_pc\n", "")
    path = _write_card(no_name)
    try:
        assert ExperimentBuilder("explicit").with_markdown_file(path).name == "explicit"
        assert ExperimentBuilder.from_markdown(path).name == path.stem
        assert ExperimentBuilder().with_markdown(no_name).name == "unnamed_experiment"
        assert ExperimentBuilder().with_markdown(CARD).name == "corpd_g1d4_pc"
    finally:
        path.unlink()


def test_missing_card_file():
    with pytest.raises(FileNotFoundError, match="Experiment card not found"):
        ExperimentBuilder.from_markdown("/nonexistent/card.md")


def test_fluent_build_defaults():
    cfg = (
        ExperimentBuilder("oracle_full")
        .modality("mri")
        .mask("full")
        .method("ald")
        .gaussian_oracle(mean=0.0, variance=4.0)
        .dataset("data")
        .seed(0)
        .build()
    )
    assert cfg.output == Path("runs/oracle_full")
    assert cfg.lam == 1.0
    assert len(cfg.sigma_schedule()) == 500
    assert cfg.ald_params().n_start == 230
    assert cfg.model is not None and cfg.model.fit == "scalar" and cfg.model.variance == 4.0
    assert isinstance(cfg.build_operator((16, 16), make_rng(0)), MriOperator)


def test_deterministic_baseline_needs_no_seed_or_model():
    cfg = (
        ExperimentBuilder("zf")
        .modality("mri")
        .mask("lowpass", half_width=3)
        .method("zero-filled")
        .dataset("d")
        .build()
    )
    assert cfg.seed is None
    assert cfg.model is None
    assert not cfg.stochastic
    assert cfg.mask_label == "LP3"


def test_random_mask_needs_seed():
    with pytest.raises(ValueError, match="Seed is required"):
        ExperimentBuilder("tv").modality("mri").mask("G2D4").method("tv").dataset("d").build()


def test_validation_collects_all_errors():
    builder = ExperimentBuilder("bad").modality("pet").method("magic")
    with pytest.raises(ValueError) as info:
        builder.validate()
    message = str(info.value)
    assert message.startswith("Experiment validation failed for 'bad':")
    assert "Invalid modality 'pet'" in message
    assert "Invalid method 'magic'" in message
    assert "Dataset path is required" in message


def test_sampler_checks():
    base = ExperimentBuilder("pc").modality("mri").mask("full").method("pc").dataset("d").seed(1)
    with pytest.raises(ValueError, match="A score model is required"):
        base.build()
    base.gaussian_oracle()
    with pytest.raises(ValueError, match=r"lam must lie in \[0, 1\]"):
        base.lam(2.0).build()
    with pytest.raises(ValueError, match="Checkpoint models need a 'path'"):
        base.lam(1.0).from_dict({"model": {"kind": "checkpoint"}}).build()


def test_tv_accepts_large_lambda():
    cfg = (
        ExperimentBuilder("tv")
        .modality("mri")
        .mask("full")
        .method("tv")
        .lam(1e3)
        .tv(max_iters=50)
        .dataset("d")
        .build()
    )
    assert cfg.tv_params().lam == 1e3
    assert cfg.tv_params().max_iters == 50


def test_ct_experiments():
    cfg = ExperimentBuilder("ct").sparse_view(30).method("zero-filled").dataset("d").build()
    assert cfg.modality is Modality.CT
    assert cfg.mask_label == "SV30"
    op = cfg.build_operator((32, 32), make_rng(0))
    assert isinstance(op, CtOperator)
    assert op.sinogram_shape == (30, 32)

    with pytest.raises(ValueError, match="need a 'sparse-view' mask"):
        ExperimentBuilder("ct").modality("ct").mask("G1D4").method("tv").dataset("d").build()
    with pytest.raises(ValueError, match="Unknown MRI mask"):
        ExperimentBuilder("mri").modality("mri").mask("G3D").method("tv").dataset("d").build()


def test_config_echo_round_trip():
    cfg = ExperimentBuilder().with_markdown(CARD).build()
    again = ExperimentBuilder.from_config_dict(cfg.to_dict()).build()
    assert again == cfg


def test_update_metadata():
    builder = ExperimentBuilder("m").update_metadata({"a": 1}).update_metadata({"b": 2})
    assert builder._metadata == {"a": 1, "b": 2}
    with pytest.raises(ValueError, match="Metadata must be a dictionary"):
        builder.update_metadata(["not", "a", "dict"])


def test_repr():
    builder = ExperimentBuilder("r").modality("mri").method("pc").mask("G1D8")
    assert repr(builder) == "ExperimentBuilder(name='r', modality='mri', method='pc', mask='G1D8')"
