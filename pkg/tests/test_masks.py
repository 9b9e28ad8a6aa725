"""Tests for k-space undersampling masks."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from score_recon.errors import DimensionError, ParameterError
from score_recon.imgcore import make_rng
from score_recon.masks import (
    EVALUATION_MASKS,
    KMask,
    full_mask,
    load_mask,
    mask_gaussian1d,
    mask_gaussian2d,
    mask_lowpass,
    mask_poisson_disk,
    mask_radial,
    preset_mask,
    save_mask,
    spokes_for_acceleration,
)


def test_gaussian1d_counts():
    mask = mask_gaussian1d(320, 4, 0.04, make_rng(0))
    columns = mask.centered()[0]
    assert columns.sum() == 80
    # 12 central columns are always kept
    assert columns[160 - 6 : 160 + 6].all()
    assert mask.label == "G1D4"


def test_gaussian1d_constant_along_rows():
    mask = mask_gaussian1d(64, 4, 0.08, make_rng(1), rows=32)
    assert mask.shape == (32, 64)
    assert np.all(mask.keep == mask.keep[0])


def test_gaussian1d_accel_one_keeps_everything():
    mask = mask_gaussian1d(50, 1, 0.04, make_rng(2))
    assert mask.kept_fraction == 1.0


def test_gaussian1d_deterministic():
    a = mask_gaussian1d(128, 8, 0.04, make_rng(5))
    b = mask_gaussian1d(128, 8, 0.04, make_rng(5))
    c = mask_gaussian1d(128, 8, 0.04, make_rng(6))
    assert a == b
    assert a != c


def test_gaussian1d_validation():
    with pytest.raises(ParameterError, match="Acceleration"):
        mask_gaussian1d(64, 0.5, 0.04, make_rng(0))
    with pytest.raises(ParameterError, match="center_frac"):
        mask_gaussian1d(64, 4, 1.0, make_rng(0))
    with pytest.raises(DimensionError):
        mask_gaussian1d(0, 4, 0.04, make_rng(0))


def test_gaussian2d_count():
    mask = mask_gaussian2d(320, 320, 4, make_rng(3))
    assert 0.9 * 25600 <= mask.kept <= 1.1 * 25600
    assert mask.label == "G2D4"


def test_gaussian2d_favours_low_frequencies():
    mask = mask_gaussian2d(64, 64, 4, make_rng(4)).centered()
    assert mask[24:40, 24:40].mean() > mask[:8, :8].mean()


def test_radial_contains_dc_and_is_deterministic():
    mask = mask_radial(64, 64, 11)
    assert mask.keep[0, 0]
    assert mask == mask_radial(64, 64, 11)
    assert mask.label == "R11"


def test_radial_many_spokes_cover_kspace():
    assert mask_radial(32, 32, 256).kept_fraction > 0.95


def test_spokes_for_acceleration():
    spokes = spokes_for_acceleration(64, 64, 11)
    assert mask_radial(64, 64, spokes).kept_fraction >= 1 / 11
    if spokes > 1:
        assert mask_radial(64, 64, spokes - 1).kept_fraction < 1 / 11


def test_poisson_disk_respects_radius():
    radius = 2.5
    mask = mask_poisson_disk(40, 40, 6, make_rng(7), radius=radius, center_size=4)
    keep = mask.centered()
    forced = np.zeros_like(keep)
    forced[18:22, 18:22] = True
    assert keep[forced].all()
    pts = np.argwhere(keep & ~forced).astype(float)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    assert np.sqrt(d2.min()) >= radius - 1e-9


def test_poisson_disk_kept_fraction():
    mask = mask_poisson_disk(64, 64, 15, make_rng(8))
    assert abs(mask.kept_fraction - 1 / 15) <= 0.1 / 15
    assert mask.label == "P15"


def test_lowpass_is_conjugate_symmetric():
    mask = mask_lowpass(16, 16, 3)
    assert mask.is_conjugate_symmetric()
    assert mask.kept == 16 * 7
    assert full_mask(8, 8).is_conjugate_symmetric()


def test_random_mask_is_not_conjugate_symmetric():
    assert not mask_gaussian2d(32, 32, 4, make_rng(0)).is_conjugate_symmetric()


def test_kmask_properties():
    mask = mask_lowpass(8, 8, 1)
    assert mask.kept_fraction == pytest.approx(3 / 8)
    assert mask.acceleration == pytest.approx(8 / 3)
    assert "LP1" in repr(mask)
    with pytest.raises(ParameterError, match="keeps no frequencies"):
        KMask(np.zeros((4, 4), dtype=bool))
    with pytest.raises(DimensionError):
        KMask(np.ones(4, dtype=bool))


def test_kmask_is_immutable():
    mask = full_mask(4, 4)
    with pytest.raises(ValueError):
        mask.keep[0, 0] = False


@pytest.mark.parametrize("name", EVALUATION_MASKS)
def test_presets(name):
    mask = preset_mask(name, 64, 64, make_rng(0))
    assert mask.label == name
    assert mask.shape == (64, 64)


def test_unknown_preset():
    with pytest.raises(ParameterError, match="Unknown mask preset"):
        preset_mask("G3D2", 32, 32, make_rng(0))


def test_save_load_mask():
    mask = mask_gaussian1d(32, 4, 0.08, make_rng(9))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "G1D4.srimg"
        save_mask(path, mask)
        loaded = load_mask(path)
    assert loaded == mask
    assert loaded.label == "G1D4"
