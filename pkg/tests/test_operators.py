"""Tests for the DFT, MRI and CT measurement operators."""

import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from score_recon.errors import DegenerateInputError, DimensionError, FormatError, ParameterError
from score_recon.imgcore import make_rng
from score_recon.masks import full_mask, mask_gaussian2d, mask_lowpass
from score_recon.operators import (
    AngleSet,
    CtOperator,
    Modality,
    MriOperator,
    backproject,
    dft2,
    fbp,
    idft2,
    load_angles,
    mri_adjoint,
    mri_forward,
    preset_angles,
    radon,
    save_angles,
    sparse_view_angles,
)


def _blob(size, width):
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((xx - c) ** 2 + (yy - c) ** 2) / (2 * width**2))


def test_dft2_delta_is_flat():
    x = np.zeros((4, 4))
    x[0, 0] = 1.0
    np.testing.assert_allclose(dft2(x), np.full((4, 4), 0.25), atol=1e-15)


def test_dft2_constant_has_single_dc_bin():
    k = dft2(np.full((8, 8), 2.5))
    assert k[0, 0] == pytest.approx(2.5 * 8)
    k[0, 0] = 0
    assert np.abs(k).max() < 1e-12


def test_dft2_parseval_and_inverse():
    x = make_rng(0).standard_normal((16, 12))
    assert np.linalg.norm(dft2(x)) == pytest.approx(np.linalg.norm(x), rel=1e-12)
    np.testing.assert_allclose(idft2(dft2(x)).real, x, atol=1e-12)


def test_mri_full_mask_is_dft():
    x = make_rng(1).standard_normal((8, 8))
    mask = full_mask(8, 8)
    np.testing.assert_allclose(mri_forward(x, mask), dft2(x), atol=1e-14)
    np.testing.assert_allclose(mri_adjoint(mri_forward(x, mask), mask).real, x, atol=1e-12)


def test_mri_masked_entries_are_zero():
    mask = mask_gaussian2d(16, 16, 4, make_rng(2))
    y = mri_forward(make_rng(3).standard_normal((16, 16)), mask)
    assert np.all(y[~mask.keep] == 0)


def test_mri_adjoint_identity_random_pairs():
    rng = make_rng(4)
    mask = mask_gaussian2d(32, 32, 4, make_rng(5))
    for _ in range(100):
        x = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
        y = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
        lhs = np.vdot(mri_forward(x, mask), y)
        rhs = np.vdot(x, mri_adjoint(y, mask))
        assert abs(lhs - rhs) <= 1e-9 * abs(lhs)


def test_mri_normal_operator_is_projection():
    mask = mask_gaussian2d(16, 16, 2, make_rng(6))
    x = make_rng(7).standard_normal((16, 16))
    once = mri_adjoint(mri_forward(x, mask), mask)
    twice = mri_adjoint(mri_forward(once, mask), mask)
    np.testing.assert_allclose(twice, once, atol=1e-10)


def test_mri_shape_mismatch():
    with pytest.raises(DimensionError, match="does not match mask"):
        mri_forward(np.zeros((8, 8)), full_mask(4, 4))


def test_sparse_view_angles():
    assert sparse_view_angles(2).angles == (0.0, math.pi / 2)
    angles = sparse_view_angles(60).as_array()
    np.testing.assert_allclose(np.diff(angles), math.pi / 60, atol=1e-15)
    assert np.all(angles < math.pi)
    assert sparse_view_angles(60).label == "SV60"
    assert len(preset_angles("SV30")) == 30


def test_angle_set_validation():
    with pytest.raises(ParameterError, match="at least one"):
        AngleSet(())
    with pytest.raises(ParameterError, match=r"\[0, pi\)"):
        AngleSet((0.0, math.pi))
    with pytest.raises(ParameterError, match="strictly increasing"):
        AngleSet((0.5, 0.1))
    with pytest.raises(ParameterError):
        preset_angles("SV7")


def test_radon_zero_image():
    assert np.all(radon(np.zeros((16, 16)), sparse_view_angles(8)) == 0)


def test_radon_rotational_symmetry():
    sino = radon(_blob(128, 16.0), sparse_view_angles(8))
    spread = np.abs(sino - sino[0]).max()
    assert spread <= 1e-3 * np.abs(sino).max()


def test_radon_mass_conservation():
    x = _blob(64, 6.0)
    sino = radon(x, sparse_view_angles(12))
    np.testing.assert_allclose(sino.sum(axis=1), x.sum(), rtol=0.01)


def test_radon_requires_square():
    with pytest.raises(DimensionError, match="square"):
        radon(np.zeros((8, 6)), sparse_view_angles(4))


def test_radon_backproject_adjoint():
    rng = make_rng(8)
    angles = sparse_view_angles(30)
    for _ in range(10):
        x = rng.standard_normal((32, 32))
        s = rng.standard_normal((30, 32))
        lhs = np.vdot(radon(x, angles), s)
        rhs = np.vdot(x, backproject(s, angles, 32))
        assert abs(lhs - rhs) <= 1e-6 * abs(lhs)


def test_single_angle_backprojection_smears_along_ray():
    angles = AngleSet((0.0,))
    s = np.zeros((1, 8))
    s[0, 3] = 1.0
    img = backproject(s, angles, 8)
    expected = np.zeros((8, 8))
    expected[:, 3] = 1.0
    np.testing.assert_allclose(img, expected, atol=1e-12)


def test_backproject_zero():
    assert np.all(backproject(np.zeros((4, 16)), sparse_view_angles(4), 16) == 0)


def test_fbp_reconstructs_smooth_phantom():
    x = _blob(64, 6.0)
    angles = sparse_view_angles(180)
    rec = fbp(radon(x, angles), angles, 64)
    assert np.linalg.norm(rec - x) <= 0.05 * np.linalg.norm(x)


def test_fbp_linear_and_zero():
    rng = make_rng(9)
    angles = sparse_view_angles(20)
    s1 = rng.standard_normal((20, 24))
    s2 = rng.standard_normal((20, 24))
    np.testing.assert_allclose(
        fbp(s1 + s2, angles, 24), fbp(s1, angles, 24) + fbp(s2, angles, 24), atol=1e-10
    )
    assert np.all(fbp(np.zeros((20, 24)), angles, 24) == 0)


def test_fbp_needs_two_angles():
    with pytest.raises(DegenerateInputError, match="at least two"):
        fbp(np.zeros((1, 8)), AngleSet((0.0,)), 8)


class TestMeasurementOperators(unittest.TestCase):
    """MeasurementOp implementations."""

    def test_mri_operator(self):
        op = MriOperator(mask_lowpass(8, 8, 2))
        self.assertEqual(op.modality, Modality.MRI)
        self.assertEqual(op.image_shape, (8, 8))
        self.assertEqual(op.label, "LP2")
        self.assertEqual(op.norm_squared(), 1.0)
        x = make_rng(10).standard_normal((8, 8))
        np.testing.assert_allclose(op.residual(x, op.forward(x)), 0.0)

    def test_zero_filled_full_mask_recovers_image(self):
        op = MriOperator(full_mask(8, 8))
        x = make_rng(11).standard_normal((8, 8))
        np.testing.assert_allclose(op.zero_filled(op.forward(x)), x, atol=1e-12)

    def test_ct_operator(self):
        op = CtOperator(sparse_view_angles(10), 16)
        self.assertEqual(op.modality, Modality.CT)
        self.assertEqual(op.sinogram_shape, (10, 16))
        self.assertEqual(op.label, "SV10")
        x = make_rng(12).standard_normal((16, 16))
        self.assertEqual(op.forward(x).shape, (10, 16))
        self.assertEqual(op.dc_adjoint(op.forward(x)).shape, (16, 16))
        with self.assertRaises(DimensionError):
            op.forward(np.zeros((8, 8)))

    def test_ct_norm_bounds_rayleigh_quotient(self):
        op = CtOperator(sparse_view_angles(12), 16)
        bound = op.norm_squared()
        rng = make_rng(13)
        for _ in range(5):
            x = rng.standard_normal((16, 16))
            ratio = np.linalg.norm(op.forward(x)) ** 2 / np.linalg.norm(x) ** 2
            self.assertLessEqual(ratio, bound * 1.01)

    def test_angle_file_roundtrip(self):
        angles = sparse_view_angles(7)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "views.txt"
            save_angles(path, angles)
            self.assertEqual(load_angles(path).angles, angles.angles)
            path.write_text("0.0\nabc\n", encoding="utf-8")
            with self.assertRaises(FormatError):
                load_angles(path)
