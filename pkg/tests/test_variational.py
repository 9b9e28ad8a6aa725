"""Tests for the Charbonnier-TV baseline."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from score_recon.analysis import psnr
from score_recon.errors import DimensionError, ParameterError
from score_recon.imgcore import make_rng
from score_recon.masks import full_mask, mask_gaussian2d
from score_recon.operators import MriOperator
from score_recon.phantoms import piecewise_blobs
from score_recon.variational import (
    TvParams,
    TvResult,
    reconstruct_tv,
    tv_gradient,
    tv_value,
    write_objective_trace,
)


def test_tv_of_constant_image():
    assert tv_value(np.full((4, 5), 3.0), 1e-3) == pytest.approx(20e-3)


def test_tv_of_single_step():
    assert tv_value(np.array([[0.0, 1.0]]), 1e-3) == pytest.approx(np.sqrt(1 + 1e-6) + 1e-3)


@pytest.mark.parametrize("eps", [0.1, 1e-3])
@pytest.mark.parametrize("seed", range(20))
def test_tv_gradient_matches_finite_differences(seed, eps):
    x = make_rng(seed).standard_normal((16, 16))
    h = 1e-6
    numeric = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        numeric[idx] = (tv_value(x + e, eps) - tv_value(x - e, eps)) / (2 * h)
    analytic = tv_gradient(x, eps)
    assert np.linalg.norm(numeric - analytic) <= 1e-5 * np.linalg.norm(analytic)


def test_tv_params_validation():
    with pytest.raises(ParameterError, match="TvParams validation failed"):
        TvParams(epsilon=0.0, max_iters=0)
    with pytest.raises(ParameterError, match="grad_tol must be >= 0"):
        TvParams(grad_tol=-1.0)


def test_tv_without_data_term_flattens():
    op = MriOperator(full_mask(16, 16))
    x0 = make_rng(1).standard_normal((16, 16))
    p = TvParams(epsilon=0.1, lam=0.0, max_iters=300, tol=0.0)
    result = reconstruct_tv(np.zeros((16, 16)), op, p, x0=x0)
    assert result.tv_trace[-1] < 0.2 * tv_value(x0, 0.1)
    assert result.image.mean() == pytest.approx(x0.mean(), abs=1e-10)
    assert all(d == 0.0 for d in result.data_trace)


def test_tv_converges_only_at_a_stationary_point():
    op = MriOperator(full_mask(8, 8))
    x0 = 0.1 * make_rng(6).standard_normal((8, 8))
    p = TvParams(lam=0.0, max_iters=20000)
    result = reconstruct_tv(np.zeros((8, 8)), op, p, x0=x0)
    assert result.converged
    assert np.linalg.norm(tv_gradient(result.image, p.epsilon)) < 1e-3
    assert np.ptp(result.image) < 1e-2


def test_small_objective_change_alone_is_not_convergence():
    op = MriOperator(full_mask(8, 8))
    x0 = make_rng(7).standard_normal((8, 8))
    p = TvParams(lam=0.0, max_iters=5, tol=1.0, grad_tol=0.0)
    result = reconstruct_tv(np.zeros((8, 8)), op, p, x0=x0)
    assert not result.converged
    assert result.iterations == 5


def test_objective_trace_is_nonincreasing():
    op = MriOperator(mask_gaussian2d(32, 32, 3, make_rng(2)))
    truth = piecewise_blobs(32, make_rng(3))
    result = reconstruct_tv(op.forward(truth), op, TvParams(lam=100.0, max_iters=100, tol=0.0))
    trace = result.objective_trace
    assert len(trace) == result.iterations == 100
    assert all(b <= a for a, b in zip(trace, trace[1:], strict=False))
    assert not result.converged


def test_tv_rejects_bad_start():
    op = MriOperator(full_mask(8, 8))
    with pytest.raises(DimensionError):
        reconstruct_tv(np.zeros((8, 8)), op, TvParams(), x0=np.zeros((4, 4)))


@pytest.mark.slow
def test_tv_recovers_piecewise_constant_phantom():
    truth = piecewise_blobs(64, make_rng(4))
    op = MriOperator(mask_gaussian2d(64, 64, 2, make_rng(5)))
    result = reconstruct_tv(op.forward(truth), op, TvParams(lam=1e3, max_iters=3000, tol=0.0))
    assert psnr(result.image, truth) >= 35


def test_write_objective_trace():
    result = TvResult(
        image=np.zeros((2, 2)),
        objective_trace=[3.0, 2.0],
        data_trace=[1.0, 0.5],
        tv_trace=[2.0, 1.5],
    )
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "objective.csv"
        write_objective_trace(path, result)
        assert path.read_text(encoding="utf-8") == (
            "iter,objective,data_fidelity,tv\n1,3.0,1.0,2.0\n2,2.0,0.5,1.5\n"
        )
