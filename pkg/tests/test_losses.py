import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from edgedepth.errors import ConfigError, DomainError, EmptyMaskError
from edgedepth.gradcheck import grad_check
from edgedepth.losses import METRIC_COLUMNS, DepthPair, LossConfig, MetricsReport, compute_metrics, silog_loss
from edgedepth.tensor import Tensor

positive = hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0.05, 50))


def test_default_lambda():
    assert LossConfig().lam == 0.85
    with pytest.raises(ConfigError):
        LossConfig(lam=1.5)


def test_identity_is_exactly_zero():
    gt = np.random.default_rng(0).uniform(0.5, 10, size=(8, 8))
    assert silog_loss(gt.copy(), gt).item() == 0.0


def test_half_prediction_closed_form():
    gt = np.random.default_rng(1).uniform(0.5, 10, size=(8, 8))
    assert abs(silog_loss(gt / 2, gt, lam=0.85).item() - math.log(2) * math.sqrt(0.15)) < 1e-9
    assert abs(silog_loss(gt / 2, gt, lam=1.0).item()) < 1e-9
    assert abs(silog_loss(gt / 2, gt, lam=LossConfig(0.85)).item() - 0.26845) < 1e-5


def test_mask_restricts_sum_and_gradient():
    gt = np.array([[1.0, 2.0], [3.0, 4.0]])
    pred = Tensor([[1.0, 9.0], [1.5, 4.0]], requires_grad=True)
    mask = np.array([[True, False], [True, True]])
    loss = silog_loss(pred, gt, mask, lam=0.0)
    g = np.log([1.0, 2.0, 1.0])
    assert loss.item() == pytest.approx(math.sqrt(np.mean(g**2)), abs=1e-14)
    loss.backward()
    assert pred.grad[0, 1] == 0.0 and pred.grad[1, 0] != 0.0


def test_loss_errors():
    with pytest.raises(EmptyMaskError):
        silog_loss(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(DomainError):
        silog_loss(np.array([1.0, 0.0]), np.ones(2))
    with pytest.raises(DomainError):
        silog_loss(np.ones(2), np.array([1.0, -1.0]))
    # unmasked nonpositive values are fine
    assert silog_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([True, False])).item() == 0.0


@given(positive, st.floats(0.01, 100))
def test_joint_scaling_invariance(gt, s):
    pred = np.random.default_rng(gt.size).uniform(0.1, 10, size=gt.shape)
    a = silog_loss(pred, gt).item()
    b = silog_loss(pred * s, gt * s).item()
    assert abs(a - b) < 1e-12 + 1e-12 * a


@given(positive, st.floats(0.01, 100))
def test_lambda_one_scale_invariance(gt, s):
    pred = np.random.default_rng(gt.size + 1).uniform(0.1, 10, size=gt.shape)
    assert abs(silog_loss(pred * s, gt, lam=1.0).item() - silog_loss(pred, gt, lam=1.0).item()) < 1e-9


def test_lambda_one_pure_scaling_20_factors():
    rng = np.random.default_rng(2)
    gt = rng.uniform(0.5, 10, size=(6, 7))
    for s in rng.uniform(0.01, 100, size=20):
        assert abs(silog_loss(s * gt, gt, lam=1.0).item()) < 1e-9


def test_silog_gradient_tight_tolerance():
    # error relative to the largest gradient component: near-zero components
    # make a per-coordinate ratio meaningless at this tolerance
    rng = np.random.default_rng(3)
    for _ in range(10):
        gt = rng.uniform(0.5, 10, size=(5, 6))
        mask = rng.random((5, 6)) > 0.3
        p0 = rng.uniform(0.5, 10, size=(5, 6))
        pred = Tensor(p0, requires_grad=True)
        silog_loss(pred, gt, mask).backward()
        num = np.zeros_like(p0)
        for i in np.ndindex(p0.shape):
            step = np.zeros_like(p0)
            step[i] = 1e-5
            num[i] = (silog_loss(p0 + step, gt, mask).item() - silog_loss(p0 - step, gt, mask).item()) / 2e-5
        assert np.max(np.abs(pred.grad - num)) / np.max(np.abs(num)) < 1e-6
        assert np.all(pred.grad[~mask] == 0)


def test_metrics_identity():
    gt = np.random.default_rng(4).uniform(0.5, 10, size=(8, 8))
    r = compute_metrics(DepthPair(gt.copy(), gt))
    assert (r.delta1, r.delta2, r.delta3) == (1.0, 1.0, 1.0)
    assert r.rmse == r.rmse_log == r.absrel == r.sqrel == r.log10 == 0.0


def test_metrics_golden_vector():
    r = compute_metrics(DepthPair(np.array([2.0, 2, 4, 8]), np.array([1.0, 2, 4, 8])))
    for name, value in dict(delta1=0.75, delta2=0.75, delta3=0.75, rmse=0.5, absrel=0.25, sqrel=0.25).items():
        assert abs(getattr(r, name) - value) < 1e-12, name
    assert abs(r.rmse_log - math.log10(2) / 2) < 1e-12
    assert abs(r.log10 - math.log10(2) / 4) < 1e-12


def test_metrics_uniform_overestimate():
    gt = np.random.default_rng(5).uniform(0.5, 10, size=(8, 8))
    r = compute_metrics(DepthPair(gt * 1.2, gt))
    assert r.delta1 == 1.0
    assert abs(r.absrel - 0.2) < 1e-12


def test_cap_masks_gt_and_clamps_pred():
    gt = np.array([10.0, 40.0, 60.0])
    pred = np.array([100.0, 40.0, 1.0])
    r = compute_metrics(DepthPair(pred, gt, cap=(0.0, 50.0)))
    # gt 60 dropped; pred 100 clamped to 50
    assert r.rmse == pytest.approx(math.sqrt((40.0**2) / 2), abs=1e-12)
    with pytest.raises(EmptyMaskError):
        compute_metrics(DepthPair(pred, gt * 100, cap=(0.0, 50.0)))


def test_zero_lower_cap_still_clamps_positive():
    r = compute_metrics(DepthPair(np.array([0.0, 1.0]), np.array([1.0, 1.0]), cap=(0.0, 10.0)))
    assert np.isfinite(r.rmse_log)


@given(positive)
def test_delta_monotone_and_permutation_invariant(gt):
    rng = np.random.default_rng(gt.size)
    pred = gt * rng.uniform(0.3, 3, size=gt.shape)
    r = compute_metrics(DepthPair(pred, gt))
    assert r.delta1 <= r.delta2 <= r.delta3
    perm = rng.permutation(gt.size)
    r2 = compute_metrics(DepthPair(pred.reshape(-1)[perm], gt.reshape(-1)[perm]))
    for k in METRIC_COLUMNS:
        assert getattr(r, k) == pytest.approx(getattr(r2, k), rel=1e-12, abs=1e-15)


def test_report_serialisation_roundtrip():
    r = compute_metrics(DepthPair(np.array([2.0, 2, 4, 8]), np.array([1.0, 2, 4, 8])))
    assert MetricsReport.csv_header() == "delta1,delta2,delta3,absrel,sqrel,rmse,rmse_log,log10"
    assert MetricsReport.from_csv_row(r.to_csv_row()) == r
    assert MetricsReport.from_kv(r.to_kv()) == r
    assert r.to_kv().split()[0].startswith("delta1=")
    assert "\n" not in r.to_kv()
    m = MetricsReport.mean([r, r])
    assert m == r
