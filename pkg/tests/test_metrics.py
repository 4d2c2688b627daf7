"""Metrics against independently written loop implementations."""

import math

import numpy as np
import pytest

from deepboots.metrics import MetricError, compute_metrics, mae, mape, mase, mse, parse_metric, quantile_loss, rmsp, smape


# Brute-force oracles: plain Python loops over features and elements.
def _per_feature(y, yh):
    y = y.reshape(-1, y.shape[-1])
    yh = yh.reshape(-1, yh.shape[-1])
    return [([float(v) for v in y[:, d]], [float(v) for v in yh[:, d]]) for d in range(y.shape[1])]


def _avg(xs):
    return math.fsum(xs) / len(xs)


def bf_mse(y, yh):
    return _avg([_avg([(a - b) ** 2 for a, b in zip(ys, hs)]) for ys, hs in _per_feature(y, yh)])


def bf_mae(y, yh):
    return _avg([_avg([abs(a - b) for a, b in zip(ys, hs)]) for ys, hs in _per_feature(y, yh)])


def bf_mape(y, yh):
    return _avg([_avg([abs(a - b) / abs(a) for a, b in zip(ys, hs)]) for ys, hs in _per_feature(y, yh)])


def bf_smape(y, yh):
    return _avg([_avg([2 * abs(a - b) / (abs(a) + abs(b)) for a, b in zip(ys, hs)]) for ys, hs in _per_feature(y, yh)])


def bf_rmsp(y, yh):
    out = []
    for ys, hs in _per_feature(y, yh):
        rel = sorted(((a - b) / a) ** 2 for a, b in zip(ys, hs))
        n = len(rel)
        med = rel[n // 2] if n % 2 else 0.5 * (rel[n // 2 - 1] + rel[n // 2])
        out.append(math.sqrt(med))
    return _avg(out)


def bf_mase(y, yh, m):
    B, N, D = y.shape
    per_feature = []
    for d in range(D):
        scores = []
        for b in range(B):
            ys, hs = y[b, :, d], yh[b, :, d]
            scale = _avg([abs(ys[t] - ys[t - m]) for t in range(m, N)])
            scores.append(_avg([abs(ys[t] - hs[t]) for t in range(N)]) / scale)
        per_feature.append(_avg(scores))
    return _avg(per_feature)


def bf_quantile(y, yh, q):
    def loss(a, b):
        return (1 - q) * (b - a) if b >= a else q * (a - b)

    return _avg([_avg([loss(a, b) for a, b in zip(ys, hs)]) for ys, hs in _per_feature(y, yh)])


@pytest.mark.parametrize("seed", range(100))
def test_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(1, 4)), int(rng.integers(3, 9)), int(rng.integers(1, 4)))
    y = rng.normal(size=shape) + rng.choice([-3.0, 3.0])
    yh = y + rng.normal(size=shape)
    q = float(rng.uniform(0.05, 0.95))
    m = int(rng.integers(1, shape[1]))
    pairs = [
        (mse(y, yh), bf_mse(y, yh)),
        (mae(y, yh), bf_mae(y, yh)),
        (rmsp(y, yh), bf_rmsp(y, yh)),
        (mape(y, yh), bf_mape(y, yh)),
        (smape(y, yh), bf_smape(y, yh)),
        (mase(y, yh, m), bf_mase(y, yh, m)),
        (quantile_loss(y, yh, q), bf_quantile(y, yh, q)),
    ]
    for got, want in pairs:
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


@pytest.mark.parametrize("seed", range(20))
def test_median_quantile_is_half_mae(seed):
    rng = np.random.default_rng(seed)
    y, yh = rng.normal(size=(4, 6, 3)), rng.normal(size=(4, 6, 3))
    assert quantile_loss(y, yh, 0.5) == 0.5 * mae(y, yh)


def test_perfect_forecast():
    y = np.arange(1.0, 13.0).reshape(1, 6, 2)
    rep = compute_metrics(y, y, ["mse", "mae", "rmsp", "mape", "smape", "mase:1", "quantile:0.3"])
    assert all(v == 0.0 for v in rep.values.values())


def test_one_dimensional_series():
    y, yh = np.array([1.0, 2.0, 4.0]), np.array([1.0, 3.0, 2.0])
    assert mse(y, yh) == pytest.approx(5 / 3)
    assert mase(y, yh, 1) == pytest.approx(1.0 / 1.5)


def test_undefined_cases():
    with pytest.raises(MetricError, match="index"):
        mape(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(MetricError):
        rmsp(np.array([0.0]), np.array([1.0]))
    with pytest.raises(MetricError):
        smape(np.zeros(2), np.zeros(2))
    with pytest.raises(MetricError, match="constant"):
        mase(np.ones((1, 5, 1)), np.zeros((1, 5, 1)), 1)
    with pytest.raises(MetricError, match="m < N"):
        mase(np.ones((1, 5, 1)), np.zeros((1, 5, 1)), 5)
    with pytest.raises(MetricError, match="shape"):
        mse(np.ones(3), np.ones(4))


def test_metric_names():
    assert parse_metric("quantile:0.75")[0] == "quantile_0.75"
    assert parse_metric("mase:24")[0] == "mase_24"
    assert parse_metric("MSE")[0] == "mse"
    for bad in ("foo", "quantile", "quantile:1.5", "mse:2", "mase:x"):
        with pytest.raises(MetricError):
            parse_metric(bad)


def test_report_json_sorted():
    rep = compute_metrics(np.ones((2, 2)), np.zeros((2, 2)), ["mse", "mae"])
    assert list(rep.to_dict()["metrics"]) == ["mae", "mse"]
    assert rep.n == 4
