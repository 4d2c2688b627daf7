"""Point-forecast error metrics.

Inputs are arrays whose last axis indexes features (1-d arrays are a single
series).  Each metric is computed per feature and then averaged.  For MASE
the time axis is the second to last, and every other index names one
series.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class MetricError(ValueError):
    pass


def _pair(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise MetricError(f"shape mismatch: y {y.shape} vs y_hat {y_hat.shape}")
    if y.size == 0:
        raise MetricError("empty input")
    return y, y_hat


def _columns(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, 1) if a.ndim == 1 else a.reshape(-1, a.shape[-1])


def _feature_mean(values: np.ndarray) -> float:
    return float(np.mean(np.mean(_columns(values), axis=0)))


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return _feature_mean((y - y_hat) ** 2)


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return _feature_mean(np.abs(y - y_hat))


def _first_zero(y: np.ndarray) -> tuple:
    return tuple(int(i) for i in np.argwhere(y == 0)[0])


def rmsp(y, y_hat) -> float:
    """Square root of the median squared relative error."""
    y, y_hat = _pair(y, y_hat)
    if np.any(y == 0):
        raise MetricError(f"RMSP undefined: y is zero at index {_first_zero(y)}")
    rel = _columns(((y - y_hat) / y) ** 2)
    return float(np.mean(np.sqrt(np.median(rel, axis=0))))


def mape(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    if np.any(y == 0):
        raise MetricError(f"MAPE undefined: y is zero at index {_first_zero(y)}")
    return _feature_mean(np.abs(y - y_hat) / np.abs(y))


def smape(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    denom = np.abs(y) + np.abs(y_hat)
    if np.any(denom == 0):
        raise MetricError(f"sMAPE undefined: |y| + |y_hat| is zero at index {_first_zero(denom)}")
    return 2.0 * _feature_mean(np.abs(y - y_hat) / denom)


def mase(y, y_hat, m: int = 1) -> float:
    y, y_hat = _pair(y, y_hat)
    if y.ndim == 1:
        y, y_hat = y[:, None], y_hat[:, None]
    n = y.shape[-2]
    if not 1 <= m < n:
        raise MetricError(f"MASE needs 1 <= m < N, got m={m}, N={n}")
    # series x time
    ys = np.moveaxis(y, -2, -1).reshape(-1, n)
    hs = np.moveaxis(y_hat, -2, -1).reshape(-1, n)
    scale = np.abs(ys[:, m:] - ys[:, :-m]).mean(axis=1)
    if np.any(scale == 0):
        raise MetricError("MASE undefined: a series is constant at seasonality m (zero naive error)")
    per_series = np.abs(ys - hs).mean(axis=1) / scale
    # series are (instance..., feature) with feature fastest; average per feature first
    d = y.shape[-1]
    return float(np.mean(per_series.reshape(-1, d).mean(axis=0)))


def quantile_loss(y, y_hat, q: float) -> float:
    if not 0.0 < q < 1.0:
        raise MetricError(f"quantile q must be in (0, 1), got {q}")
    y, y_hat = _pair(y, y_hat)
    err = np.abs(y - y_hat)
    return _feature_mean(np.where(y_hat >= y, (1.0 - q) * err, q * err))


@dataclass
class MetricReport:
    values: dict[str, float] = field(default_factory=dict)
    n: int = 0

    def to_dict(self) -> dict:
        return {"metrics": dict(sorted(self.values.items())), "n": self.n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def __getitem__(self, key: str) -> float:
        return self.values[key]


_SIMPLE: dict[str, Callable] = {"mse": mse, "mae": mae, "rmsp": rmsp, "mape": mape, "smape": smape}
_SPEC = re.compile(r"^(mse|mae|rmsp|mape|smape|mase|quantile)(?::(.+))?$")


def parse_metric(spec: str) -> tuple[str, Callable[[np.ndarray, np.ndarray], float]]:
    """``'mase:24'`` -> ('mase_24', fn).  Unknown names raise MetricError."""
    m = _SPEC.match(spec.strip().lower())
    if not m:
        raise MetricError(f"unknown metric {spec!r}")
    name, arg = m.groups()
    if name in _SIMPLE:
        if arg is not None:
            raise MetricError(f"metric {name} takes no parameter")
        return name, _SIMPLE[name]
    if name == "mase":
        try:
            period = 1 if arg is None else int(arg)
        except ValueError:
            raise MetricError(f"bad MASE seasonality {arg!r}") from None
        return f"mase_{period}", lambda y, yh: mase(y, yh, period)
    if arg is None:
        raise MetricError("quantile needs a level, e.g. quantile:0.75")
    try:
        q = float(arg)
    except ValueError:
        raise MetricError(f"bad quantile level {arg!r}") from None
    if not 0.0 < q < 1.0:
        raise MetricError(f"quantile level must be in (0, 1), got {q}")
    return f"quantile_{q:g}", lambda y, yh: quantile_loss(y, yh, q)


def compute_metrics(y, y_hat, specs=("mse", "mae")) -> MetricReport:
    parsed = [parse_metric(s) for s in specs]
    y, y_hat = _pair(y, y_hat)
    return MetricReport({name: fn(y, y_hat) for name, fn in parsed}, int(y.size))
