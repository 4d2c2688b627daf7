import csv

import numpy as np
import pytest

from deepboots.model import ModelConfig


def toy_config(**kw) -> ModelConfig:
    base = dict(input_len=8, pred_len=4, n_features=3, blocks=2, embed=8, heads=2, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def write_series(path, values, names=None, date=True):
    names = names or [f"f{i}" for i in range(values.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["date"] if date else []) + list(names))
        for i, row in enumerate(values):
            w.writerow(([f"2020-01-01 {i:05d}"] if date else []) + [repr(float(v)) for v in row])
    return path


def seasonal_series(T=300, D=3, period=12, noise=0.1, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    cols = [np.sin(2 * np.pi * (t + 3 * d) / period) * (1 + d) + d for d in range(D)]
    return np.stack(cols, axis=1) + noise * rng.normal(size=(T, D))


@pytest.fixture
def series_csv(tmp_path):
    return write_series(tmp_path / "series.csv", seasonal_series())


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
