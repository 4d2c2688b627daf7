"""CSV ingestion, chronological splits, sliding windows and instance normalization."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

NORM_EPS = 1e-5
DEFAULT_SPLIT = (0.6, 0.2, 0.2)
_MISSING = {"", "nan", "NaN", "NAN", "na", "NA", "null", "None"}


class DataError(ValueError):
    """Raised for malformed input files or impossible window requests."""


@dataclass(frozen=True)
class SeriesDataset:
    values: np.ndarray  # T x D
    feature_names: tuple[str, ...]
    frequency: str = ""
    dropped_rows: int = 0

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.feature_names).encode())
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class WindowBatch:
    inputs: np.ndarray  # B x I x D
    targets: np.ndarray  # B x O x D
    start: np.ndarray | None = None  # window start offsets; defaults to 0..B-1

    def __post_init__(self):
        if self.start is None:
            self.start = np.arange(self.inputs.shape[0])

    @property
    def input_len(self) -> int:
        return self.inputs.shape[1]

    @property
    def pred_len(self) -> int:
        return self.targets.shape[1]

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # B x D
    std: np.ndarray  # B x D, already epsilon-guarded


def load_csv(path: str | Path, date_column: str | None = "date", frequency: str = "") -> SeriesDataset:
    """Read a header-first CSV of numeric columns.

    A leading column named ``date_column`` is dropped.  Rows holding any
    missing value are skipped and counted; any other unparseable cell is an
    error naming its row and column.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        skip = 1 if date_column is not None and header and header[0] == date_column else 0
        names = tuple(header[skip:])
        if not names:
            raise DataError(f"{path}: no value columns")
        rows: list[list[float]] = []
        dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            cells = row[skip:]
            if len(cells) != len(names):
                raise DataError(f"{path}: row {lineno} has {len(cells)} values, expected {len(names)}")
            parsed = []
            missing = False
            for col, cell in zip(names, cells):
                cell = cell.strip()
                if cell in _MISSING:
                    missing = True
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {col!r}: cannot parse {cell!r}") from None
                if math.isnan(v):
                    missing = True
                parsed.append(v)
            if missing:
                dropped += 1
                continue
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if dropped:
        log.warning("%s: dropped %d row(s) with missing values", path, dropped)
    values = np.asarray(rows, dtype=np.float64)
    log.info("%s: loaded %d rows x %d features", path, *values.shape)
    return SeriesDataset(values, names, frequency, dropped)


def chronological_split(
    ds: SeriesDataset,
    ratios: tuple[float, float, float] = DEFAULT_SPLIT,
    min_length: int = 1,
) -> tuple[SeriesDataset, SeriesDataset, SeriesDataset]:
    """Contiguous train/val/test segments; floors for train and val, remainder to test."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"split ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {sum(ratios)}")
    T = ds.length
    n_train = int(math.floor(T * ratios[0]))
    n_val = int(math.floor(T * ratios[1]))
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, T)]
    parts = []
    for name, (a, b) in zip(("train", "val", "test"), bounds):
        if b - a < min_length:
            raise DataError(f"{name} segment has {b - a} rows, needs at least {min_length}")
        parts.append(SeriesDataset(ds.values[a:b], ds.feature_names, ds.frequency))
    return parts[0], parts[1], parts[2]


def standardize_splits(
    train: SeriesDataset, *others: SeriesDataset
) -> tuple[tuple[SeriesDataset, ...], np.ndarray, np.ndarray]:
    """Scale every segment by the train segment's per-feature mean and std.

    This is the dataset-level scaling under which long-horizon benchmark
    errors are usually quoted.  Returns (scaled segments, mean, std).
    """
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    scaled = tuple(
        SeriesDataset((d.values - mean) / std, d.feature_names, d.frequency, d.dropped_rows)
        for d in (train, *others)
    )
    return scaled, mean, std


def window_count(length: int, input_len: int, pred_len: int, stride: int = 1) -> int:
    if min(input_len, pred_len, stride) < 1:
        raise DataError("input_len, pred_len and stride must be >= 1")
    if length < input_len + pred_len:
        raise DataError(f"series of length {length} is shorter than input_len + pred_len = {input_len + pred_len}")
    return (length - input_len - pred_len) // stride + 1


def all_windows(ds: SeriesDataset, input_len: int, pred_len: int, stride: int = 1) -> WindowBatch:
    """Every window as one batch (views copied into contiguous arrays)."""
    n = window_count(ds.length, input_len, pred_len, stride)
    span = input_len + pred_len
    # (T - span + 1) x D x span
    view = sliding_window_view(ds.values, span, axis=0)[::stride][:n]
    view = np.swapaxes(view, 1, 2)
    return WindowBatch(
        np.ascontiguousarray(view[:, :input_len]),
        np.ascontiguousarray(view[:, input_len:]),
        np.arange(n) * stride,
    )


def make_windows(
    ds: SeriesDataset,
    input_len: int,
    pred_len: int,
    stride: int = 1,
    batch_size: int | None = None,
    shuffle: bool = False,
    seed: int | None = None,
) -> Iterator[WindowBatch]:
    full = all_windows(ds, input_len, pred_len, stride)
    yield from iter_batches(full, batch_size, shuffle, seed)


def iter_batches(
    full: WindowBatch, batch_size: int | None = None, shuffle: bool = False, seed: int | None = None
) -> Iterator[WindowBatch]:
    n = len(full)
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    size = n if batch_size is None else batch_size
    for i in range(0, n, size):
        idx = order[i : i + size]
        yield WindowBatch(full.inputs[idx], full.targets[idx], full.start[idx])


def instance_normalize(x: np.ndarray, eps: float = NORM_EPS) -> tuple[np.ndarray, NormStats]:
    """Standardize each (instance, feature) over the time axis of the input window."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=1)
    std = np.maximum(x.std(axis=1), eps)
    return (x - mean[:, None, :]) / std[:, None, :], NormStats(mean, std)


def instance_denormalize(o: np.ndarray, stats: NormStats) -> np.ndarray:
    o = np.asarray(o, dtype=np.float64)
    if o.ndim != 3 or o.shape[0] != stats.mean.shape[0] or o.shape[2] != stats.mean.shape[1]:
        raise DataError(f"cannot denormalize shape {o.shape} with stats of shape {stats.mean.shape}")
    return o * stats.std[:, None, :] + stats.mean[:, None, :]
