# dataset.py

"""
CSV ingestion, sliding window pairs and chronological train/val/test splits.
"""

import csv
import logging
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import torch

from .config import DatasetSpec
from .errors import DatasetError, ParseError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class WindowPairs:
    history: torch.Tensor  # [N, L_h, C]
    future: torch.Tensor  # [N, L_f, C]
    starts: Optional[torch.Tensor] = None  # [N] series index of each history start

    def __len__(self) -> int:
        return self.history.shape[0]

    def subset(self, idx: torch.Tensor) -> "WindowPairs":
        starts = self.starts[idx] if self.starts is not None else None
        return WindowPairs(self.history[idx], self.future[idx], starts)


@dataclass
class DomainWindows:
    domain_id: str
    steps_per_day: int
    train: WindowPairs
    val: WindowPairs
    test: WindowPairs

    @property
    def channels(self) -> int:
        return self.train.history.shape[-1]

    def split(self, name: str) -> WindowPairs:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)


def _is_timestamp(cell: str) -> bool:
    cell = cell.strip()
    if not cell or cell.lstrip("+-").replace(".", "", 1).isdigit():
        return False
    try:
        datetime.fromisoformat(cell.replace("Z", "+00:00"))
    except ValueError:
        return False
    return True


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(source: Union[DatasetSpec, str, Path]) -> torch.Tensor:
    """
    Read a rectangular numeric CSV into a float64 tensor [T, C].

    A header row (any non-numeric, non-timestamp cell in the first row) is
    skipped, and a leading ISO-8601 timestamp column is dropped.
    """
    path = Path(source.path if isinstance(source, DatasetSpec) else source)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")

    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i, row) for i, row in enumerate(csv.reader(fh), start=1) if any(c.strip() for c in row)]
    if not rows:
        raise DatasetError(f"{path} is empty")

    first_line, first = rows[0]
    if not all(_is_number(c) or _is_timestamp(c) for c in first):
        logger.debug("Treating line %d of %s as a header: %s", first_line, path, first)
        rows = rows[1:]
        if not rows:
            raise DatasetError(f"{path} has a header but no data rows")

    width = len(rows[0][1])
    for line, row in rows:
        if len(row) != width:
            raise ParseError(f"{path}:{line}: expected {width} columns, found {len(row)}")

    drop_timestamp = _is_timestamp(rows[0][1][0])
    lines = [line for line, _ in rows]
    frame = pd.DataFrame([row[1:] if drop_timestamp else row for _, row in rows])
    if frame.shape[1] == 0:
        raise DatasetError(f"{path} has no value columns")
    numeric = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = numeric.isna()
    if bad.to_numpy().any():
        r, c = next(zip(*bad.to_numpy().nonzero()))
        col = int(c) + (2 if drop_timestamp else 1)
        raise ParseError(f"{path}:{lines[r]}: non-numeric cell {frame.iat[r, c]!r} in column {col}")

    # float() on the raw text keeps every digit; to_numeric only locates bad cells
    values = torch.from_numpy(frame.apply(lambda col: col.str.strip()).to_numpy().astype("float64"))
    logger.info("Loaded %s: %d rows x %d channels%s", path, values.shape[0], values.shape[1],
                " (timestamp column dropped)" if drop_timestamp else "")
    return values


def write_csv(values: torch.Tensor, path: Union[str, Path], columns: Optional[Sequence[str]] = None) -> Path:
    """Write a [T, C] tensor with full float64 precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = values.detach().reshape(values.shape[0], -1).numpy()
    header = list(columns) if columns is not None else [f"ch{i}" for i in range(array.shape[1])]
    pd.DataFrame(array, columns=header).to_csv(path, index=False, float_format="%.17g")
    return path


def sliding_pairs(series: torch.Tensor, history_length: int, horizon: int, stride: int = 1, offset: int = 0) -> WindowPairs:
    """All (X_h, X_f) pairs of a [T, C] series at the given stride."""
    total = history_length + horizon
    channels = series.shape[-1]
    if series.shape[0] < total:
        return WindowPairs(
            torch.empty(0, history_length, channels, dtype=series.dtype),
            torch.empty(0, horizon, channels, dtype=series.dtype),
            torch.empty(0, dtype=torch.long),
        )
    # unfold -> [N, C, total] -> [N, total, C]
    windows = series.unfold(0, total, stride).transpose(1, 2).contiguous()
    starts = torch.arange(windows.shape[0], dtype=torch.long) * stride + offset
    return WindowPairs(windows[:, :history_length], windows[:, history_length:], starts)


def split_bounds(length: int, fractions: Tuple[float, float, float]) -> List[Tuple[int, int]]:
    train_end = int(length * fractions[0])
    val_end = train_end + int(length * fractions[1])
    test_end = min(length, val_end + int(round(length * fractions[2])))
    return [(0, train_end), (train_end, val_end), (val_end, test_end)]


def make_windows(
    series: torch.Tensor,
    history_length: int,
    horizon: int,
    stride: int = 1,
    fractions: Optional[Tuple[float, float, float]] = None,
) -> Dict[str, WindowPairs]:
    """
    Chronological split of a [T, C] series into window pairs.

    Each split owns a contiguous segment and every pair lies inside its
    segment, so no pair crosses a split boundary. With fractions=None all
    pairs go to train.
    """
    if series.dim() != 2:
        raise DatasetError(f"series must be [T, C], got {tuple(series.shape)}")
    if series.shape[0] < history_length + horizon:
        raise DatasetError(
            f"series of {series.shape[0]} steps is shorter than one window pair ({history_length} + {horizon})"
        )
    if fractions is None:
        bounds = [(0, series.shape[0]), (0, 0), (0, 0)]
    else:
        bounds = split_bounds(series.shape[0], fractions)
    out = {
        name: sliding_pairs(series[start:end], history_length, horizon, stride, offset=start)
        for name, (start, end) in zip(SPLITS, bounds)
    }
    logger.debug("Window pairs per split: %s", {k: len(v) for k, v in out.items()})
    return out


def domain_windows(
    spec: DatasetSpec, history_length: int, horizon: int, stride: int = 1, series: Optional[torch.Tensor] = None
) -> DomainWindows:
    series = load_csv(spec) if series is None else series
    splits = make_windows(
        series, history_length, horizon, stride, (spec.train_fraction, spec.val_fraction, spec.test_fraction)
    )
    if len(splits["train"]) == 0:
        raise DatasetError(f"domain {spec.domain_id!r} has no training window pairs")
    return DomainWindows(domain_id=spec.domain_id, steps_per_day=spec.steps_per_day, **splits)
