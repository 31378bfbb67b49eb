"""Multichannel time-series container and CSV ingestion.

Monitoring data flows between skill nodes as a TimeSeriesBlock: a
channels x samples matrix with a sampling rate and channel names. CSV
ingestion accepts a first column holding either an ISO-8601 timestamp or a
plain sample index, followed by one column per channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional

import numpy as np

from .errors import FatalError


class CsvFormatError(FatalError):
    """Malformed monitoring CSV; carries a row/column diagnostic."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass
class TimeSeriesBlock:
    data: np.ndarray            # channels x samples
    fs: float                   # Hz
    start_time: float = 0.0     # epoch seconds
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.data.shape[1] < 1:
            raise ValueError("block needs at least one sample")
        if not self.channel_names:
            self.channel_names = [f"ch{i}" for i in range(self.data.shape[0])]
        if len(self.channel_names) != self.data.shape[0]:
            raise ValueError("channel_names length must match channel count")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def channel(self, index: int) -> np.ndarray:
        return self.data[index]

    def copy(self) -> "TimeSeriesBlock":
        return TimeSeriesBlock(
            data=self.data.copy(),
            fs=self.fs,
            start_time=self.start_time,
            channel_names=list(self.channel_names),
        )


def _parse_time_cell(cell: str, row: int) -> Optional[float]:
    """First-column cell: ISO-8601 timestamp -> epoch seconds, index -> None."""
    cell = cell.strip()
    try:
        float(cell)
        return None
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(cell).timestamp()
    except ValueError:
        raise CsvFormatError(
            f"row {row}: first column is neither a sample index nor an ISO-8601 timestamp: {cell!r}",
            row=row, column=0,
        )


def load_monitoring_csv(text: str, fs: Optional[float] = None) -> TimeSeriesBlock:
    """Parse a monitoring CSV into a TimeSeriesBlock.

    When the first column is a timestamp, fs is inferred from the first two
    rows unless given. When it is an index column, fs defaults to 50 Hz.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise CsvFormatError("need a header row and at least one data row", row=0)
    header = [h.strip() for h in lines[0].split(",")]
    if len(header) < 2:
        raise CsvFormatError("need a time/index column plus at least one channel", row=0)
    channel_names = header[1:]

    n_cols = len(header)
    times: list[Optional[float]] = []
    rows: list[list[float]] = []
    for r, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        if len(cells) != n_cols:
            raise CsvFormatError(
                f"row {r}: expected {n_cols} columns, got {len(cells)}", row=r, column=len(cells),
            )
        times.append(_parse_time_cell(cells[0], r))
        try:
            rows.append([float(c) if c.strip().lower() not in ("", "nan") else float("nan")
                         for c in cells[1:]])
        except ValueError as exc:
            bad = next(i for i, c in enumerate(cells[1:], start=1)
                       if not _is_floatish(c))
            raise CsvFormatError(f"row {r}, column {bad}: not numeric: {exc}", row=r, column=bad)

    data = np.array(rows, dtype=float).T
    start_time = 0.0
    if times[0] is not None:
        start_time = times[0]
        if fs is None:
            if len(times) < 2 or times[1] is None or times[1] == times[0]:
                raise CsvFormatError("cannot infer sampling rate from timestamps", row=1, column=0)
            fs = 1.0 / (times[1] - times[0])
    if fs is None:
        fs = 50.0
    return TimeSeriesBlock(data=data, fs=float(fs), start_time=start_time, channel_names=channel_names)


def _is_floatish(cell: str) -> bool:
    cell = cell.strip().lower()
    if cell in ("", "nan"):
        return True
    try:
        float(cell)
        return True
    except ValueError:
        return False


def dump_monitoring_csv(block: TimeSeriesBlock) -> str:
    header = "index," + ",".join(block.channel_names)
    out = [header]
    for i in range(block.n_samples):
        out.append(str(i) + "," + ",".join(repr(v) for v in block.data[:, i]))
    return "\n".join(out) + "\n"
