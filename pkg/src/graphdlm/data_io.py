"""Speed time series ingestion and day/slot reshaping.

A speed CSV has a ``timestamp`` column followed by one column per sensor.
Empty cells and zeros are missing readings; internally they are stored as
NaN.  A :class:`DayTensor` holds the same data reshaped to
``(slots_per_day, n_sensors, n_days)`` so that ``values[t]`` is the slot
matrix whose columns are days.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ValidationError

logger = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440
_ONE_MINUTE = np.timedelta64(1, "m")


@dataclass(frozen=True)
class SpeedSeries:
    sensor_ids: tuple[str, ...]
    timestamps: np.ndarray  # datetime64[s], shape (n_times,)
    values: np.ndarray  # float, shape (n_times, N); NaN = missing
    interval_min: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape != (len(self.timestamps), len(self.sensor_ids)):
            raise DataError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.timestamps)} timestamps x {len(self.sensor_ids)} sensors"
            )

    @property
    def n(self) -> int:
        return len(self.sensor_ids)

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def slots_per_day(self) -> int:
        return MINUTES_PER_DAY // self.interval_min


@dataclass(frozen=True)
class DayTensor:
    """Day-indexed slot matrices; ``values[t][:, d]`` is slot ``t`` of day ``d``."""

    sensor_ids: tuple[str, ...]
    values: np.ndarray  # shape (T, N, m); NaN = missing
    day_labels: np.ndarray  # datetime64[D], shape (m,)
    interval_min: int

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def m(self) -> int:
        return self.values.shape[2]

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def slot_matrices(self) -> list[np.ndarray]:
        return [self.values[t] for t in range(self.T)]

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Values with missing entries replaced by ``fill``."""
        return np.where(self.mask, self.values, fill)

    def flatten(self) -> SpeedSeries:
        """Inverse of :func:`to_day_tensor`."""
        T = self.T
        stream = np.transpose(self.values, (2, 0, 1)).reshape(T * self.m, self.n)
        step = np.timedelta64(self.interval_min, "m")
        start = self.day_labels.astype("datetime64[s]")
        ts = (start[:, None] + step * np.arange(T)[None, :]).ravel()
        return SpeedSeries(self.sensor_ids, ts, stream.copy(), self.interval_min)

    def select_days(self, idx) -> DayTensor:
        idx = np.asarray(idx, dtype=int)
        return DayTensor(self.sensor_ids, self.values[:, :, idx].copy(), self.day_labels[idx].copy(), self.interval_min)

    def with_values(self, values: np.ndarray) -> DayTensor:
        return DayTensor(self.sensor_ids, values, self.day_labels, self.interval_min)


@dataclass(frozen=True)
class NormStats:
    mu: np.ndarray
    sd: np.ndarray

    def apply(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        """z-score ``x`` whose sensor dimension is ``axis``."""
        mu, sd = self._shaped(np.ndim(x), axis)
        return (np.asarray(x, dtype=float) - mu) / sd

    def invert(self, z: np.ndarray, axis: int = -1) -> np.ndarray:
        mu, sd = self._shaped(np.ndim(z), axis)
        return np.asarray(z, dtype=float) * sd + mu

    def _shaped(self, ndim: int, axis: int):
        shape = [1] * ndim
        shape[axis] = -1
        return self.mu.reshape(shape), self.sd.reshape(shape)


def _parse_timestamp(text: str) -> datetime:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    return datetime.fromisoformat(s)


def load_speeds(path: str | Path, format: str = "csv", sensor_ids: Sequence[str] | None = None) -> SpeedSeries:
    """Parse a speed CSV.

    Parameters
    ----------
    path : path to the CSV file.
    format : only ``"csv"`` is supported.
    sensor_ids : optional reference ordering (e.g. from the distance table).
        The CSV must carry exactly these sensors; columns are reordered to it.

    Raises
    ------
    DataError
        On malformed timestamps (all offending line numbers are listed), ragged
        rows, non-monotone or unevenly spaced timestamps, or sensor mismatches.
    """
    if format != "csv":
        raise ValidationError(f"unsupported speed format {format!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "timestamp":
            raise DataError(f"{path}: first column must be 'timestamp'")
        cols = tuple(h.strip() for h in header[1:])
        if len(set(cols)) != len(cols):
            raise DataError(f"{path}: duplicate sensor columns")
        width = len(header)
        stamps: list[datetime] = []
        rows: list[list[float]] = []
        bad_ts: list[int] = []
        offsets = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: ragged row with {len(row)} fields, expected {width}")
            try:
                ts = _parse_timestamp(row[0])
            except ValueError:
                bad_ts.append(lineno)
                continue
            offsets.add(ts.utcoffset())
            stamps.append(ts.replace(tzinfo=None))
            vals = []
            for cell in row[1:]:
                cell = cell.strip()
                if not cell:
                    vals.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad speed value {cell!r}") from None
                vals.append(math.nan if v == 0 else v)
            rows.append(vals)
    if bad_ts:
        shown = ", ".join(str(i) for i in bad_ts[:20])
        raise DataError(f"{path}: malformed timestamps on lines {shown}{' ...' if len(bad_ts) > 20 else ''}")
    if len(offsets) > 1:
        raise DataError(f"{path}: mixed UTC offsets {sorted(str(o) for o in offsets)}")
    if len(stamps) < 2:
        raise DataError(f"{path}: need at least 2 rows")

    ts = np.array(stamps, dtype="datetime64[s]")
    values = np.array(rows, dtype=float).reshape(len(stamps), len(cols))
    diffs = np.diff(ts)
    if np.any(diffs <= np.timedelta64(0, "s")):
        i = int(np.argmax(diffs <= np.timedelta64(0, "s")))
        raise DataError(f"{path}: timestamps not increasing at {ts[i + 1]}")
    step = diffs[0]
    if np.any(diffs != step):
        i = int(np.argmax(diffs != step))
        raise DataError(f"{path}: gap in timestamps between {ts[i]} and {ts[i + 1]}")
    if step % _ONE_MINUTE != np.timedelta64(0, "s"):
        raise DataError(f"{path}: sampling interval {step} is not a whole number of minutes")
    interval = int(step // _ONE_MINUTE)
    if MINUTES_PER_DAY % interval:
        raise DataError(f"{path}: sampling interval {interval} min does not divide a day")

    if sensor_ids is not None:
        ref = tuple(str(s) for s in sensor_ids)
        unknown = sorted(set(cols) - set(ref))
        absent = sorted(set(ref) - set(cols))
        if unknown or absent:
            raise DataError(
                f"{path}: sensor mismatch with distance table; unknown={unknown[:20]} missing={absent[:20]}"
            )
        pos = {s: i for i, s in enumerate(cols)}
        values = values[:, [pos[s] for s in ref]]
        cols = ref
    return SpeedSeries(cols, ts, values, interval)


def write_speeds(series: SpeedSeries, path: str | Path) -> None:
    """Write a series in the speed CSV format (missing cells left empty)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *series.sensor_ids])
        for ts, row in zip(series.timestamps, series.values):
            w.writerow([str(ts).replace("T", " ")] + ["" if not np.isfinite(v) else repr(float(v)) for v in row])


def downsample(s: SpeedSeries, factor: int) -> SpeedSeries:
    """Average consecutive windows of ``factor`` readings, ignoring missing ones."""
    if int(factor) != factor or factor <= 0:
        raise ValidationError(f"downsampling factor must be a positive integer, got {factor}")
    factor = int(factor)
    if s.slots_per_day % factor:
        raise ValidationError(f"factor {factor} does not divide {s.slots_per_day} slots per day")
    n_out = len(s.timestamps) // factor
    if n_out == 0:
        raise DataError("series shorter than one downsampling window")
    block = s.values[: n_out * factor].reshape(n_out, factor, s.n)
    observed = np.isfinite(block)
    counts = observed.sum(axis=1)
    sums = np.where(observed, block, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return SpeedSeries(s.sensor_ids, s.timestamps[: n_out * factor : factor].copy(), out, s.interval_min * factor)


def to_day_tensor(s: SpeedSeries) -> DayTensor:
    """Reshape a series into day-indexed slot matrices, dropping partial days."""
    T = s.slots_per_day
    ts = s.timestamps
    day_start = ts.astype("datetime64[D]").astype("datetime64[s]")
    first = int(np.argmax(ts == day_start)) if np.any(ts == day_start) else len(ts)
    if first:
        logger.warning("dropping %d readings before the first midnight", first)
    m = (len(ts) - first) // T
    trailing = len(ts) - first - m * T
    if trailing:
        logger.warning("dropping %d readings of a trailing partial day", trailing)
    if m < 2:
        raise DataError(f"need at least 2 complete days, found {m}")
    block = s.values[first : first + m * T].reshape(m, T, s.n)
    values = np.ascontiguousarray(np.transpose(block, (1, 2, 0)))
    labels = ts[first : first + m * T : T].astype("datetime64[D]")
    return DayTensor(s.sensor_ids, values, labels, s.interval_min)


def split_days(dt: DayTensor, train_fraction: float) -> tuple[DayTensor, DayTensor]:
    """Chronological whole-day split; the first ``round(fraction * m)`` days train."""
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(train_fraction * dt.m + 0.5 + 1e-9))
    if n_train <= 0 or n_train >= dt.m:
        raise ValidationError(f"split of {dt.m} days at {train_fraction} leaves an empty side")
    return dt.select_days(range(n_train)), dt.select_days(range(n_train, dt.m))


def fit_norm(train: DayTensor) -> NormStats:
    """Per-sensor mean and standard deviation over observed training entries."""
    obs = train.mask
    counts = obs.sum(axis=(0, 2))
    few = [train.sensor_ids[i] for i in np.flatnonzero(counts < 2)]
    if few:
        raise DataError(f"sensors with fewer than 2 observed training values: {few}")
    vals = np.where(obs, train.values, 0.0)
    mu = vals.sum(axis=(0, 2)) / counts
    dev = np.where(obs, train.values - mu[None, :, None], 0.0)
    sd = np.sqrt((dev**2).sum(axis=(0, 2)) / counts)
    flat = [train.sensor_ids[i] for i in np.flatnonzero(~(sd > 1e-12 * np.maximum(1.0, np.abs(mu))))]
    if flat:
        raise DataError(f"zero-variance sensors: {flat}")
    return NormStats(mu, sd)


def apply_norm(dt: DayTensor, stats: NormStats) -> DayTensor:
    return dt.with_values(stats.apply(dt.values, axis=1))


def invert_norm(dt: DayTensor, stats: NormStats) -> DayTensor:
    return dt.with_values(stats.invert(dt.values, axis=1))
