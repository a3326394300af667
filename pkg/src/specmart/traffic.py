"""Operator traffic-demand series: CSV ingestion, synthesis, and resampling.

Demand is measured in spectrum resource units (SRUs) as continuous
non-negative reals. All generators and resamplers are deterministic per
seed so that any downstream run can be reproduced byte-for-byte.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

DEFAULT_START_TIME = datetime(2023, 1, 22, 0, 0, 0, tzinfo=timezone.utc)
GRANULARITY_META_PREFIX = "# granularity_seconds="
SECONDS_PER_DAY = 86_400


class TrafficCsvError(ValueError):
    """Raised when a traffic CSV file violates the expected schema."""


@dataclass(frozen=True)
class TrafficSeries:
    """Evenly spaced SRU-demand samples for one operator.

    ``values[i]`` is the demand at ``start_time + i * granularity`` seconds;
    samples are non-negative and at least one is present.
    """

    operator_id: str
    granularity: int  # seconds per step
    start_time: datetime
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("values must be a non-empty 1-D sequence")
        if self.granularity <= 0:
            raise ValueError("granularity must be positive")
        if np.any(vals < 0):
            raise ValueError("demand values must be non-negative")
        if not np.all(np.isfinite(vals)):
            raise ValueError("demand values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.values.size)

    def timestamp(self, index: int) -> datetime:
        return self.start_time + timedelta(seconds=index * self.granularity)

    def steps_per_day(self) -> int:
        if SECONDS_PER_DAY % self.granularity != 0:
            raise ValueError("granularity does not divide one day")
        return SECONDS_PER_DAY // self.granularity

    def slice(self, start: int, stop: int) -> "TrafficSeries":
        if not 0 <= start < stop <= len(self):
            raise ValueError(f"invalid slice [{start}, {stop}) for length {len(self)}")
        return TrafficSeries(
            operator_id=self.operator_id,
            granularity=self.granularity,
            start_time=self.timestamp(start),
            values=self.values[start:stop].copy(),
        )


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic daily-cycle demand generator.

    A negative ``daily_amplitude`` shifts the cycle by half a period, which
    is how an anti-correlated counterparty series is produced.
    """

    mean_level: float = 24.0
    daily_amplitude: float = 4.0
    period: int = 24  # steps per day
    noise_sigma: float = 0.5
    trend_per_day: float = 0.0
    seed: int = 0
    length: int = 744

    def __post_init__(self):
        if self.mean_level < 0:
            raise ValueError("mean_level must be non-negative")
        if self.period < 2:
            raise ValueError("period must be at least 2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.length < 1:
            raise ValueError("length must be at least 1")


def _parse_timestamp(raw: str, line_no: int) -> datetime:
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise TrafficCsvError(f"malformed timestamp at line {line_no}: {raw!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def load_csv(path: str | Path, granularity: int | None = None,
             operator_id: str | None = None) -> TrafficSeries:
    """Read a ``timestamp,demand_srus`` CSV into a TrafficSeries.

    A leading ``# granularity_seconds=N`` metadata line sets the step size;
    otherwise ``granularity`` must be supplied. Errors report the offending
    line number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()

    line_no = 0
    meta_granularity = None
    body_start = 0
    for i, line in enumerate(lines):
        stripped = line.strip()
        if stripped.startswith(GRANULARITY_META_PREFIX):
            meta_granularity = int(stripped[len(GRANULARITY_META_PREFIX):])
            continue
        if stripped.startswith("#") or not stripped:
            continue
        body_start = i
        break
    else:
        raise TrafficCsvError(f"{path}: no data rows")

    if meta_granularity is not None:
        granularity = meta_granularity
    if granularity is None:
        raise TrafficCsvError(
            f"{path}: granularity not given in metadata and no --granularity provided")

    reader = csv.reader(lines[body_start:])
    header = next(reader)
    if [h.strip() for h in header] != ["timestamp", "demand_srus"]:
        raise TrafficCsvError(f"{path}: expected header 'timestamp,demand_srus'")

    timestamps: list[datetime] = []
    demands: list[float] = []
    for offset, row in enumerate(reader):
        line_no = body_start + 2 + offset  # 1-based, after the header line
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 2:
            raise TrafficCsvError(f"malformed row at line {line_no}: {row!r}")
        ts = _parse_timestamp(row[0], line_no)
        try:
            demand = float(row[1])
        except ValueError as exc:
            raise TrafficCsvError(
                f"malformed demand at line {line_no}: {row[1]!r}") from exc
        if demand < 0:
            raise TrafficCsvError(f"negative demand at line {line_no}")
        if timestamps and ts <= timestamps[-1]:
            raise TrafficCsvError(f"non-monotonic timestamp at line {line_no}")
        timestamps.append(ts)
        demands.append(demand)

    if not demands:
        raise TrafficCsvError(f"{path}: no data rows")
    return TrafficSeries(
        operator_id=operator_id or path.stem,
        granularity=int(granularity),
        start_time=timestamps[0],
        values=np.asarray(demands, dtype=float),
    )


def write_csv(series: TrafficSeries, path: str | Path) -> None:
    """Write a TrafficSeries in the schema accepted by :func:`load_csv`."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"{GRANULARITY_META_PREFIX}{series.granularity}\n")
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "demand_srus"])
        for i, value in enumerate(series.values):
            writer.writerow([series.timestamp(i).isoformat(), repr(float(value))])


def generate(spec: SynthSpec, operator_id: str = "synthetic",
             start_time: datetime = DEFAULT_START_TIME) -> TrafficSeries:
    """Synthesize a daily-cycle demand series; bit-identical for equal specs.

    value(i) = max(0, mean + amplitude*sin(2*pi*i/period)
                      + trend_per_day*i/period + N(0, noise_sigma)).
    """
    rng = np.random.default_rng(spec.seed)
    i = np.arange(spec.length, dtype=float)
    base = (
        spec.mean_level
        + spec.daily_amplitude * np.sin(2.0 * np.pi * i / spec.period)
        + spec.trend_per_day * i / spec.period
    )
    noise = rng.normal(0.0, spec.noise_sigma, spec.length)
    values = np.maximum(0.0, base + noise)
    granularity = SECONDS_PER_DAY // spec.period
    return TrafficSeries(operator_id, granularity, start_time, values)


def resample(series: TrafficSeries, target_granularity: int,
             noise_sigma: float = 0.0, seed: int = 0) -> TrafficSeries:
    """Change the step size of a series.

    Upsampling interpolates linearly between adjacent samples (the final
    partial segment is held flat) and optionally adds clipped Gaussian
    noise; downsampling averages each full window. The granularities must
    divide one another.
    """
    if target_granularity <= 0:
        raise ValueError("target granularity must be positive")
    src = series.granularity
    if target_granularity == src:
        return TrafficSeries(series.operator_id, src, series.start_time,
                             series.values.copy())

    if src % target_granularity == 0:
        factor = src // target_granularity
        n = len(series)
        positions = np.arange(n * factor, dtype=float) / factor
        up = np.interp(positions, np.arange(n, dtype=float), series.values)
        if noise_sigma > 0:
            rng = np.random.default_rng(seed)
            up = up + rng.normal(0.0, noise_sigma, up.size)
        values = np.maximum(0.0, up)
        return TrafficSeries(series.operator_id, target_granularity,
                             series.start_time, values)

    if target_granularity % src == 0:
        factor = target_granularity // src
        full = (len(series) // factor) * factor
        if full == 0:
            raise ValueError("series too short to downsample by this factor")
        values = series.values[:full].reshape(-1, factor).mean(axis=1)
        return TrafficSeries(series.operator_id, target_granularity,
                             series.start_time, values)

    raise ValueError(
        f"incompatible granularities: {src} s and {target_granularity} s")
