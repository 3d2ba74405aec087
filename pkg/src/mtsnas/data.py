"""Series ingestion, windowing, normalisation and synthetic data.

CSV layout: a header row, then one row per step. The first column is an
ISO-8601 timestamp or an integer step index; the remaining columns are the
variables. Clock timestamps add a time-of-day input channel.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

DAY_SECONDS = 86400.0


class DataError(ValueError):
    pass


@dataclass
class RawSeries:
    values: np.ndarray  # (L, N)
    timestamps: list  # datetimes, or ints when has_clock is False
    interval: float  # seconds for clock timestamps, steps otherwise
    has_clock: bool
    names: list[str]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def time_of_day(self) -> np.ndarray:
        """Fraction of the day in [0, 1) for every step."""
        if not self.has_clock:
            raise DataError("series has no clock timestamps")
        out = np.empty(self.length)
        for i, ts in enumerate(self.timestamps):
            midnight = ts.replace(hour=0, minute=0, second=0, microsecond=0)
            out[i] = (ts - midnight).total_seconds() / DAY_SECONDS
        return out


def _parse_stamp(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        return None


def load_csv(path, min_rows: int = 1) -> RawSeries:
    """Read a series; ``min_rows`` is typically ``t_in + horizon``."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file (no header row)")
    header = rows[0]
    if len(header) < 2:
        raise DataError(f"{path}: header needs a timestamp column and at least one variable")
    body = [r for r in rows[1:] if r]
    if len(body) < max(min_rows, 1):
        raise DataError(f"{path}: {len(body)} data rows, need at least {max(min_rows, 1)}")

    n = len(header) - 1
    values = np.empty((len(body), n))
    stamps = []
    for r, row in enumerate(body):
        line = r + 2  # 1-based, after the header
        if len(row) != n + 1:
            raise DataError(f"{path}: row {line} has {len(row)} fields, expected {n + 1}")
        stamp = _parse_stamp(row[0])
        if stamp is None:
            raise DataError(f"{path}: row {line}: unparseable timestamp {row[0]!r}")
        stamps.append(stamp)
        for c, cell in enumerate(row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {line}, column {header[c + 1]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {line}, column {header[c + 1]!r}: non-finite value {cell!r}")
            values[r, c] = v

    kinds = {type(s) for s in stamps}
    if len(kinds) != 1:
        raise DataError(f"{path}: mixes integer and clock timestamps")
    has_clock = kinds == {datetime}
    deltas = [_delta(stamps[i], stamps[i + 1], has_clock) for i in range(len(stamps) - 1)]
    for i, d in enumerate(deltas):
        if d <= 0:
            raise DataError(f"{path}: row {i + 3}: duplicate or decreasing timestamp")
    # the smallest step is the sampling interval; anything longer is a gap
    interval = min(deltas) if deltas else 1.0
    for i, d in enumerate(deltas):
        if d != interval:
            raise DataError(f"{path}: row {i + 3}: gap before this row (step {d:g} vs interval {interval:g})")
    return RawSeries(values, stamps, float(interval), has_clock, header[1:])


def _delta(a, b, has_clock: bool) -> float:
    if has_clock:
        return (b - a).total_seconds()
    return float(b - a)


def write_csv(series: RawSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp"] + list(series.names))
        for ts, row in zip(series.timestamps, series.values):
            stamp = ts.isoformat() if series.has_clock else str(ts)
            writer.writerow([stamp] + [repr(float(v)) for v in row])


# ----------------------------------------------------------------------
# normalisation


@dataclass
class NormStats:
    mean: np.ndarray  # (N,)
    std: np.ndarray  # (N,)

    @classmethod
    def fit(cls, values: np.ndarray) -> "NormStats":
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        bad = np.flatnonzero(std <= 0)
        if bad.size:
            raise DataError(f"variables {bad.tolist()} are constant over the training rows")
        return cls(mean, std)

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "NormStats":
        return cls(np.asarray(obj["mean"], dtype=float), np.asarray(obj["std"], dtype=float))


def _check_vars(x: np.ndarray, stats: NormStats) -> None:
    if x.ndim < 2 or x.shape[-2] != stats.mean.shape[0]:
        raise DataError(f"statistics cover {stats.mean.shape[0]} variables, array has shape {x.shape}")


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """z-score an array laid out as (..., N, steps)."""
    x = np.asarray(x, dtype=float)
    _check_vars(x, stats)
    return (x - stats.mean[:, None]) / stats.std[:, None]


def denormalize(pred: np.ndarray, stats: NormStats) -> np.ndarray:
    """Inverse of :func:`normalize` for arrays laid out as (..., N, steps)."""
    pred = np.asarray(pred, dtype=float)
    _check_vars(pred, stats)
    return pred * stats.std[:, None] + stats.mean[:, None]


# ----------------------------------------------------------------------
# windows


@dataclass
class WindowSet:
    """Stride-1 windows of one split.

    ``inputs`` is (S, N, t_in, C) normalised (channel 0 = value, channel 1
    = time of day when available); ``targets`` is the normalised (S, N, h)
    future, ``raw_targets`` the same in original units and ``last_raw``
    the last observed raw value per variable (for the persistence baseline).
    """

    inputs: np.ndarray
    targets: np.ndarray
    raw_targets: np.ndarray
    last_raw: np.ndarray
    starts: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class Splits:
    train: WindowSet
    valid: WindowSet
    test: WindowSet
    stats: NormStats
    train_rows: int  # rows [0, train_rows) produced the statistics

    @property
    def in_channels(self) -> int:
        return self.train.inputs.shape[3]


def window_count(length: int, t_in: int, horizon: int) -> int:
    return length - (t_in + horizon) + 1


def split_sizes(n_windows: int, train_frac: float = 0.7, valid_frac: float = 0.2) -> tuple[int, int, int]:
    """Chronological split by window start.

    Both boundaries are floored (with a tolerance for float round-off) and
    the test split takes the remainder.
    """
    n_train = math.floor(n_windows * train_frac + 1e-9)
    valid_end = math.floor(n_windows * (train_frac + valid_frac) + 1e-9)
    return n_train, valid_end - n_train, n_windows - valid_end


def make_windows(
    series: RawSeries, t_in: int, horizon: int, split=(0.7, 0.2, 0.1), stats: NormStats | None = None
) -> Splits:
    """Windows of every split. ``stats`` replaces the statistics otherwise
    fitted on the training rows (used when applying a trained model)."""
    n_windows = window_count(series.length, t_in, horizon)
    if n_windows < 1:
        raise DataError(f"series of length {series.length} is too short for t_in={t_in} + horizon={horizon}")
    train_frac, valid_frac = split[0], split[1]
    n_train, n_valid, n_test = split_sizes(n_windows, train_frac, valid_frac)
    if n_train < 1:
        raise DataError(f"{n_windows} windows leave no training samples")

    train_rows = n_train - 1 + t_in + horizon
    if stats is None:
        stats = NormStats.fit(series.values[:train_rows])
    elif stats.mean.shape[0] != series.n_vars:
        raise DataError(f"statistics cover {stats.mean.shape[0]} variables, series has {series.n_vars}")
    norm = ((series.values - stats.mean) / stats.std).T  # (N, L)
    raw = series.values.T
    channels = [norm]
    if series.has_clock:
        tod = series.time_of_day()
        channels.append(np.broadcast_to(tod, norm.shape))
    stacked = np.stack(channels, axis=-1)  # (N, L, C)

    def build(lo: int, hi: int) -> WindowSet:
        starts = np.arange(lo, hi)
        idx_in = starts[:, None] + np.arange(t_in)[None, :]
        idx_out = starts[:, None] + t_in + np.arange(horizon)[None, :]
        inputs = np.ascontiguousarray(np.transpose(stacked[:, idx_in, :], (1, 0, 2, 3)))
        targets = np.ascontiguousarray(np.transpose(norm[:, idx_out], (1, 0, 2)))
        raw_targets = np.ascontiguousarray(np.transpose(raw[:, idx_out], (1, 0, 2)))
        last_raw = np.ascontiguousarray(raw[:, starts + t_in - 1].T) if hi > lo else np.empty((0, raw.shape[0]))
        return WindowSet(inputs, targets, raw_targets, last_raw, starts)

    return Splits(
        train=build(0, n_train),
        valid=build(n_train, n_train + n_valid),
        test=build(n_train + n_valid, n_windows),
        stats=stats,
        train_rows=train_rows,
    )


# ----------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSpec:
    """Block-structured synthetic series.

    Each variable is a fast plus a slow sinusoid (phases drawn once and
    shared by all variables), plus its own AR(1) driver, plus ``coupling``
    times the mean of its planted neighbours' drivers ``lag`` steps
    earlier, plus Gaussian noise. Planted edges connect every pair inside
    a block. With ``lag`` equal to the forecast horizon the neighbour term
    of every target step is already visible in the neighbours' inputs.
    """

    n_vars: int = 8
    length: int = 2000
    n_blocks: int = 2
    fast_period: float = 12.0
    slow_period: float = 96.0
    fast_amp: float = 1.0
    slow_amp: float = 1.0
    driver_scale: float = 0.5
    ar_coef: float = 0.5
    coupling: float = 2.0
    lag: int = 12
    noise: float = 0.1
    interval_minutes: int = 5
    start: str = "2024-01-01T00:00:00"
    seed: int = 0

    def validate(self) -> None:
        if self.n_vars < 1:
            raise DataError(f"n_vars must be >= 1, got {self.n_vars}")
        if self.length < 2:
            raise DataError(f"length must be >= 2, got {self.length}")
        if not 1 <= self.n_blocks <= self.n_vars:
            raise DataError(f"n_blocks must be in [1, n_vars], got {self.n_blocks}")
        for name in ("fast_period", "slow_period"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("fast_amp", "slow_amp", "driver_scale", "noise", "coupling"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.ar_coef < 1:
            raise DataError(f"ar_coef must be in [0, 1), got {self.ar_coef}")
        if self.lag < 0:
            raise DataError(f"lag must be >= 0, got {self.lag}")
        if self.interval_minutes < 1:
            raise DataError(f"interval_minutes must be >= 1, got {self.interval_minutes}")
        try:
            datetime.fromisoformat(self.start)
        except ValueError:
            raise DataError(f"start is not an ISO-8601 timestamp: {self.start!r}") from None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise DataError(f"unknown synthetic spec fields {sorted(unknown)}")
        spec = cls(**obj)
        spec.validate()
        return spec


def planted_adjacency(n_vars: int, n_blocks: int) -> np.ndarray:
    """Symmetric 0/1 matrix linking all pairs within contiguous blocks."""
    block = np.arange(n_vars) * n_blocks // n_vars
    adj = (block[:, None] == block[None, :]).astype(float)
    np.fill_diagonal(adj, 0.0)
    return adj


def gen_synthetic(spec: SyntheticSpec) -> tuple[RawSeries, np.ndarray]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, length = spec.n_vars, spec.length
    adj = planted_adjacency(n, spec.n_blocks)
    t = np.arange(length, dtype=float)
    fast_phase = rng.uniform(0, 2 * np.pi)
    slow_phase = rng.uniform(0, 2 * np.pi)
    values = np.zeros((length, n))
    values += spec.fast_amp * np.sin(2 * np.pi * t[:, None] / spec.fast_period + fast_phase)
    values += spec.slow_amp * np.sin(2 * np.pi * t[:, None] / spec.slow_period + slow_phase)

    innov = rng.standard_normal((length + spec.lag, n))
    drivers = np.empty_like(innov)
    drivers[0] = innov[0] * spec.driver_scale
    for i in range(1, drivers.shape[0]):
        drivers[i] = spec.ar_coef * drivers[i - 1] + spec.driver_scale * innov[i]
    own = drivers[spec.lag :]
    lagged = drivers[: length]
    degree = adj.sum(axis=1)
    mix = np.divide(adj, degree[:, None], out=np.zeros_like(adj), where=degree[:, None] > 0)
    values += own + spec.coupling * lagged @ mix.T
    values += spec.noise * rng.standard_normal((length, n))

    start = datetime.fromisoformat(spec.start)
    step = timedelta(minutes=spec.interval_minutes)
    stamps = [start + i * step for i in range(length)]
    width = len(str(n - 1))
    names = [f"v{i:0{width}d}" for i in range(n)]
    series = RawSeries(values, stamps, step.total_seconds(), True, names)
    return series, adj


def save_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
