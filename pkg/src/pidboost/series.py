"""Uniformly sampled periodic series: ingestion, splitting and lag windows."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

_TS_FORMAT = "%Y-%m-%dT%H:%M:%S"


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Series:
    """Periodic observations on a fixed sampling grid.

    Timestamps are integer epoch seconds (UTC). ``filled`` lists the
    positions that were linearly interpolated during ingestion.
    """

    values: np.ndarray
    timestamps: np.ndarray
    period: int
    unit_label: str = ""
    filled: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        stamps = np.array(self.timestamps, dtype=np.int64)
        if values.ndim != 1 or stamps.ndim != 1:
            raise DataError("values and timestamps must be one-dimensional")
        if len(values) != len(stamps):
            raise DataError(
                f"{len(values)} values but {len(stamps)} timestamps"
            )
        if len(values) == 0:
            raise DataError("a series needs at least one observation")
        if not np.isfinite(values).all():
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise DataError(f"non-finite value at position {bad}")
        if int(self.period) != self.period or self.period < 2:
            raise DataError(f"period must be an integer >= 2, got {self.period}")
        if len(stamps) > 1:
            steps = np.diff(stamps)
            if steps[0] <= 0 or (steps != steps[0]).any():
                raise DataError("timestamps must be strictly increasing with constant spacing")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "timestamps", _readonly(stamps))
        object.__setattr__(self, "period", int(self.period))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def interval(self) -> int | None:
        """Sampling interval in seconds, or None for a single observation."""
        if len(self.timestamps) < 2:
            return None
        return int(self.timestamps[1] - self.timestamps[0])

    def slice(self, start: int, stop: int) -> "Series":
        """Contiguous sub-series ``[start, stop)`` keeping period and unit."""
        filled = tuple(i - start for i in self.filled if start <= i < stop)
        return Series(
            self.values[start:stop],
            self.timestamps[start:stop],
            self.period,
            self.unit_label,
            filled,
        )


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return int(stamp.timestamp())


def format_timestamp(epoch: int) -> str:
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime(_TS_FORMAT)


def ingest_csv(
    path: str | Path,
    timestamp_column: str = "timestamp",
    value_column: str = "value",
    period: int = 24,
    *,
    unit_label: str = "",
    duplicates: str = "error",
) -> Series:
    """Read a two-column time series from a CSV file.

    Rows are sorted by time. A single missing step between two
    observations is filled by linear interpolation (and logged); any
    longer gap is an error. ``duplicates`` selects the policy for repeated
    timestamps: ``"error"`` (default), ``"first"`` or ``"mean"``.

    Raises:
        DataError: malformed rows, non-finite values, duplicate timestamps
            under the ``"error"`` policy, or spacing violations.
        OSError: the file cannot be read.
    """
    if duplicates not in ("error", "first", "mean"):
        raise ConfigError(f"unknown duplicates policy {duplicates!r}")
    path = Path(path)
    rows: list[tuple[int, float, int]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for name in (timestamp_column, value_column):
            if name not in header:
                raise DataError(f"{path}: missing column {name!r} in header {header}")
        ts_idx = header.index(timestamp_column)
        val_idx = header.index(value_column)
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                stamp = _parse_timestamp(row[ts_idx])
                value = float(row[val_idx])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{line}: malformed row {row!r} ({exc})") from None
            if not math.isfinite(value):
                raise DataError(f"{path}:{line}: non-finite value {row[val_idx]!r}")
            rows.append((stamp, value, line))

    if not rows:
        raise DataError(f"{path}: no data rows")
    rows.sort(key=lambda r: (r[0], r[2]))

    merged: list[tuple[int, float]] = []
    i = 0
    while i < len(rows):
        j = i
        while j + 1 < len(rows) and rows[j + 1][0] == rows[i][0]:
            j += 1
        if j > i:
            if duplicates == "error":
                raise DataError(
                    f"{path}:{rows[i + 1][2]}: duplicate timestamp "
                    f"{format_timestamp(rows[i][0])} (first seen on line {rows[i][2]})"
                )
            group = [r[1] for r in rows[i : j + 1]]
            value = group[0] if duplicates == "first" else math.fsum(group) / len(group)
            merged.append((rows[i][0], value))
        else:
            merged.append((rows[i][0], rows[i][1]))
        i = j + 1

    stamps = [m[0] for m in merged]
    values = [m[1] for m in merged]
    filled: list[int] = []
    if len(stamps) > 1:
        diffs = Counter(b - a for a, b in zip(stamps, stamps[1:]))
        interval = diffs.most_common(1)[0][0]
        out_s, out_v = [stamps[0]], [values[0]]
        for k in range(1, len(stamps)):
            gap = stamps[k] - stamps[k - 1]
            if gap == 2 * interval:
                out_s.append(stamps[k - 1] + interval)
                out_v.append(0.5 * (values[k - 1] + values[k]))
                filled.append(len(out_v) - 1)
            elif gap != interval:
                line = next(r[2] for r in rows if r[0] == stamps[k])
                raise DataError(
                    f"{path}:{line}: spacing of {gap}s after "
                    f"{format_timestamp(stamps[k - 1])} (expected {interval}s, "
                    "at most one missing step is interpolated)"
                )
            out_s.append(stamps[k])
            out_v.append(values[k])
        stamps, values = out_s, out_v
    for pos in filled:
        logger.warning(
            "interpolated missing step at %s", format_timestamp(stamps[pos])
        )
    return Series(np.array(values), np.array(stamps), period, unit_label, tuple(filled))


def write_csv(
    series: Series,
    path: str | Path,
    timestamp_column: str = "timestamp",
    value_column: str = "value",
) -> None:
    """Write ``series`` in the same CSV dialect :func:`ingest_csv` reads.

    Values use the shortest round-trip float representation, so a
    read/write/read cycle is bit-identical.
    """
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([timestamp_column, value_column])
        for stamp, value in zip(series.timestamps, series.values):
            writer.writerow([format_timestamp(stamp), repr(float(value))])


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test fractions."""

    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    test_fraction: float = 0.1

    def __post_init__(self) -> None:
        fracs = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if any(not (0.0 < f < 1.0) for f in fracs):
            raise ConfigError(f"split fractions must lie in (0, 1), got {fracs}")
        if abs(math.fsum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {math.fsum(fracs)}")

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        """Parse ``"0.7,0.1,0.2"``."""
        try:
            parts = [float(p) for p in text.split(",")]
        except ValueError:
            raise ConfigError(f"bad split specification {text!r}") from None
        if len(parts) != 3:
            raise ConfigError(f"split needs three fractions, got {text!r}")
        return cls(*parts)


def split_lengths(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    # guard against floor(0.29 * 100) == 28
    n_val = int(math.floor(spec.validation_fraction * n + 1e-9))
    n_test = int(math.floor(spec.test_fraction * n + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split(series: Series, spec: SplitSpec) -> tuple[Series, Series, Series]:
    """Partition ``series`` into contiguous train, validation and test blocks.

    Validation and test get ``floor(fraction * N)`` rows; the remainder
    goes to train.
    """
    n = len(series)
    if n < 3 * series.period:
        raise DataError(
            f"series of length {n} is shorter than three cycles of period {series.period}"
        )
    n_train, n_val, n_test = split_lengths(n, spec)
    if min(n_train, n_val, n_test) == 0:
        raise DataError(f"split {spec} of {n} rows leaves an empty part")
    return (
        series.slice(0, n_train),
        series.slice(n_train, n_train + n_val),
        series.slice(n_train + n_val, n),
    )


DEFAULT_LAG_SETS = (
    (1, 2, 3, 4, 5),
    (94, 95, 96, 97, 98),
    (190, 191, 192, 193, 194),
)


@dataclass(frozen=True)
class LagWindowSpec:
    """One or more ordered lag sets, each lag counting steps back from t."""

    lag_sets: tuple[tuple[int, ...], ...] = DEFAULT_LAG_SETS

    def __post_init__(self) -> None:
        sets = tuple(tuple(int(l) for l in s) for s in self.lag_sets)
        if not sets:
            raise ConfigError("at least one lag set is required")
        for lags in sets:
            if not lags:
                raise ConfigError("lag sets must be non-empty")
            if min(lags) < 1:
                raise ConfigError(f"lags must be >= 1, got {lags}")
            if len(set(lags)) != len(lags):
                raise ConfigError(f"duplicate lag in {lags}")
        object.__setattr__(self, "lag_sets", sets)
        object.__setattr__(
            self, "_flat", _readonly(np.array([l for s in sets for l in s], dtype=np.int64))
        )

    @property
    def flat(self) -> np.ndarray:
        """All lags concatenated in set order."""
        return self._flat  # type: ignore[attr-defined]

    @property
    def total(self) -> int:
        return len(self.flat)

    @property
    def max_lag(self) -> int:
        return int(self.flat.max())

    @classmethod
    def parse(cls, text: str) -> "LagWindowSpec":
        """Parse ``"1-5;94-98"``: sets split by ``;``, items by ``,``, ranges by ``-``."""
        sets = []
        try:
            for chunk in text.split(";"):
                lags: list[int] = []
                for item in chunk.split(","):
                    item = item.strip()
                    if "-" in item:
                        lo, hi = (int(x) for x in item.split("-"))
                        lags.extend(range(lo, hi + 1))
                    elif item:
                        lags.append(int(item))
                sets.append(tuple(lags))
        except ValueError:
            raise ConfigError(f"bad lag specification {text!r}") from None
        return cls(tuple(sets))

    def format(self) -> str:
        return ";".join(",".join(str(l) for l in s) for s in self.lag_sets)


def build_features(values: Sequence[float] | np.ndarray, t: int, spec: LagWindowSpec) -> list[np.ndarray]:
    """Return the lag vectors ``values[t - lag]`` for each lag set of ``spec``.

    Only indices strictly before ``t`` are read, so ``values`` may be a
    working buffer that already holds corrected predictions.
    """
    if spec.max_lag > t:
        raise DataError(f"need {spec.max_lag} steps of history before t={t}")
    arr = np.asarray(values, dtype=np.float64)
    return [arr[t - np.asarray(lags)] for lags in spec.lag_sets]


def lag_matrix(values: np.ndarray, spec: LagWindowSpec, start: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix of flattened lag features and targets for every ``t >= start``."""
    values = np.asarray(values, dtype=np.float64)
    start = spec.max_lag if start is None else start
    if start < spec.max_lag:
        raise DataError(f"need {spec.max_lag} steps of history before t={start}")
    targets = np.arange(start, len(values))
    if len(targets) == 0:
        raise DataError(
            f"series of length {len(values)} leaves no rows after {start} steps of history"
        )
    X = values[targets[:, None] - spec.flat[None, :]]
    return X, values[targets]
