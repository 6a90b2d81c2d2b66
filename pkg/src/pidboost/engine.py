"""Iterative multi-step prediction with optional PID correction.

A :class:`ForecastSession` owns a working buffer: real history followed by
the corrected predictions of the round in progress. Each step reads its
lag features from that buffer, so later steps see earlier corrections.
When the round's real values arrive they replace the predictions in the
buffer and are handed to the booster.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .booster import STRATEGIES, PidBooster, PidGains, StepRecord
from .errors import BoosterError, ConfigError, DataError, FormatError
from .series import build_features, lag_matrix

RUN_COLUMNS = ("t", "pv", "u", "p", "rv", "e", "scored")


@dataclass
class RoundSummary:
    errors: np.ndarray
    mae: float


class ForecastSession:
    """Round-by-round forecasting state for one base forecaster.

    Args:
        base: fitted one-step forecaster.
        history: real values preceding the first predicted step.
        booster: initialized :class:`PidBooster`, or None for plain
            iterative forecasting.
        horizon: steps per round; defaults to the period.
        period: cycle length, required when ``booster`` is None.
    """

    def __init__(self, base, history: Sequence[float], *, booster: PidBooster | None = None,
                 horizon: int | None = None, period: int | None = None):
        if booster is not None:
            period = booster.period
        if period is None:
            raise ConfigError("period is required without a booster")
        self.base = base
        self.booster = booster
        self.period = int(period)
        self.horizon = int(horizon or self.period)
        if self.horizon < 1:
            raise ConfigError(f"horizon must be positive, got {horizon}")
        history = np.asarray(history, dtype=np.float64)
        if len(history) < base.lag_spec.max_lag:
            raise DataError(
                f"history of {len(history)} steps is shorter than the largest lag {base.lag_spec.max_lag}"
            )
        self._buf = np.empty(len(history) + 4 * self.horizon + 16)
        self._buf[: len(history)] = history
        self._len = len(history)
        self._pending: list[StepRecord] = []
        self.round_index = 0
        self.log: list[StepRecord] = []

    @property
    def buffer(self) -> np.ndarray:
        """Read-only view of history plus pending corrected predictions."""
        view = self._buf[: self._len]
        view.setflags(write=False)
        return view

    def _ensure(self, extra: int) -> None:
        need = self._len + extra
        if need > len(self._buf):
            grown = np.empty(max(need, 2 * len(self._buf)))
            grown[: self._len] = self._buf[: self._len]
            self._buf = grown

    def extend_history(self, reals: Sequence[float]) -> None:
        """Append observed values with no prediction pending."""
        if self._pending:
            raise BoosterError("cannot extend history while a round is pending")
        reals = np.asarray(reals, dtype=np.float64)
        self._ensure(len(reals))
        self._buf[self._len : self._len + len(reals)] = reals
        self._len += len(reals)

    def predict_round(self, steps: int | None = None) -> np.ndarray:
        """Predict the next round, writing each corrected value back to the buffer."""
        if self._pending:
            raise BoosterError("previous round has not been observed")
        steps = self.horizon if steps is None else steps
        self._ensure(steps)
        buf, spec, base, booster = self._buf, self.base.lag_spec, self.base, self.booster
        out = np.empty(steps)
        for k in range(steps):
            t = self._len
            pv = base.predict_one(build_features(buf, t, spec))
            if booster is None:
                rec = StepRecord(t, k, self.round_index, pv, 0.0, pv)
            else:
                rec = booster.correct(pv, k, t)
            buf[t] = rec.p
            self._len += 1
            self._pending.append(rec)
            self.log.append(rec)
            out[k] = rec.p
        return out

    def observe_round(self, real_values: Sequence[float]) -> RoundSummary:
        """Reveal the real values of the pending round."""
        reals = np.asarray(real_values, dtype=np.float64)
        pending = self._pending
        if not pending:
            raise BoosterError("no pending round to observe")
        if reals.shape != (len(pending),):
            raise BoosterError(f"expected {len(pending)} real values, got {reals.shape}")
        if self.booster is not None:
            errors = self.booster.finalize_round(reals)
        else:
            if not np.isfinite(reals).all():
                raise BoosterError("real values must be finite")
            errors = np.empty(len(pending))
            for j, (rec, rv) in enumerate(zip(pending, reals)):
                rec.rv = float(rv)
                rec.e = rec.p - rec.rv
                errors[j] = rec.e
        start = self._len - len(pending)
        self._buf[start : self._len] = reals
        self._pending = []
        self.round_index += 1
        return RoundSummary(errors, float(np.mean(np.abs(errors))))


@dataclass
class ForecastRun:
    """Complete per-step log of a backtest plus the settings that produced it."""

    records: list[StepRecord]
    period: int
    horizon: int
    gains: PidGains | None = None
    strategy: str = "zero"
    model_name: str = ""
    model_params: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def boosted(self) -> bool:
        return self.gains is not None

    def scored(self) -> list[StepRecord]:
        return [r for r in self.records if r.scored and r.rv is not None]

    def column(self, name: str, scored_only: bool = False) -> np.ndarray:
        recs = self.scored() if scored_only else self.records
        return np.array([getattr(r, name) for r in recs], dtype=np.float64)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RUN_COLUMNS)
            for r in self.records:
                writer.writerow([
                    r.t, repr(r.pv), repr(r.u), repr(r.p),
                    "" if r.rv is None else repr(r.rv),
                    "" if r.e is None else repr(r.e),
                    int(r.scored),
                ])

    @classmethod
    def from_csv(cls, path: str | Path, period: int, horizon: int | None = None) -> "ForecastRun":
        records = []
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or any(c not in reader.fieldnames for c in RUN_COLUMNS[:6]):
                raise FormatError(f"{path}: run log needs columns {RUN_COLUMNS[:6]}")
            try:
                for row in reader:
                    rv = float(row["rv"]) if row["rv"] else None
                    e = float(row["e"]) if row["e"] else None
                    scored = bool(int(row.get("scored") or 1))
                    records.append(StepRecord(
                        int(row["t"]), 0, 0, float(row["pv"]), float(row["u"]),
                        float(row["p"]), rv, e, scored=scored, warmup=not scored,
                    ))
            except ValueError as exc:
                raise FormatError(f"{path}:{reader.line_num}: {exc}") from None
        return cls(records, period, horizon or period)


def one_step_mae(base, values: Sequence[float]) -> float:
    """In-sample one-step MAE with real inputs (teacher forcing)."""
    X, y = lag_matrix(np.asarray(values, dtype=np.float64), base.lag_spec)
    return float(np.mean(np.abs(base.predict_matrix(X) - y)))


def plan_rounds(n_values: int, start: int, stop: int, period: int, horizon: int,
                strategy: str, align: bool = True) -> tuple[int, list[tuple[int, int, bool]]]:
    """Lay out rounds over ``[start, stop)``.

    Returns the first predicted index (after aligning to a multiple of the
    period when ``align``) and a list of ``(start, length, is_warmup)``.
    """
    if not 0 <= start <= stop <= n_values:
        raise DataError(f"bad evaluation window [{start}, {stop}) for {n_values} values")
    pos = start + ((-start) % period if align else 0)
    segments = []
    if strategy == "warmup":
        if pos + period > stop:
            raise DataError("evaluation window is too short for a warmup round")
        segments.append((pos, period, True))
        pos += period
    while pos + horizon <= stop:
        segments.append((pos, horizon, False))
        pos += horizon
    if not any(not w for _, _, w in segments):
        raise DataError(
            f"evaluation window [{start}, {stop}) holds no full scored round of {horizon} steps"
        )
    return start + ((-start) % period if align else 0), segments


def run_window(base, values: Sequence[float], start: int, stop: int, *, period: int,
               gains: PidGains | None, horizon: int | None = None, strategy: str = "warmup",
               derivative: str = "zero", train_mae: float | None = None,
               align: bool = True, max_rounds: int | None = None) -> ForecastRun:
    """Walk ``values[start:stop]`` round by round, predicting then observing.

    Everything before the first predicted index is real history. With
    ``gains=None`` the run is plain iterative forecasting laid out on the
    same rounds (including an unscored first round for ``"warmup"``).
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown initialization strategy {strategy!r}")
    values = np.asarray(values, dtype=np.float64)
    horizon = int(horizon or period)
    first, segments = plan_rounds(len(values), start, stop, period, horizon, strategy, align)
    if max_rounds is not None:
        kept, scored = [], 0
        for seg in segments:
            if not seg[2]:
                if scored == max_rounds:
                    break
                scored += 1
            kept.append(seg)
        segments = kept

    booster = None
    if gains is not None:
        booster = PidBooster(gains, period, derivative)
    session = ForecastSession(base, values[:first], booster=booster, horizon=horizon, period=period)

    for seg_start, length, is_warmup in segments:
        reals = values[seg_start : seg_start + length]
        if is_warmup:
            if booster is not None:
                booster.initialize("warmup", forecaster=base, history=session.buffer, reals=reals)
                session.log.extend(booster.warmup_records)
                session.extend_history(reals)
            else:
                session.predict_round(length)
                for rec in session.log[-length:]:
                    rec.scored, rec.warmup, rec.round_index = False, True, -1
                session.observe_round(reals)
                session.round_index = 0
            continue
        if booster is not None and not booster.state.initialized:
            if strategy == "train_mae":
                mae = train_mae if train_mae is not None else one_step_mae(base, values[:start])
                booster.initialize("train_mae", train_mae=mae)
            else:
                booster.initialize("zero")
        session.predict_round(length)
        session.observe_round(reals)

    return ForecastRun(
        records=session.log,
        period=period,
        horizon=horizon,
        gains=gains,
        strategy=strategy,
        model_name=getattr(base, "name", type(base).__name__),
        model_params=int(getattr(base, "n_params", 0)),
    )


def run_backtest(base, splits, gains: PidGains | None, horizon: int | None = None,
                 strategy: str = "warmup", *, derivative: str = "zero",
                 train_mae: float | None = None, align: bool = True) -> ForecastRun:
    """Backtest over the test split of ``(train, validation, test)``.

    Train and validation values form the initial history.
    """
    train, validation, test = splits
    period = test.period
    values = np.concatenate([train.values, validation.values, test.values])
    start = len(train) + len(validation)
    if train_mae is None and strategy == "train_mae":
        train_mae = one_step_mae(base, train.values)
    return run_window(base, values, start, len(values), period=period, gains=gains,
                      horizon=horizon, strategy=strategy, derivative=derivative,
                      train_mae=train_mae, align=align)


def collect_round_pairs(base, values: Sequence[float], start: int, stop: int,
                        horizon: int, period: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw plain-iterative rounds and their real values over ``[start, stop)``.

    These are the training pairs of the batch corrector baseline.
    """
    run = run_window(base, values, max(start, base.lag_spec.max_lag), stop, period=period,
                     gains=None, horizon=horizon, strategy="zero")
    p = run.column("p")
    rv = run.column("rv")
    m = len(p) // horizon
    return p[: m * horizon].reshape(m, horizon), rv[: m * horizon].reshape(m, horizon)


def run_batch_corrected(base, corrector, splits, horizon: int | None = None,
                        align: bool = True) -> ForecastRun:
    """Backtest where each plain iterative round is corrected in one batch."""
    train, validation, test = splits
    period = test.period
    horizon = int(horizon or period)
    if corrector.n != horizon:
        raise ConfigError(f"corrector width {corrector.n} does not match horizon {horizon}")
    values = np.concatenate([train.values, validation.values, test.values])
    start = len(train) + len(validation)
    raw = run_window(base, values, start, len(values), period=period, gains=None,
                     horizon=horizon, strategy="zero", align=align)
    records = []
    for r0 in range(0, len(raw.records), horizon):
        block = raw.records[r0 : r0 + horizon]
        corrected = corrector.correct_batch([r.p for r in block])
        for rec, c in zip(block, corrected):
            p = float(c)
            records.append(StepRecord(rec.t, rec.k, rec.round_index, rec.pv, p - rec.pv, p,
                                      rec.rv, p - rec.rv))
    return ForecastRun(records, period, horizon, None, "batch", raw.model_name,
                       raw.model_params + corrector.n_params)


def boosted_steps_consistent(run: ForecastRun, tol: float = 1e-12) -> bool:
    """True when every finished step satisfies ``p == pv + u`` and ``e == p - rv``."""
    for r in run.records:
        if r.p != r.pv + r.u:
            return False
        if r.rv is not None and not math.isclose(r.e, r.p - r.rv, abs_tol=tol, rel_tol=0.0):
            return False
    return True
