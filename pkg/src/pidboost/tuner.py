"""Coordinate grid search for the booster gains.

kp is swept first with ki = kd = 0, then ki with the best kp, then kd.
A zero-gain candidate is always evaluated so the result is never worse
than running without correction on the tuning data.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .booster import PidGains
from .engine import plan_rounds, run_window
from .errors import ConfigError, DataError, ModelError
from .evaluation import compute_metrics
from .series import Series

logger = logging.getLogger(__name__)


def grid(start: float, step: float, stop: float, below: float | None = None) -> list[float]:
    """Evenly spaced values ``start + i*step <= stop`` (and ``< below`` if given)."""
    if step <= 0:
        raise ConfigError(f"grid step must be positive, got {step}")
    values = []
    i = 0
    while True:
        v = round(start + i * step, 12)
        if v > stop + 1e-12 or (below is not None and v >= below):
            break
        values.append(v)
        i += 1
    return values


@dataclass(frozen=True)
class TuneSpec:
    kp_start: float = 0.1
    kp_step: float = 0.1
    kp_max: float = 1.0
    ki_start: float = 0.0001
    ki_step: float = 0.0001
    ki_max: float = 1.0
    kd_start: float = 0.0001
    kd_step: float = 0.0001
    kd_max: float = 1.0
    objective: str = "MAE"
    horizon: int | None = None
    rounds: int | None = None
    enforce_ordering: bool = True
    patience: int = 50
    strategy: str = "warmup"
    derivative: str = "zero"

    def __post_init__(self) -> None:
        if self.objective not in ("MAE", "MAPE"):
            raise ConfigError(f"objective must be MAE or MAPE, got {self.objective!r}")
        for name in ("kp", "ki", "kd"):
            start = getattr(self, f"{name}_start")
            stop = getattr(self, f"{name}_max")
            if getattr(self, f"{name}_step") <= 0:
                raise ConfigError(f"{name} step must be positive")
            if not (0.0 <= start <= stop <= 1.0):
                raise ConfigError(f"{name} grid must lie within [0, 1]")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")

    def kp_grid(self) -> list[float]:
        return grid(self.kp_start, self.kp_step, self.kp_max)

    def ki_grid(self, kp: float) -> list[float]:
        return grid(self.ki_start, self.ki_step, self.ki_max, kp if self.enforce_ordering else None)

    def kd_grid(self, kp: float) -> list[float]:
        return grid(self.kd_start, self.kd_step, self.kd_max, kp if self.enforce_ordering else None)


@dataclass(frozen=True)
class TraceEntry:
    gains: PidGains
    objective: float
    stage: str


@dataclass
class TuneResult:
    best: PidGains
    best_objective: float
    trace: list[TraceEntry] = field(default_factory=list)
    stopped_early: dict = field(default_factory=dict)

    @property
    def evaluations(self) -> int:
        return len(self.trace)

    def ranks(self) -> list[int]:
        order = sorted(range(len(self.trace)), key=lambda i: _key(self.trace[i]))
        ranks = [0] * len(order)
        for r, i in enumerate(order, start=1):
            ranks[i] = r
        return ranks

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["kp", "ki", "kd", "objective", "rank"])
            for entry, rank in zip(self.trace, self.ranks()):
                g = entry.gains
                writer.writerow([repr(g.kp), repr(g.ki), repr(g.kd), repr(entry.objective), rank])


def _key(entry: TraceEntry):
    obj = entry.objective if math.isfinite(entry.objective) else math.inf
    return (obj, *entry.gains.as_tuple())


def tune(base, validation: Series, spec: TuneSpec | None = None, *, history) -> TuneResult:
    """Pick gains minimising the validation objective of boosted backtests.

    Args:
        base: fitted one-step forecaster (only read).
        validation: series scored during tuning; its first round seeds the
            booster when ``spec.strategy == "warmup"``.
        spec: grids and objective.
        history: real values immediately preceding ``validation``.

    Raises:
        DataError: validation holds fewer than the rounds needed.
        ModelError: no candidate produced a finite objective.
    """
    spec = spec or TuneSpec()
    period = validation.period
    horizon = spec.horizon or period
    history = np.asarray(getattr(history, "values", history), dtype=np.float64)
    values = np.concatenate([history, validation.values])
    start = len(history)
    try:
        plan_rounds(len(values), start, len(values), period, horizon, spec.strategy)
    except DataError as exc:
        raise DataError(f"validation too short for tuning: {exc}") from None

    def evaluate(gains: PidGains, stage: str) -> TraceEntry:
        run = run_window(base, values, start, len(values), period=period, gains=gains,
                         horizon=horizon, strategy=spec.strategy, derivative=spec.derivative,
                         max_rounds=spec.rounds)
        with np.errstate(all="ignore"):
            m = compute_metrics(run)
        obj = m.mae if spec.objective == "MAE" else m.mape
        if not math.isfinite(obj):
            obj = math.inf
        entry = TraceEntry(gains, obj, stage)
        trace.append(entry)
        return entry

    trace: list[TraceEntry] = []
    best = evaluate(PidGains(0.0, 0.0, 0.0), "guard")
    for kp in spec.kp_grid():
        entry = evaluate(PidGains(kp, 0.0, 0.0), "kp")
        if _key(entry) < _key(best):
            best = entry

    stopped = {}
    for stage in ("ki", "kd"):
        kp = best.gains.kp
        candidates = spec.ki_grid(kp) if stage == "ki" else spec.kd_grid(kp)
        stale = 0
        for value in candidates:
            g = best.gains
            gains = PidGains(kp, value, g.kd) if stage == "ki" else PidGains(kp, g.ki, value)
            entry = evaluate(gains, stage)
            if _key(entry) < _key(best):
                best, stale = entry, 0
            else:
                stale += 1
                if stale >= spec.patience:
                    stopped[stage] = value
                    logger.info("%s sweep stopped after %d non-improving candidates at %g",
                                stage, stale, value)
                    break

    if not math.isfinite(best.objective):
        raise ModelError("every gain candidate produced a non-finite objective")
    return TuneResult(best.gains, best.objective, trace, stopped)
