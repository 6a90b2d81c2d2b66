"""PID correction of iterated one-step predictions.

The controller cannot see the error of the step it is correcting (real
values arrive only after a whole round has been predicted), so it feeds
back the error observed one period earlier. With rounds and steps counted
from zero, step ``k`` of round ``i`` is corrected by::

    u = -kp * e_prev[k] - ki * sum(e_prev[0..k]) - kd * (e_prev[k] - e_prev[k-1])
    P = PV + u

where ``e_prev`` holds the final errors ``P - RV`` of the previous round.
The sum restarts at every round, and the backward difference at ``k == 0``
uses 0 for the missing ``e_prev[-1]`` (or, with ``derivative="carry"``,
the last error of the round before the previous one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BoosterError, ConfigError, FormatError
from .series import build_features

SNAPSHOT_TAG = "pidboost-booster"
SNAPSHOT_VERSION = 1
STRATEGIES = ("zero", "train_mae", "warmup")


@dataclass(frozen=True)
class PidGains:
    """Proportional, integral and derivative gains, each in ``[0, 1]``."""

    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0

    def __post_init__(self) -> None:
        for name in ("kp", "ki", "kd"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, value)

    @property
    def ordered(self) -> bool:
        """True when ``ki < kp`` and ``kd < kp`` (always true for ``kp == 0``)."""
        return self.kp == 0.0 or (self.ki < self.kp and self.kd < self.kp)

    def check_ordering(self) -> "PidGains":
        if not self.ordered:
            raise ConfigError(f"gains {self.as_tuple()} violate ki < kp and kd < kp")
        return self

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.kp, self.ki, self.kd)

    @property
    def is_zero(self) -> bool:
        return self.kp == 0.0 and self.ki == 0.0 and self.kd == 0.0

    @classmethod
    def parse(cls, text: str) -> "PidGains":
        """Parse ``"kp,ki,kd"``."""
        try:
            parts = [float(p) for p in text.split(",")]
        except ValueError:
            raise ConfigError(f"bad gains {text!r}") from None
        if len(parts) != 3:
            raise ConfigError(f"gains need three values, got {text!r}")
        return cls(*parts)

    def format(self) -> str:
        return ",".join(repr(g) for g in self.as_tuple())


@dataclass(slots=True)
class StepRecord:
    """One predicted step.

    ``e_lag``, ``e_lag_prev`` and ``integral`` are the error-state values
    that produced ``u``; they let the error decomposition be rechecked
    after the fact.
    """

    t: int
    k: int
    round_index: int
    pv: float
    u: float
    p: float
    rv: float | None = None
    e: float | None = None
    e_lag: float = 0.0
    e_lag_prev: float = 0.0
    integral: float = 0.0
    scored: bool = True
    warmup: bool = False


@dataclass
class BoosterState:
    """Everything the controller remembers between steps and rounds."""

    period: int
    round_index: int = 0
    prev_round_errors: np.ndarray = field(default=None)  # type: ignore[assignment]
    current_round: list[StepRecord] = field(default_factory=list)
    integral: float = 0.0
    initialized: bool = False
    carry_error: float = 0.0
    offset: int = 0

    def __post_init__(self) -> None:
        if self.period < 2:
            raise ConfigError(f"period must be >= 2, got {self.period}")
        if self.prev_round_errors is None:
            self.prev_round_errors = np.zeros(self.period)


class PidBooster:
    """Stateful PID corrector for one forecast session.

    Args:
        gains: controller gains.
        period: steps per seasonal cycle; errors are fed back with this delay.
        derivative: ``"zero"`` or ``"carry"``, the convention for the
            backward difference at the first step of a round.
    """

    def __init__(self, gains: PidGains, period: int, derivative: str = "zero"):
        if derivative not in ("zero", "carry"):
            raise ConfigError(f"unknown derivative convention {derivative!r}")
        self.gains = gains
        self.derivative = derivative
        self.state = BoosterState(period=int(period))
        self.log: list[StepRecord] = []
        self.warmup_records: list[StepRecord] = []

    @property
    def period(self) -> int:
        return self.state.period

    # -- initialization ---------------------------------------------------

    def initialize(
        self,
        strategy: str,
        *,
        train_mae: float | None = None,
        forecaster=None,
        history: Sequence[float] | None = None,
        reals: Sequence[float] | None = None,
    ) -> "PidBooster":
        """Seed the previous-round error vector before the first round.

        ``"zero"`` leaves the controller inert for the first round,
        ``"train_mae"`` fills the vector with a constant, and ``"warmup"``
        runs one round of held-back data with lag-1 error feedback (see
        :meth:`warmup_round`).
        """
        st = self.state
        if strategy == "zero":
            errors = np.zeros(st.period)
        elif strategy == "train_mae":
            if train_mae is None or not math.isfinite(train_mae):
                raise BoosterError("train_mae strategy needs a finite training MAE")
            errors = np.full(st.period, float(train_mae))
        elif strategy == "warmup":
            if forecaster is None or history is None or reals is None:
                raise BoosterError("warmup strategy needs a forecaster, history and one round of reals")
            self.warmup_records = self.warmup_round(forecaster, history, reals)
            errors = np.array([r.e for r in self.warmup_records])
        else:
            raise ConfigError(f"unknown initialization strategy {strategy!r}")
        st.prev_round_errors = errors
        st.current_round = []
        st.integral = 0.0
        st.carry_error = 0.0
        st.round_index = 0
        st.offset = 0
        st.initialized = True
        return self

    def warmup_round(self, forecaster, history: Sequence[float], reals: Sequence[float]) -> list[StepRecord]:
        """Predict one round over known data using immediate error feedback.

        Each step is corrected with the error of the step just before it::

            u(t) = -kp*e(t-1) - ki*sum(e(0..t-1)) - kd*(e(t-1) - e(t-2))

        with ``e(-1) = e(-2) = 0``; the real value is revealed right after
        each step. Corrected values are written back to a private copy of
        ``history`` for the following feature windows.
        """
        reals = np.asarray(reals, dtype=np.float64)
        if len(reals) != self.period:
            raise BoosterError(f"warmup needs exactly {self.period} real values, got {len(reals)}")
        if not np.isfinite(reals).all():
            raise BoosterError("warmup real values must be finite")
        g = self.gains
        base = len(history)
        buf = np.empty(base + self.period)
        buf[:base] = history
        records = []
        e1 = e2 = 0.0
        total = 0.0
        for j in range(self.period):
            t = base + j
            pv = forecaster.predict_one(build_features(buf, t, forecaster.lag_spec))
            u = -g.kp * e1 - g.ki * total - g.kd * (e1 - e2)
            p = pv + u
            rv = float(reals[j])
            e = p - rv
            records.append(
                StepRecord(t, j, -1, pv, u, p, rv, e, e1, e2, total, scored=False, warmup=True)
            )
            buf[t] = p
            e2, e1 = e1, e
            total += e
        return records

    # -- prediction -------------------------------------------------------

    def _control(self, k: int) -> tuple[float, float, float, float]:
        st = self.state
        if not st.initialized:
            raise BoosterError("booster is not initialized")
        if k != len(st.current_round):
            raise BoosterError(f"expected step {len(st.current_round)} of the round, got {k}")
        T = st.period
        idx = (st.offset + k) % T
        e1 = float(st.prev_round_errors[idx])
        if k > 0:
            e0 = float(st.prev_round_errors[(idx - 1) % T])
        else:
            e0 = st.carry_error if self.derivative == "carry" else 0.0
        integral = st.integral + e1
        g = self.gains
        u = -g.kp * e1 - g.ki * integral - g.kd * (e1 - e0)
        return u, e1, e0, integral

    def compute_control(self, k: int) -> float:
        """Control term for step ``k`` of the current round (no state change)."""
        return self._control(k)[0]

    def correct(self, pv: float, k: int, t: int | None = None) -> StepRecord:
        """Correct the raw prediction of step ``k`` and advance the integral."""
        u, e1, e0, integral = self._control(k)
        st = self.state
        st.integral = integral
        rec = StepRecord(
            t=len(self.log) if t is None else t,
            k=k,
            round_index=st.round_index,
            pv=pv,
            u=u,
            p=pv + u,
            e_lag=e1,
            e_lag_prev=e0,
            integral=integral,
        )
        st.current_round.append(rec)
        self.log.append(rec)
        return rec

    def finalize_round(self, real_values: Sequence[float]) -> np.ndarray:
        """Record real values for the pending round and roll the error state.

        Returns the per-step errors ``P - RV``, which become the previous
        round errors for the next round; the integral is reset.
        """
        st = self.state
        reals = np.asarray(real_values, dtype=np.float64)
        pending = st.current_round
        if not pending:
            raise BoosterError("no pending predictions to finalize")
        if reals.shape != (len(pending),):
            raise BoosterError(f"expected {len(pending)} real values, got {reals.shape}")
        if not np.isfinite(reals).all():
            raise BoosterError("real values must be finite")
        T = st.period
        errors = np.empty(len(pending))
        for j, (rec, rv) in enumerate(zip(pending, reals)):
            rec.rv = float(rv)
            rec.e = rec.p - rec.rv
            errors[j] = rec.e
        next_offset = (st.offset + len(pending)) % T
        new_prev = st.prev_round_errors.copy()
        st.carry_error = float(new_prev[(next_offset - 1) % T])
        for j, e in enumerate(errors):
            new_prev[(st.offset + j) % T] = e
        st.prev_round_errors = new_prev
        st.integral = 0.0
        st.round_index += 1
        st.offset = next_offset
        st.current_round = []
        return errors

    # -- persistence ------------------------------------------------------

    def snapshot(self) -> str:
        """Versioned text record of the controller.

        Pending predictions of an unfinished round are included, so a
        session can be restored and finalized once real values arrive.
        """
        st = self.state
        lines = [
            f"{SNAPSHOT_TAG} {SNAPSHOT_VERSION}",
            f"period {st.period}",
            "gains " + " ".join(repr(g) for g in self.gains.as_tuple()),
            f"derivative {self.derivative}",
            f"initialized {int(st.initialized)}",
            f"round_index {st.round_index}",
            f"offset {st.offset}",
            f"integral {st.integral!r}",
            f"carry_error {st.carry_error!r}",
            "prev_round_errors " + " ".join(repr(float(e)) for e in st.prev_round_errors),
        ]
        for r in st.current_round:
            lines.append(
                f"pending {r.t} {r.k} {r.pv!r} {r.u!r} {r.p!r} "
                f"{r.e_lag!r} {r.e_lag_prev!r} {r.integral!r}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def restore(cls, text: str) -> "PidBooster":
        lines = text.splitlines()
        if not lines or lines[0] != f"{SNAPSHOT_TAG} {SNAPSHOT_VERSION}":
            raise FormatError(f"not a {SNAPSHOT_TAG} v{SNAPSHOT_VERSION} record")
        fields = {}
        pending = []
        for line in lines[1:]:
            key, _, value = line.partition(" ")
            if key == "pending":
                pending.append(value.split())
            else:
                fields[key] = value
        try:
            booster = cls(
                PidGains(*(float(x) for x in fields["gains"].split())),
                int(fields["period"]),
                fields["derivative"],
            )
            st = booster.state
            st.initialized = bool(int(fields["initialized"]))
            st.round_index = int(fields["round_index"])
            st.offset = int(fields["offset"])
            st.integral = float(fields["integral"])
            st.carry_error = float(fields["carry_error"])
            st.prev_round_errors = np.array([float(x) for x in fields["prev_round_errors"].split()])
            for item in pending:
                t, k = int(item[0]), int(item[1])
                pv, u, p, e1, e0, acc = (float(x) for x in item[2:8])
                st.current_round.append(
                    StepRecord(t, k, st.round_index, pv, u, p, e_lag=e1, e_lag_prev=e0, integral=acc)
                )
        except (KeyError, ValueError, IndexError) as exc:
            raise FormatError(f"bad booster snapshot: {exc}") from None
        if len(st.prev_round_errors) != st.period:
            raise FormatError("error vector length does not match period")
        booster.log = list(st.current_round)
        return booster

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.snapshot())

    @classmethod
    def load(cls, path: str | Path) -> "PidBooster":
        return cls.restore(Path(path).read_text())


def error_decomposition(rec: StepRecord, gains: PidGains) -> float:
    """Final error rebuilt from the raw model error minus the control terms."""
    if rec.rv is None:
        raise BoosterError("step has no real value yet")
    return (
        (rec.pv - rec.rv)
        - gains.kp * rec.e_lag
        - gains.ki * rec.integral
        - gains.kd * (rec.e_lag - rec.e_lag_prev)
    )
