"""Accuracy and complexity metrics for forecast runs."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .engine import ForecastRun

BOOSTER_PARAMS = 3


@dataclass(frozen=True)
class Metrics:
    mae: float
    std: float
    mape: float
    n_scored: int
    mape_excluded: int = 0


def compute_metrics(run: ForecastRun, *, abs_std: bool = False) -> Metrics:
    """MAE, standard deviation and MAPE over the scored steps of ``run``.

    ``std`` is the population standard deviation of the signed error
    (of ``|e|`` when ``abs_std``). Steps with a zero real value are left out
    of the MAPE and counted in ``mape_excluded``.
    """
    e = run.column("e", scored_only=True)
    rv = run.column("rv", scored_only=True)
    return metrics_from_errors(e, rv, abs_std=abs_std)


def metrics_from_errors(e: Sequence[float], rv: Sequence[float], *, abs_std: bool = False) -> Metrics:
    e = np.asarray(e, dtype=np.float64)
    rv = np.asarray(rv, dtype=np.float64)
    if len(e) == 0:
        raise DataError("no scored steps")
    abs_e = np.abs(e)
    mae = float(np.mean(abs_e))
    std = float(np.std(abs_e if abs_std else e))
    nonzero = rv != 0.0
    excluded = int(len(rv) - nonzero.sum())
    mape = float(100.0 * np.mean(abs_e[nonzero] / np.abs(rv[nonzero]))) if nonzero.any() else math.nan
    return Metrics(mae, std, mape, len(e), excluded)


@dataclass(frozen=True)
class AicInput:
    """Parameter count ``w``, scored sample size ``n`` and residual sum of squares."""

    w: int
    n: int
    rss: float

    def __post_init__(self) -> None:
        if self.w < 0:
            raise ConfigError(f"w must be non-negative, got {self.w}")
        if self.n <= self.w + 1:
            raise ConfigError(f"AIC needs n > w + 1 (n={self.n}, w={self.w})")
        if not (self.rss >= 0.0 and math.isfinite(self.rss)):
            raise ConfigError(f"rss must be finite and non-negative, got {self.rss}")


def compute_aic(inp: AicInput) -> float:
    """Small-sample corrected Akaike criterion.

    ``n*ln(rss/n) + 2w + 2w(w+1)/(n-w-1)``; a zero ``rss`` returns ``-inf``.
    """
    if inp.rss == 0.0:
        return -math.inf
    n, w = inp.n, inp.w
    return n * math.log(inp.rss / n) + 2 * w + 2 * w * (w + 1) / (n - w - 1)


def aic_input(run: ForecastRun) -> AicInput:
    """Build the AIC inputs for a run; an active booster adds three parameters."""
    e = run.column("e", scored_only=True)
    w = run.model_params + (BOOSTER_PARAMS if run.boosted else 0)
    return AicInput(w=w, n=len(e), rss=float(np.sum(e**2)))


@dataclass(frozen=True)
class ExtResult:
    mean_ms: float
    std_ms: float
    repetitions: int


def measure_ext(session_factory: Callable[[], object], repetitions: int = 1000) -> ExtResult:
    """Mean wall-clock of one ``predict_round`` call, in milliseconds.

    A fresh session is built for every repetition; only the prediction
    round is timed.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    samples = np.empty(repetitions)
    for i in range(repetitions):
        session = session_factory()
        start = time.perf_counter()
        session.predict_round()
        samples[i] = (time.perf_counter() - start) * 1e3
    return ExtResult(float(samples.mean()), float(samples.std()), repetitions)


@dataclass(frozen=True)
class HistogramBin:
    lower: float
    upper: float
    count: int


def histogram(abs_errors: Sequence[float], bin_width: float = 1.0) -> list[HistogramBin]:
    """Counts of ``abs_errors`` in right-open bins ``[i*w, (i+1)*w)`` from zero."""
    if not bin_width > 0:
        raise ConfigError(f"bin width must be positive, got {bin_width}")
    values = np.asarray(abs_errors, dtype=np.float64)
    if len(values) == 0:
        return []
    if (values < 0).any() or not np.isfinite(values).all():
        raise DataError("histogram expects finite non-negative values")
    idx = np.floor(values / bin_width).astype(np.int64)
    # snap quotient rounding onto the i*w edges
    idx[values < idx * bin_width] -= 1
    idx[values >= (idx + 1) * bin_width] += 1
    counts = np.bincount(idx)
    return [HistogramBin(i * bin_width, (i + 1) * bin_width, int(c)) for i, c in enumerate(counts)]


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def json_safe(value):
    """Replace non-finite floats so the value serialises as strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value


def build_report(run: ForecastRun, *, bin_width: float = 1.0, config: dict | None = None,
                 provenance: dict | None = None, ext: ExtResult | None = None) -> dict:
    """Assemble the JSON-ready report of a run."""
    metrics = compute_metrics(run)
    e = run.column("e", scored_only=True)
    try:
        aic_in = aic_input(run)
        aic = {"value": compute_aic(aic_in), "w": aic_in.w, "n": aic_in.n, "rss": aic_in.rss}
    except ConfigError as exc:
        # too many parameters for the scored sample; the criterion is undefined
        aic = {"value": None, "note": str(exc)}
    report = {
        "metrics": asdict(metrics),
        "aic": aic,
        "histogram": {
            "bin_width": bin_width,
            "bins": [asdict(b) for b in histogram(np.abs(e), bin_width)],
        },
        "run": {
            "model": run.model_name,
            "model_params": run.model_params,
            "boosted": run.boosted,
            "gains": list(run.gains.as_tuple()) if run.gains else None,
            "strategy": run.strategy,
            "period": run.period,
            "horizon": run.horizon,
            "steps": len(run.records),
            "scored_steps": metrics.n_scored,
        },
        "config": config or {},
        "provenance": provenance or {},
    }
    if ext is not None:
        report["ext_ms"] = asdict(ext)
    return json_safe(report)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_histogram_csv(bins: Sequence[HistogramBin], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lower", "upper", "count"])
        for b in bins:
            writer.writerow([repr(b.lower), repr(b.upper), b.count])
