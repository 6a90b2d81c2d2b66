"""PID correction for iterated multi-step forecasts of periodic series."""

from .booster import PidBooster, PidGains, StepRecord
from .engine import ForecastRun, ForecastSession, run_backtest, run_window
from .evaluation import AicInput, compute_aic, compute_metrics, histogram
from .forecasters import BatchCorrector, LinearAR, SeasonalNaive, ShallowNet, load_model, save_model
from .series import LagWindowSpec, Series, SplitSpec, build_features, ingest_csv, split, write_csv
from .tuner import TuneSpec, tune

__version__ = "0.1.0"

__all__ = [
    "AicInput", "BatchCorrector", "ForecastRun", "ForecastSession", "LagWindowSpec",
    "LinearAR", "PidBooster", "PidGains", "SeasonalNaive", "Series", "ShallowNet",
    "SplitSpec", "StepRecord", "TuneSpec", "build_features", "compute_aic",
    "compute_metrics", "histogram", "ingest_csv", "load_model", "run_backtest",
    "run_window", "save_model", "split", "tune", "write_csv",
]
