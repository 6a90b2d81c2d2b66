"""Command line interface: ``pidboost <command> ...``.

Options may also come from a flat ``key=value`` config file given with
``--config``; explicit flags win over the file, the file wins over
built-in defaults. Errors are printed to stderr as one JSON object with an
``error`` category, and the exit status encodes the same category.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .booster import STRATEGIES, PidBooster, PidGains
from .engine import (
    ForecastRun,
    ForecastSession,
    collect_round_pairs,
    one_step_mae,
    run_backtest,
    run_batch_corrected,
)
from .errors import EXIT_CODES, ConfigError, PidBoostError
from .evaluation import (
    build_report,
    compute_metrics,
    dumps_report,
    file_sha256,
    histogram,
    json_safe,
    measure_ext,
    write_histogram_csv,
)
from .forecasters import BatchCorrector, LinearAR, SeasonalNaive, ShallowNet, load_model, save_model
from .series import LagWindowSpec, SplitSpec, format_timestamp, ingest_csv, split, write_csv
from .tuner import TuneSpec, tune

logger = logging.getLogger("pidboost")

DEFAULTS = {
    "period": 24,
    "horizon": None,
    "split": "0.8,0.1,0.1",
    "timestamp_col": "timestamp",
    "value_col": "value",
    "duplicates": "error",
    "unit": "",
    "lags": "1-5;23-25",
    "hidden": 8,
    "seed": 0,
    "max_epochs": 2000,
    "gains": "0,0,0",
    "init": "warmup",
    "derivative": "zero",
    "objective": "MAE",
    "kp_grid": "0.1:0.1:1.0",
    "ki_grid": "0.0001:0.0001:1.0",
    "kd_grid": "0.0001:0.0001:1.0",
    "patience": 50,
    "rounds": None,
    "bin_width": 1.0,
    "model_params": 0,
    "ext_reps": 0,
}

_INT_KEYS = {"period", "horizon", "hidden", "seed", "max_epochs", "patience", "rounds",
             "model_params", "ext_reps"}
_FLOAT_KEYS = {"bin_width"}


def read_config(path: str | Path) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment, dashes map to underscores."""
    config = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        config[key] = value
    return config


def _coerce(key: str, value):
    if value is None or value == "":
        return None if key in ("horizon", "rounds") else value
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    config = read_config(args.config) if args.config else {}
    for key, default in DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, _coerce(key, config.get(key, default)))
    return args


def _grid(text: str) -> tuple[float, float, float]:
    try:
        start, step, stop = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"grid must be start:step:max, got {text!r}") from None
    return start, step, stop


def _gains(text: str) -> PidGains:
    path = Path(text)
    if path.is_file():
        text = path.read_text().strip()
    return PidGains.parse(text)


def _load_series(args, path):
    return ingest_csv(path, args.timestamp_col, args.value_col, args.period,
                      unit_label=args.unit, duplicates=args.duplicates)


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


# -- commands ---------------------------------------------------------------

def cmd_ingest(args) -> None:
    series = _load_series(args, args.input)
    if args.out:
        write_csv(series, args.out)
    _emit({
        "length": len(series),
        "period": series.period,
        "interval_s": series.interval,
        "filled": [format_timestamp(series.timestamps[i]) for i in series.filled],
        "sha256": file_sha256(args.input),
    })


def cmd_fit(args) -> None:
    series = _load_series(args, args.series)
    train, validation, _ = split(series, SplitSpec.parse(args.split))
    lags = LagWindowSpec.parse(args.lags)
    if args.model == "spnn":
        if not args.base:
            raise ConfigError("--base MODEL is required to train the spnn corrector")
        base = load_model(args.base)
        horizon = args.horizon or series.period
        raw, real = collect_round_pairs(base, train.values, 0, len(train), horizon, series.period)
        model = BatchCorrector(horizon, args.hidden, seed=args.seed)
        report = model.fit(raw, real)
    else:
        if args.model == "seasonal-naive":
            model = SeasonalNaive(series.period)
        elif args.model == "linear-ar":
            model = LinearAR(lags)
        else:
            model = ShallowNet(lags, args.hidden, seed=args.seed, max_epochs=args.max_epochs)
        report = model.fit(train, validation)
    save_model(model, args.out)
    _emit({
        "model": model.name,
        "params": int(model.n_params),
        "final_loss": report.final_loss if np.isfinite(report.final_loss) else None,
        "epochs": report.epochs,
        "ridge_lambda": report.ridge_lambda,
        "note": report.note,
    })


def cmd_tune(args) -> None:
    series = _load_series(args, args.series)
    train, validation, _ = split(series, SplitSpec.parse(args.split))
    base = load_model(args.model)
    (kps, kpst, kpm), (kis, kist, kim), (kds, kdst, kdm) = (
        _grid(args.kp_grid), _grid(args.ki_grid), _grid(args.kd_grid))
    spec = TuneSpec(kp_start=kps, kp_step=kpst, kp_max=kpm, ki_start=kis, ki_step=kist,
                    ki_max=kim, kd_start=kds, kd_step=kdst, kd_max=kdm,
                    objective=args.objective, horizon=args.horizon, rounds=args.rounds,
                    patience=args.patience, strategy=args.init, derivative=args.derivative)
    result = tune(base, validation, spec, history=train.values)
    if args.trace:
        result.to_csv(args.trace)
    if args.out:
        Path(args.out).write_text(result.best.format() + "\n")
    _emit({
        "gains": list(result.best.as_tuple()),
        "objective": spec.objective,
        "value": result.best_objective,
        "evaluations": result.evaluations,
        "stopped_early": result.stopped_early,
    })


def cmd_predict(args) -> None:
    series = _load_series(args, args.series)
    base = load_model(args.model)
    T = series.period
    horizon = args.horizon or T
    values = np.asarray(series.values)
    if args.state and Path(args.state).is_file():
        booster = PidBooster.load(args.state)
        pending = len(booster.state.current_round)
        if pending:
            booster.finalize_round(values[len(values) - pending:])
        history = values
    else:
        booster = PidBooster(_gains(args.gains), T, args.derivative)
        if args.init == "warmup":
            booster.initialize("warmup", forecaster=base, history=values[:-T], reals=values[-T:])
        elif args.init == "train_mae":
            booster.initialize("train_mae", train_mae=one_step_mae(base, values))
        else:
            booster.initialize("zero")
        history = values
    session = ForecastSession(base, history, booster=booster, horizon=horizon)
    session.predict_round()
    step = series.interval or 0
    last = int(series.timestamps[-1])
    rows = [
        [r.t, format_timestamp(last + (i + 1) * step), repr(r.pv), repr(r.u), repr(r.p)]
        for i, r in enumerate(session.log)
    ]
    if args.out:
        with Path(args.out).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "timestamp", "pv", "u", "p"])
            writer.writerows(rows)
    if args.save_state:
        booster.save(args.save_state)
    _emit({"steps": len(rows), "gains": list(booster.gains.as_tuple()),
           "round_index": booster.state.round_index})


def _provenance(args, path, gains, strategy) -> dict:
    return {
        "dataset": Path(path).name,
        "dataset_sha256": file_sha256(path),
        "gains": list(gains.as_tuple()) if gains else None,
        "strategy": strategy,
        "version": __version__,
    }


def cmd_backtest(args) -> None:
    series = _load_series(args, args.series)
    splits = split(series, SplitSpec.parse(args.split))
    base = load_model(args.model)
    horizon = args.horizon or series.period
    gains = None if args.no_boost else _gains(args.gains)
    run = run_backtest(base, splits, gains, horizon, args.init, derivative=args.derivative)
    config = {
        "period": series.period, "horizon": horizon, "split": args.split,
        "init": args.init, "derivative": args.derivative, "bin_width": args.bin_width,
        "model": Path(args.model).name,
    }
    ext = None
    if args.ext_reps:
        ext = _measure(base, splits, gains, horizon, args.ext_reps)
    report = build_report(run, bin_width=args.bin_width, config=config,
                          provenance=_provenance(args, args.series, gains, args.init), ext=ext)
    if args.baseline:
        plain = run_backtest(base, splits, None, horizon, args.init)
        report["baseline"] = _clean_metrics(plain)
    if args.corrector:
        corrector = load_model(args.corrector)
        batch = run_batch_corrected(base, corrector, splits, horizon)
        report["batch_corrected"] = _clean_metrics(batch)
    if args.run_out:
        run.to_csv(args.run_out)
    text = dumps_report(report)
    if args.report_out:
        Path(args.report_out).write_text(text)
    if args.hist_out:
        write_histogram_csv(histogram(np.abs(run.column("e", True)), args.bin_width), args.hist_out)
    m = compute_metrics(run)
    _emit({"mae": m.mae, "std": m.std, "mape": m.mape, "scored_steps": m.n_scored,
           **({"baseline_mape": report["baseline"]["mape"]} if args.baseline else {})})


def _clean_metrics(run) -> dict:
    return json_safe(asdict(compute_metrics(run)))


def _measure(base, splits, gains, horizon, reps):
    train, validation, test = splits
    history = np.concatenate([train.values, validation.values])
    T = test.period

    def factory():
        booster = None
        if gains is not None:
            booster = PidBooster(gains, T).initialize("zero")
        return ForecastSession(base, history, booster=booster, horizon=horizon, period=T)

    return measure_ext(factory, reps)


def cmd_report(args) -> None:
    gains = _gains(args.gains) if args.boosted else None
    run = ForecastRun.from_csv(args.run, args.period, args.horizon)
    run.gains = gains
    run.model_params = args.model_params
    report = build_report(run, bin_width=args.bin_width,
                          config={"period": args.period, "bin_width": args.bin_width},
                          provenance={"run": Path(args.run).name, "run_sha256": file_sha256(args.run)})
    text = dumps_report(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.hist_out:
        write_histogram_csv(histogram(np.abs(run.column("e", True)), args.bin_width), args.hist_out)


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file overriding defaults")
    common.add_argument("--period", type=int, help="steps per cycle (default 24)")
    common.add_argument("--horizon", type=int, help="steps per round (default: period)")
    common.add_argument("--split", help="train,validation,test fractions (default 0.8,0.1,0.1)")
    common.add_argument("--timestamp-col", dest="timestamp_col")
    common.add_argument("--value-col", dest="value_col")
    common.add_argument("--duplicates", choices=("error", "first", "mean"))
    common.add_argument("--unit")
    common.add_argument("--log-level", default="WARNING")

    booster_opts = argparse.ArgumentParser(add_help=False)
    booster_opts.add_argument("--gains", help="kp,ki,kd or a file holding them")
    booster_opts.add_argument("--init", choices=STRATEGIES)
    booster_opts.add_argument("--derivative", choices=("zero", "carry"))

    parser = argparse.ArgumentParser(prog="pidboost", description="PID correction of iterated multi-step forecasts.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate and normalise a CSV series")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", parents=[common], help="fit a base forecaster or spnn corrector")
    p.add_argument("series")
    p.add_argument("--model", choices=("seasonal-naive", "linear-ar", "shallow-net", "spnn"),
                   default="linear-ar")
    p.add_argument("--lags", help="lag sets, e.g. '1-5;23-25'")
    p.add_argument("--hidden", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--base", help="fitted base model (for --model spnn)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tune", parents=[common, booster_opts], help="grid-search booster gains")
    p.add_argument("series")
    p.add_argument("--model", required=True)
    p.add_argument("--objective", choices=("MAE", "MAPE"))
    p.add_argument("--kp-grid", dest="kp_grid")
    p.add_argument("--ki-grid", dest="ki_grid")
    p.add_argument("--kd-grid", dest="kd_grid")
    p.add_argument("--patience", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--trace")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("predict", parents=[common, booster_opts], help="forecast the next round")
    p.add_argument("series")
    p.add_argument("--model", required=True)
    p.add_argument("--state", help="resume from a saved booster state")
    p.add_argument("--save-state", dest="save_state")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("backtest", parents=[common, booster_opts], help="round-by-round test-split backtest")
    p.add_argument("series")
    p.add_argument("--model", required=True)
    p.add_argument("--no-boost", action="store_true")
    p.add_argument("--baseline", action="store_true", help="also report the unboosted run")
    p.add_argument("--corrector", help="fitted spnn corrector to compare against")
    p.add_argument("--bin-width", dest="bin_width", type=float)
    p.add_argument("--ext-reps", dest="ext_reps", type=int,
                   help="time predict_round this many times (adds wall-clock, non-deterministic)")
    p.add_argument("--run-out")
    p.add_argument("--report-out")
    p.add_argument("--hist-out")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("report", parents=[common], help="metrics report from a run log CSV")
    p.add_argument("run")
    p.add_argument("--boosted", action="store_true")
    p.add_argument("--gains")
    p.add_argument("--model-params", dest="model_params", type=int)
    p.add_argument("--bin-width", dest="bin_width", type=float)
    p.add_argument("--out")
    p.add_argument("--hist-out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolve(args)
        args.func(args)
    except PidBoostError as exc:
        sys.stderr.write(json.dumps({"error": exc.category, "message": str(exc)}) + "\n")
        return EXIT_CODES[exc.category]
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io", "message": str(exc)}) + "\n")
        return EXIT_CODES["io"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
