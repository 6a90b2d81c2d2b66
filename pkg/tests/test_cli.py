import json
import subprocess
import sys

import numpy as np
import pytest

from pidboost.booster import PidBooster
from pidboost.cli import main, read_config
from pidboost.errors import ConfigError
from pidboost.series import ingest_csv, write_csv

from conftest import make_series, periodic_values

T = 12


@pytest.fixture
def csv_path(tmp_path):
    values = periodic_values(T, 40, noise=0.4, seed=5) + 1.5 * np.sin(np.arange(T * 40) / 50)
    path = tmp_path / "load.csv"
    write_csv(make_series(values, T), path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def fit_model(capsys, csv_path, tmp_path, kind="linear-ar"):
    model = tmp_path / f"{kind}.model"
    code, out, _ = run(capsys, "fit", csv_path, "--period", T, "--model", kind,
                       "--lags", "1-2;11-13", "--out", model)
    assert code == 0, out
    return model


class TestCommands:
    def test_ingest(self, capsys, csv_path, tmp_path):
        out_csv = tmp_path / "norm.csv"
        code, out, _ = run(capsys, "ingest", csv_path, "--period", T, "--out", out_csv)
        info = json.loads(out)
        assert code == 0 and info["length"] == 480 and info["interval_s"] == 3600
        assert out_csv.read_bytes() == csv_path.read_bytes()

    @pytest.mark.parametrize("kind", ["seasonal-naive", "linear-ar", "shallow-net"])
    def test_fit(self, capsys, csv_path, tmp_path, kind):
        model = tmp_path / "m.txt"
        extra = ["--max-epochs", 50] if kind == "shallow-net" else []
        code, out, _ = run(capsys, "fit", csv_path, "--period", T, "--model", kind,
                           "--lags", "1-2;11-13", "--out", model, *extra)
        assert code == 0
        assert model.read_text().startswith("pidboost-model 1")
        assert json.loads(out)["params"] == {"seasonal-naive": 0, "linear-ar": 6, "shallow-net": 57}[kind]

    def test_spnn_needs_base(self, capsys, csv_path, tmp_path):
        code, _, err = run(capsys, "fit", csv_path, "--period", T, "--model", "spnn",
                           "--out", tmp_path / "c.txt")
        assert code == 4 and json.loads(err)["error"] == "config"

    def test_tune_then_backtest(self, capsys, csv_path, tmp_path):
        model = fit_model(capsys, csv_path, tmp_path)
        gains_file, trace = tmp_path / "gains.txt", tmp_path / "trace.csv"
        code, out, _ = run(capsys, "tune", csv_path, "--period", T, "--model", model,
                           "--patience", 5, "--out", gains_file, "--trace", trace)
        assert code == 0
        tuned = json.loads(out)
        assert len(trace.read_text().splitlines()) == tuned["evaluations"] + 1
        report = tmp_path / "report.json"
        code, out, _ = run(capsys, "backtest", csv_path, "--period", T, "--model", model,
                           "--gains", gains_file, "--baseline", "--report-out", report)
        assert code == 0
        body = json.loads(report.read_text())
        assert body["run"]["gains"] == tuned["gains"]
        assert "baseline" in body and "ext_ms" not in body

    def test_backtest_and_report_agree(self, capsys, csv_path, tmp_path):
        model = fit_model(capsys, csv_path, tmp_path)
        runlog, report = tmp_path / "run.csv", tmp_path / "r.json"
        code, out, _ = run(capsys, "backtest", csv_path, "--period", T, "--model", model,
                           "--gains", "0.4,0.01,0.001", "--run-out", runlog, "--report-out", report)
        assert code == 0
        code, out, _ = run(capsys, "report", runlog, "--period", T, "--boosted",
                           "--gains", "0.4,0.01,0.001", "--model-params", 6)
        assert code == 0
        a, b = json.loads(report.read_text()), json.loads(out)
        assert a["metrics"] == b["metrics"] and a["aic"] == b["aic"]

    def test_backtest_with_corrector(self, capsys, csv_path, tmp_path):
        model = fit_model(capsys, csv_path, tmp_path)
        corrector = tmp_path / "spnn.txt"
        code, _, _ = run(capsys, "fit", csv_path, "--period", T, "--model", "spnn",
                         "--base", model, "--hidden", 6, "--out", corrector)
        assert code == 0
        report = tmp_path / "r.json"
        code, _, _ = run(capsys, "backtest", csv_path, "--period", T, "--model", model,
                         "--corrector", corrector, "--report-out", report, "--ext-reps", 3)
        body = json.loads(report.read_text())
        assert code == 0 and "batch_corrected" in body and body["ext_ms"]["repetitions"] == 3

    def test_predict_and_resume(self, capsys, csv_path, tmp_path):
        model = fit_model(capsys, csv_path, tmp_path)
        series = ingest_csv(csv_path, period=T)
        head = tmp_path / "head.csv"
        write_csv(series.slice(0, len(series) - T), head)
        state, out_csv = tmp_path / "state.txt", tmp_path / "pred.csv"
        code, out, _ = run(capsys, "predict", head, "--period", T, "--model", model,
                           "--gains", "0.4,0.01,0.001", "--save-state", state, "--out", out_csv)
        assert code == 0 and json.loads(out)["steps"] == T
        rows = out_csv.read_text().splitlines()
        assert rows[0] == "t,timestamp,pv,u,p" and len(rows) == T + 1
        assert len(PidBooster.load(state).state.current_round) == T
        code, out, _ = run(capsys, "predict", csv_path, "--period", T, "--model", model,
                           "--state", state, "--save-state", state)
        assert code == 0 and json.loads(out)["round_index"] == 1


class TestConfig:
    def test_file_and_flag_precedence(self, capsys, csv_path, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# settings\nperiod = 7\nsplit=0.6,0.2,0.2\n")
        code, out, _ = run(capsys, "ingest", csv_path, "--config", cfg)
        assert code == 0 and json.loads(out)["period"] == 7
        code, out, _ = run(capsys, "ingest", csv_path, "--config", cfg, "--period", T)
        assert json.loads(out)["period"] == T

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour=blue\n")
        with pytest.raises(ConfigError, match="unknown key"):
            read_config(cfg)

    def test_dashes_map_to_underscores(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("bin-width = 0.5\n")
        assert read_config(cfg) == {"bin_width": "0.5"}


class TestErrors:
    @pytest.mark.parametrize("argv,code,category", [
        (["ingest", "{missing}"], 8, "io"),
        (["backtest", "{csv}", "--model", "{missing}"], 8, "io"),
        (["backtest", "{csv}", "--model", "{csv}"], 7, "format"),
        (["ingest", "{csv}", "--split", "0.5,0.5,0.5"], 0, None),
        (["fit", "{csv}", "--split", "0.5,0.5,0.5", "--out", "{tmp}/m"], 4, "config"),
        (["ingest", "{csv}", "--value-col", "nope"], 3, "data"),
        (["backtest", "{csv}", "--model", "{model}", "--gains", "2,0,0"], 4, "config"),
    ])
    def test_exit_codes(self, capsys, csv_path, tmp_path, argv, code, category):
        model = fit_model(capsys, csv_path, tmp_path)
        subs = {"csv": csv_path, "missing": tmp_path / "none.csv", "tmp": tmp_path, "model": model}
        got, _, err = run(capsys, *[a.format(**subs) for a in argv])
        assert got == code
        if category:
            payload = json.loads(err)
            assert payload["error"] == category and payload["message"]

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["backtest"])
        assert exc.value.code == 2

    def test_console_script(self, csv_path):
        proc = subprocess.run([sys.executable, "-m", "pidboost.cli", "ingest", str(csv_path),
                               "--period", str(T)], capture_output=True, text=True)
        assert proc.returncode == 0 and json.loads(proc.stdout)["length"] == 480
