import numpy as np
import pytest

from pidboost.booster import PidBooster, PidGains
from pidboost.engine import (
    ForecastRun,
    ForecastSession,
    boosted_steps_consistent,
    collect_round_pairs,
    plan_rounds,
    run_backtest,
    run_batch_corrected,
    run_window,
)
from pidboost.errors import BoosterError, DataError
from pidboost.forecasters import BatchCorrector, LinearAR, SeasonalNaive
from pidboost.series import LagWindowSpec, SplitSpec, split

from conftest import Offset, make_series, periodic_values


class TestSession:
    def test_exact_forecaster_predicts_next_cycle(self):
        T = 12
        values = periodic_values(T, 3)
        s = ForecastSession(SeasonalNaive(T), values[: 2 * T], period=T)
        np.testing.assert_array_equal(s.predict_round(), values[2 * T :])

    def test_seasonal_naive_repeats_last_cycle(self):
        T = 5
        history = np.arange(15, dtype=float)
        s = ForecastSession(SeasonalNaive(T), history, period=T)
        np.testing.assert_array_equal(s.predict_round(), history[-T:])

    def test_observe_round_mae(self):
        s = ForecastSession(SeasonalNaive(2), [10.0, 10.0], period=2)
        s.predict_round()
        summary = s.observe_round([11.0, 9.0])
        np.testing.assert_array_equal(summary.errors, [-1.0, 1.0])
        assert summary.mae == 1.0

    def test_predictions_are_written_back(self):
        model = LinearAR(LagWindowSpec(((1,),)))
        model.set_params([0.5, 1.0])
        booster = PidBooster(PidGains(0.3, 0.0, 0.0), 4).initialize("zero")
        booster.state.prev_round_errors = np.array([1.0, -2.0, 0.5, 4.0])
        s = ForecastSession(model, [8.0], booster=booster)
        p = s.predict_round()
        recs = s.log
        assert recs[0].pv == 0.5 * 8.0 + 1.0
        for k in range(1, 4):
            # lag one reads the corrected prediction of the step before
            assert recs[k].pv == pytest.approx(0.5 * p[k - 1] + 1.0, abs=1e-14)
        np.testing.assert_array_equal(s.buffer[1:], p)

    def test_reals_replace_predictions(self):
        s = ForecastSession(SeasonalNaive(2), [1.0, 2.0], period=2)
        s.predict_round()
        s.observe_round([5.0, 6.0])
        np.testing.assert_array_equal(s.buffer, [1.0, 2.0, 5.0, 6.0])
        np.testing.assert_array_equal(s.predict_round(), [5.0, 6.0])

    def test_buffer_is_read_only(self):
        s = ForecastSession(SeasonalNaive(2), [1.0, 2.0], period=2)
        with pytest.raises(ValueError):
            s.buffer[0] = 3.0

    def test_pending_round_guards(self):
        s = ForecastSession(SeasonalNaive(2), [1.0, 2.0], period=2)
        with pytest.raises(BoosterError):
            s.observe_round([1.0, 2.0])
        s.predict_round()
        with pytest.raises(BoosterError):
            s.predict_round()
        with pytest.raises(BoosterError):
            s.observe_round([1.0])

    def test_short_history(self):
        with pytest.raises(DataError):
            ForecastSession(SeasonalNaive(4), [1.0, 2.0], period=4)

    def test_growth_beyond_initial_buffer(self):
        T = 3
        s = ForecastSession(SeasonalNaive(T), [1.0, 2.0, 3.0], period=T)
        for _ in range(50):
            s.predict_round()
            s.observe_round([1.0, 2.0, 3.0])
        assert len(s.buffer) == 3 + 150


class TestPlan:
    def test_alignment_and_warmup(self):
        first, segs = plan_rounds(100, 10, 100, 24, 24, "warmup")
        assert first == 24
        assert segs == [(24, 24, True), (48, 24, False), (72, 24, False)]

    def test_trailing_partial_round_dropped(self):
        _, segs = plan_rounds(100, 0, 100, 24, 24, "zero")
        assert [s[0] for s in segs] == [0, 24, 48, 72]
        _, segs = plan_rounds(95, 0, 95, 24, 24, "zero")
        assert [s[0] for s in segs] == [0, 24, 48]

    def test_too_short(self):
        with pytest.raises(DataError):
            plan_rounds(48, 24, 48, 24, 24, "warmup")


class TestRunWindow:
    def test_biased_predictor_halves_error(self):
        T, b = 8, 3.0
        values = periodic_values(T, 5)
        run = run_window(Offset(SeasonalNaive(T), b), values, T, len(values), period=T,
                         gains=PidGains(0.5, 0.0, 0.0), strategy="zero")
        e = run.column("e")
        np.testing.assert_allclose(e[:T], b, atol=1e-12)
        np.testing.assert_allclose(e[T : 2 * T], b / 2, atol=1e-12)
        np.testing.assert_allclose(e[2 * T : 3 * T], b * 0.75, atol=1e-12)

    def test_zero_gains_match_unboosted(self):
        T = 6
        values = periodic_values(T, 8, noise=0.5)
        base = Offset(SeasonalNaive(T), 1.0)
        boosted = run_window(base, values, 2 * T, len(values), period=T, gains=PidGains(0, 0, 0))
        plain = run_window(base, values, 2 * T, len(values), period=T, gains=None)
        np.testing.assert_array_equal(boosted.column("p"), plain.column("p"))
        np.testing.assert_array_equal(boosted.column("e", True), plain.column("e", True))
        assert boosted.boosted and not plain.boosted

    def test_steps_consistent(self):
        T = 6
        values = periodic_values(T, 8, noise=0.5)
        run = run_window(Offset(SeasonalNaive(T), 1.0), values, 2 * T, len(values), period=T,
                         gains=PidGains(0.4, 0.01, 0.001))
        assert boosted_steps_consistent(run)

    def test_max_rounds(self):
        T = 4
        values = periodic_values(T, 10)
        run = run_window(SeasonalNaive(T), values, T, len(values), period=T,
                         gains=PidGains(0.1), max_rounds=2)
        assert len(run.scored()) == 2 * T

    def test_horizon_shorter_than_period(self):
        T, h, b = 6, 4, 2.0
        values = periodic_values(T, 8)
        run = run_window(Offset(SeasonalNaive(T), b), values, T, len(values), period=T,
                         gains=PidGains(0.5), horizon=h, strategy="zero")
        assert len(run.scored()) % h == 0
        # steps still look up the error one period earlier
        e = run.column("e")
        np.testing.assert_allclose(e[:T], b, atol=1e-12)
        np.testing.assert_allclose(e[T : 2 * T], b / 2, atol=1e-12)


def splits_for(values, period, fractions="0.4,0.1,0.5"):
    return split(make_series(values, period), SplitSpec.parse(fractions))


class TestBacktest:
    def test_two_period_test_split(self):
        T = 10
        values = periodic_values(T, 10, noise=0.2)
        train, val, test = splits_for(values, T, "0.7,0.1,0.2")
        assert len(test) == 2 * T
        run = run_backtest(SeasonalNaive(T), (train, val, test), PidGains(0.4, 0.01, 0.001))
        assert len(run.records) == 2 * T
        assert len(run.scored()) == T

    def test_deterministic(self):
        T = 8
        values = periodic_values(T, 20, noise=0.4, seed=3)
        sp = splits_for(values, T)
        runs = [run_backtest(Offset(SeasonalNaive(T), 0.7), sp, PidGains(0.4, 0.01, 0.001))
                for _ in range(2)]
        np.testing.assert_array_equal(runs[0].column("p"), runs[1].column("p"))

    @pytest.mark.parametrize("strategy", ["zero", "train_mae", "warmup"])
    def test_strategies_run(self, strategy):
        T = 8
        values = periodic_values(T, 20, noise=0.4)
        run = run_backtest(Offset(SeasonalNaive(T), 0.7), splits_for(values, T),
                           PidGains(0.4, 0.01, 0.001), strategy=strategy)
        assert run.strategy == strategy
        assert np.isfinite(run.column("e", True)).all()

    def test_csv_roundtrip(self, tmp_path):
        T = 8
        values = periodic_values(T, 20, noise=0.4)
        run = run_backtest(Offset(SeasonalNaive(T), 0.7), splits_for(values, T), PidGains(0.3))
        run.to_csv(tmp_path / "run.csv")
        back = ForecastRun.from_csv(tmp_path / "run.csv", T)
        for name in ("t", "pv", "u", "p", "rv", "e"):
            np.testing.assert_array_equal(back.column(name), run.column(name))
        assert [r.scored for r in back.records] == [r.scored for r in run.records]


class TestBatchCorrected:
    def test_round_pairs_shape(self):
        T = 6
        values = periodic_values(T, 10)
        raw, real = collect_round_pairs(SeasonalNaive(T), values, 0, 60, T, T)
        assert raw.shape == real.shape == (9, T)
        np.testing.assert_array_equal(raw, real)

    def test_corrector_removes_bias(self):
        T = 6
        values = periodic_values(T, 30, noise=0.1)
        base = Offset(SeasonalNaive(T), 2.0)
        train, val, test = sp = splits_for(values, T)
        raw, real = collect_round_pairs(base, np.concatenate([train.values, val.values]),
                                        0, len(train) + len(val), T, T)
        corrector = BatchCorrector(T, 8, seed=1)
        corrector.fit(raw, real)
        run = run_batch_corrected(base, corrector, sp)
        plain = run_backtest(base, sp, None, strategy="zero")
        assert np.mean(np.abs(run.column("e"))) < np.mean(np.abs(plain.column("e", True)))
        assert run.model_params == corrector.n_params
