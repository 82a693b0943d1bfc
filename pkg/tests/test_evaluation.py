import datetime as dt
import io
import math

import numpy as np
import pytest

from kgcast.errors import ConfigurationError, CoverageError, UndefinedMetricError
from kgcast.evaluation import (
    PredictionRecord,
    baseline_forecast,
    baselines,
    mae,
    metric_report,
    read_predictions,
    smape,
    smape_term,
    smoothed_curve,
    write_curves,
    write_metrics,
    write_predictions,
)
from oracles import fraction_mae, fraction_smape

D0 = dt.date(2020, 6, 1)


def rec(actual, predicted, day=0, horizon=7, loc="A"):
    return PredictionRecord(D0 + dt.timedelta(days=day), horizon, loc, "cases", predicted, actual)


def random_records(seed, n=200):
    rng = np.random.default_rng(seed)
    actual = rng.choice([0.0, 1.0], size=n) * rng.gamma(2.0, 50.0, size=n)
    predicted = np.where(rng.random(n) < 0.1, 0.0, rng.gamma(2.0, 50.0, size=n))
    days = rng.integers(0, 20, size=n)
    return [rec(float(a), float(p), int(d), loc=f"L{k % 4}") for k, (a, p, d) in enumerate(zip(actual, predicted, days))]


def test_mae_examples():
    assert mae([rec(5.0, 5.0), rec(7.0, 7.0)]) == 0.0
    assert mae([rec(100.0, 110.0)]) == 10.0
    with pytest.raises(UndefinedMetricError):
        mae([])
    with pytest.raises(UndefinedMetricError):
        smape([rec(None, 3.0)])


def test_smape_examples():
    assert smape([rec(100.0, 110.0)]) == pytest.approx(10 / 210)
    assert smape_term(0.0, 0.0) == 0.0
    assert smape([rec(0.0, 0.0), rec(0.0, 5.0)]) == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_metrics_equal_fraction_oracles_exactly(seed):
    records = random_records(seed)
    pairs = [(r.actual, r.predicted) for r in records]
    assert mae(records) == fraction_mae(pairs)
    assert smape(records) == fraction_smape(pairs)
    assert 0.0 <= smape(records) <= 1.0


def test_metrics_are_permutation_invariant():
    records = random_records(7)
    shuffled = [records[i] for i in np.random.default_rng(0).permutation(len(records))]
    assert mae(records) == mae(shuffled)
    assert smape(records) == smape(shuffled)


def test_scaling():
    records = random_records(8)
    scaled = [rec(r.actual * 4.0, r.predicted * 4.0, (r.cutoff - D0).days) for r in records]
    assert mae(scaled) == 4.0 * mae(records)
    assert smape(scaled) == smape(records)


def test_curve_examples():
    single = [rec(1.0, 3.0), rec(2.0, 2.0)]
    assert smoothed_curve(single) == [(D0, mae(single))]
    two = [rec(0.0, 10.0, 0), rec(0.0, 20.0, 1)]
    assert [v for _, v in smoothed_curve(two)] == [10.0, 15.0]
    records = random_records(9)
    for metric, fn in (("mae", mae), ("smape", smape)):
        assert smoothed_curve(records, metric)[-1][1] == fn(records)


def test_baseline_examples():
    const = [4.0] * 20
    assert set(baselines(const, 7).values()) == {4.0}
    weekly = [float(k % 7) for k in range(40)]
    # the value at position n - 1 + 7 is weekly[(n - 1) % 7]
    errors = [abs(baseline_forecast(weekly[:n], 7, "seasonal_naive_7") - weekly[n - 1 + 7])
              for n in range(7, 33)]
    assert max(errors) == 0.0
    ramp = [float(k) for k in range(40)]
    errs = [abs(baseline_forecast(ramp[:n], 7, "persistence") - ramp[n - 1 + 7]) for n in range(7, 33)]
    assert set(errs) == {7.0}


def test_seasonal_naive_other_horizons():
    weekly = [float(k % 7) for k in range(40)]
    for h in (1, 3, 14):
        n = 20
        assert baseline_forecast(weekly[:n], h, "seasonal_naive_7") == weekly[n - 1 + h]


def test_baseline_errors():
    with pytest.raises(CoverageError):
        baseline_forecast([1.0] * 6, 1, "moving_average_7")
    with pytest.raises(CoverageError):
        baseline_forecast([], 1, "persistence")
    with pytest.raises(ConfigurationError):
        baseline_forecast([1.0] * 8, 1, "arima")


def test_prediction_file_round_trip():
    records = random_records(10, n=30) + [rec(None, 4.5, 3)]
    buf = io.StringIO()
    write_predictions(records, buf)
    assert buf.getvalue().splitlines()[0] == "cutoff_date,horizon,location,target,predicted,actual"
    buf.seek(0)
    assert read_predictions(buf) == records


def test_report_files():
    records = random_records(11, n=40) + [rec(3.0, 1.0, 2, horizon=14)]
    report = metric_report(records)
    assert sorted(report) == [7, 14]
    out = io.StringIO()
    write_metrics(report, out)
    lines = out.getvalue().splitlines()
    assert lines[0] == "horizon,metric,value" and len(lines) == 5
    curves = io.StringIO()
    write_curves(records, curves)
    rows = [line.split(",") for line in curves.getvalue().splitlines()[1:]]
    last_mae7 = [r for r in rows if r[1] == "mae_h7"][-1]
    assert float(last_mae7[2]) == report[7]["mae"]
    assert math.isfinite(float(rows[-1][2]))
