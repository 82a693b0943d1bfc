"""Forecast metrics, cumulative error curves, naive baselines and report files."""

from __future__ import annotations

import csv
import datetime as dt
import math
import statistics
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .errors import ConfigurationError, CoverageError, ParseError, UndefinedMetricError

PREDICTION_HEADER = ["cutoff_date", "horizon", "location", "target", "predicted", "actual"]
METRIC_HEADER = ["horizon", "metric", "value"]
CURVE_HEADER = ["date", "metric", "value"]
BASELINES = ("persistence", "seasonal_naive_7", "moving_average_7")


@dataclass(frozen=True)
class PredictionRecord:
    cutoff: dt.date
    horizon: int
    location: str
    target: str
    predicted: float
    actual: Optional[float]


def _scored(records):
    records = [r for r in records if r.actual is not None]
    if not records:
        raise UndefinedMetricError("metric over an empty record set")
    return records


# Metrics are accumulated in exact rational arithmetic and rounded once, so
# the result does not depend on record order.


def _exact_mean(terms):
    terms = list(terms)
    return float(sum(terms, Fraction(0)) / len(terms))


def mae(records):
    """Mean absolute error over all records."""
    return _exact_mean(abs(Fraction(r.actual) - Fraction(r.predicted)) for r in _scored(records))


def _smape_fraction(actual, predicted):
    a, p = Fraction(actual), Fraction(predicted)
    denom = abs(a + p)
    if denom == 0:
        return Fraction(0)
    return abs(a - p) / denom


def smape_term(actual, predicted):
    return float(_smape_fraction(actual, predicted))


def smape(records):
    """Mean of |y - yhat| / |y + yhat|; a 0/0 term counts as 0."""
    return _exact_mean(_smape_fraction(r.actual, r.predicted) for r in _scored(records))


METRICS = {"mae": mae, "smape": smape}


def smoothed_curve(records, metric="mae"):
    """[(date, metric over records with cutoff <= date)] for each distinct cutoff."""
    fn = METRICS[metric]
    records = _scored(records)
    out = []
    for d in sorted({r.cutoff for r in records}):
        out.append((d, fn([r for r in records if r.cutoff <= d])))
    return out


def metric_report(records):
    """{horizon: {"mae": .., "smape": ..}}."""
    by_h = {}
    for r in _scored(records):
        by_h.setdefault(r.horizon, []).append(r)
    return {h: {name: fn(rs) for name, fn in METRICS.items()} for h, rs in sorted(by_h.items())}


# --------------------------------------------------------------- baselines


def baseline_forecast(history, horizon, method):
    """Forecast ``horizon`` days after the last value of ``history``.

    persistence: the last value. seasonal_naive_7: the most recent value on
    the target's weekday. moving_average_7: the trailing 7-day mean.
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    n = len(history)
    if method == "persistence":
        if n < 1:
            raise CoverageError("persistence needs one observation")
        return float(history[-1])
    if method == "seasonal_naive_7":
        back = 7 * math.ceil(horizon / 7) - horizon  # offset from the last value
        if n < back + 1:
            raise CoverageError(f"seasonal_naive_7 needs {back + 1} observations, got {n}")
        return float(history[n - 1 - back])
    if method == "moving_average_7":
        if n < 7:
            raise CoverageError(f"moving_average_7 needs 7 observations, got {n}")
        return statistics.fmean(history[-7:])
    raise ConfigurationError(f"unknown baseline {method!r}; choose from {BASELINES}")


def baselines(history, horizon):
    return {m: baseline_forecast(history, horizon, m) for m in BASELINES}


def baseline_records(stats, locations, cutoffs, horizon, kind, method):
    records = []
    for cutoff in cutoffs:
        target_date = cutoff + dt.timedelta(days=horizon)
        for loc in locations:
            _, hist = stats.series(loc, kind, end=cutoff)
            pred = baseline_forecast(hist, horizon, method)
            actual = stats.value(target_date, loc, kind) if stats.has(target_date, loc, kind) else None
            records.append(PredictionRecord(cutoff, horizon, loc, kind, pred, actual))
    return records


# ------------------------------------------------------------------ files


def _num(v):
    return repr(float(v))


def write_predictions(records, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PREDICTION_HEADER)
    for r in records:
        w.writerow([r.cutoff.isoformat(), r.horizon, r.location, r.target, _num(r.predicted),
                    "" if r.actual is None else _num(r.actual)])


def read_predictions(fh):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != PREDICTION_HEADER:
        raise ParseError(1, f"predictions header must be {','.join(PREDICTION_HEADER)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 6:
            raise ParseError(lineno, f"expected 6 columns, got {len(row)}")
        try:
            out.append(
                PredictionRecord(
                    cutoff=dt.date.fromisoformat(row[0]),
                    horizon=int(row[1]),
                    location=row[2],
                    target=row[3],
                    predicted=float(row[4]),
                    actual=None if row[5] == "" else float(row[5]),
                )
            )
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    return out


def write_metrics(report, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(METRIC_HEADER)
    for h, metrics in report.items():
        for name, value in metrics.items():
            w.writerow([h, name, _num(value)])


def write_curves(records, fh):
    """Cumulative curves for every horizon; metric labels carry the horizon (mae_h7)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    by_h = {}
    for r in _scored(records):
        by_h.setdefault(r.horizon, []).append(r)
    for h, rs in sorted(by_h.items()):
        for name in METRICS:
            for d, value in smoothed_curve(rs, name):
                w.writerow([d.isoformat(), f"{name}_h{h}", _num(value)])
