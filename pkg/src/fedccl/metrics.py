"""Capacity-normalised forecast errors and the per-run report.

Power error is |predicted - actual| / kWp per step. Energy error compares
daily energies (sum of power times 0.25 h) against twelve hours at rated
capacity. The daytime window is the half-open interval [06:00, 21:00).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np

STEPS_PER_DAY = 96
STEP_HOURS = 0.25
DAYTIME = (6 * 60, 21 * 60)

REPORT_LABELS = {
    "mean_error_power": "Mean Error Power",
    "max_error_power": "Max Error Power",
    "mean_error_energy": "Mean Error Energy",
    "mean_error_day_power": "Mean Error Day Power",
    "mean_error_day_energy": "Mean Error Day Energy",
}


class MetricsError(ValueError):
    pass


def _check_kwp(kwp) -> None:
    if np.any(np.asarray(kwp) <= 0):
        raise MetricsError("kwp must be positive")


def power_error(predicted_kw, actual_kw, kwp):
    _check_kwp(kwp)
    return np.abs(np.asarray(predicted_kw, float) - np.asarray(actual_kw, float)) / kwp * 100.0


def energy_error(predicted_kwh_day, actual_kwh_day, kwp):
    _check_kwp(kwp)
    return (np.abs(np.asarray(predicted_kwh_day, float) - np.asarray(actual_kwh_day, float))
            / (np.asarray(kwp, float) * 12.0) * 100.0)


def daily_energy(power_kw, mask=None) -> np.ndarray:
    """kWh per day from a 96-steps-per-day power series."""
    p = np.asarray(power_kw, float).reshape(-1, STEPS_PER_DAY)
    if mask is not None:
        p = p * np.asarray(mask, float).reshape(-1, STEPS_PER_DAY)
    return p.sum(axis=1) * STEP_HOURS


def daytime_mask(minute_of_day) -> np.ndarray:
    m = np.asarray(minute_of_day)
    return (m >= DAYTIME[0]) & (m < DAYTIME[1])


@dataclass
class ForecastSeries:
    site_id: str
    timestamps: np.ndarray
    predicted_kw: np.ndarray
    actual_kw: np.ndarray
    kwp: float

    def __post_init__(self):
        self.predicted_kw = np.asarray(self.predicted_kw, float)
        self.actual_kw = np.asarray(self.actual_kw, float)
        if self.predicted_kw.shape != self.actual_kw.shape:
            raise MetricsError("predicted and actual series are not aligned")
        if len(self.predicted_kw) % STEPS_PER_DAY:
            raise MetricsError("forecast series must cover whole days of 96 steps")
        if (self.predicted_kw < 0).any() or (self.actual_kw < 0).any():
            raise MetricsError("power values must be non-negative")
        _check_kwp(self.kwp)

    @property
    def minute_of_day(self) -> np.ndarray:
        return (np.arange(len(self.actual_kw)) % STEPS_PER_DAY) * 15


@dataclass(frozen=True)
class RunReport:
    mean_error_power: float
    max_error_power: float
    mean_error_energy: float
    mean_error_day_power: float
    mean_error_day_energy: float

    def as_labelled(self) -> dict[str, float]:
        return {REPORT_LABELS[k]: v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class AggregateReport:
    mean: RunReport
    std: RunReport
    n_runs: int


def summarize(forecasts: Sequence[ForecastSeries] | ForecastSeries) -> RunReport:
    if isinstance(forecasts, ForecastSeries):
        forecasts = [forecasts]
    forecasts = [f for f in forecasts if len(f.actual_kw)]
    if not forecasts:
        raise MetricsError("no forecast days to summarize")
    step_err, day_step_err, e_err, day_e_err = [], [], [], []
    for f in forecasts:
        day = daytime_mask(f.minute_of_day)
        err = power_error(f.predicted_kw, f.actual_kw, f.kwp)
        step_err.append(err)
        day_step_err.append(err[day])
        e_err.append(energy_error(daily_energy(f.predicted_kw), daily_energy(f.actual_kw), f.kwp))
        day_e_err.append(energy_error(daily_energy(f.predicted_kw, day),
                                      daily_energy(f.actual_kw, day), f.kwp))
    step_err = np.concatenate(step_err)
    return RunReport(
        mean_error_power=float(step_err.mean()),
        max_error_power=float(step_err.max()),
        mean_error_energy=float(np.concatenate(e_err).mean()),
        mean_error_day_power=float(np.concatenate(day_step_err).mean()),
        mean_error_day_energy=float(np.concatenate(day_e_err).mean()),
    )


def aggregate_runs(reports: Sequence[RunReport]) -> AggregateReport:
    if not reports:
        raise MetricsError("no runs to aggregate")
    names = [f.name for f in fields(RunReport)]
    arr = np.array([[getattr(r, n) for n in names] for r in reports])
    mean = arr.mean(axis=0)
    std = arr.std(axis=0, ddof=1) if len(reports) > 1 else np.zeros(len(names))
    return AggregateReport(RunReport(*map(float, mean)), RunReport(*map(float, std)), len(reports))


def _fmt(x: float) -> str:
    return repr(round(float(x), 10)) if math.isfinite(x) else "nan"


def reports_to_csv(columns: Mapping[str, RunReport]) -> str:
    """Metric rows by model columns, one value per cell."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Metric"] + list(columns))
    for attr, label in REPORT_LABELS.items():
        w.writerow([label] + [_fmt(getattr(r, attr)) for r in columns.values()])
    return buf.getvalue()


def aggregates_to_csv(columns: Mapping[str, AggregateReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["Metric"]
    for name in columns:
        header += [f"{name} mean", f"{name} std"]
    w.writerow(header)
    for attr, label in REPORT_LABELS.items():
        row = [label]
        for agg in columns.values():
            row += [_fmt(getattr(agg.mean, attr)), _fmt(getattr(agg.std, attr))]
        w.writerow(row)
    return buf.getvalue()


def reports_to_json(columns: Mapping[str, RunReport | AggregateReport]) -> str:
    out = {}
    for name, r in columns.items():
        if isinstance(r, AggregateReport):
            out[name] = {"n_runs": r.n_runs,
                         "mean": {k: round(v, 10) for k, v in r.mean.as_labelled().items()},
                         "std": {k: round(v, 10) for k, v in r.std.as_labelled().items()}}
        else:
            out[name] = {k: round(v, 10) for k, v in r.as_labelled().items()}
    return json.dumps(out, indent=2, sort_keys=False) + "\n"


def reports_from_json(text: str) -> dict[str, RunReport]:
    data = json.loads(text)
    inv = {v: k for k, v in REPORT_LABELS.items()}
    return {name: RunReport(**{inv[k]: float(v) for k, v in vals.items()})
            for name, vals in data.items()}
