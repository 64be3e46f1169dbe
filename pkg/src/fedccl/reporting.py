"""Run-directory outputs and multi-run aggregation.

Layout of one run directory::

    report.csv / report.json     metric rows, model columns
    heldout.csv / heldout.json   Predict and Evolve reports of held-out sites
    clusters.csv                 final cluster assignment per client
    update_log.csv               server-side aggregation log (virtual days)
    sessions.csv                 client-side session outcomes
    forecasts.csv.gz             per-step forecasts of every model on every site

Only report.* and heldout.* feed aggregation; they contain no timestamps or
other run-environment details, so equal seeds give equal bytes.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .client import write_outcomes_csv
from .clustering import assignments_to_csv
from .metrics import (
    AggregateReport, ForecastSeries, RunReport, aggregate_runs, aggregates_to_csv,
    reports_from_json, reports_to_csv, reports_to_json,
)

log = logging.getLogger(__name__)

FORECAST_COLUMNS = ("model", "site_id", "timestamp", "predicted_kw", "actual_kw", "kwp")


def run_dir_name(seed: int) -> str:
    return f"run-{seed:04d}"


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


def write_forecasts(forecasts: Mapping[str, Sequence[ForecastSeries]], path) -> None:
    # mtime=0 keeps the gzip header free of wall-clock time
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
        text = io.TextIOWrapper(gz, encoding="utf-8", newline="")
        w = csv.writer(text, lineterminator="\n")
        w.writerow(FORECAST_COLUMNS)
        for model in sorted(forecasts):
            for f in forecasts[model]:
                ts = np.datetime_as_string(np.asarray(f.timestamps, dtype="datetime64[m]"))
                for t, p, a in zip(ts, f.predicted_kw, f.actual_kw):
                    w.writerow([model, f.site_id, t, f"{p:.6f}", f"{a:.6f}", f.kwp])
        text.flush()
        text.detach()


def read_forecasts(path) -> dict[str, list[ForecastSeries]]:
    rows: dict[tuple[str, str], list[list[str]]] = {}
    with gzip.open(path, "rt", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault((row["model"], row["site_id"]), []).append(
                [row["timestamp"], row["predicted_kw"], row["actual_kw"], row["kwp"]])
    out: dict[str, list[ForecastSeries]] = {}
    for (model, site), vals in rows.items():
        ts = np.array([v[0] for v in vals], dtype="datetime64[m]")
        out.setdefault(model, []).append(ForecastSeries(
            site, ts, np.array([float(v[1]) for v in vals]),
            np.array([float(v[2]) for v in vals]), float(vals[0][3])))
    return out


def write_update_log(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_days", "client_id", "model_key", "base_round", "result_round",
                    "path", "samples_added"])
        for r in records:
            w.writerow([f"{r.timestamp:.6f}", r.client_id or "", r.model_key, r.base_round,
                        r.result_round, r.path, r.samples_added])


def heldout_columns(result) -> dict[str, RunReport]:
    """Training-population location report next to the held-out phases."""
    from .harness import TIER_COLUMNS
    cols = {"training_location": result.columns[TIER_COLUMNS["location"]]}
    cols.update(result.heldout)
    return cols


def write_run(result, out_dir, forecasts: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.csv", reports_to_csv(result.columns))
    _write(out / "report.json", reports_to_json(result.columns))
    if result.heldout:
        cols = heldout_columns(result)
        _write(out / "heldout.csv", reports_to_csv(cols))
        _write(out / "heldout.json", reports_to_json(cols))
    run = result.run
    if run is not None:
        labels = {cid: dict(a.labels) for cid, a in run.server.assignments().items()}
        _write(out / "clusters.csv", assignments_to_csv(labels))
        write_update_log(run.server.update_log, out / "update_log.csv")
        write_outcomes_csv(run.outcomes, out / "sessions.csv")
    if forecasts and result.forecasts:
        write_forecasts(result.forecasts, out / "forecasts.csv.gz")
    return out


@dataclass
class Collected:
    runs: list[Path]
    columns: dict[str, list[RunReport]]
    heldout: dict[str, list[RunReport]]

    def aggregate(self) -> dict[str, AggregateReport]:
        return {k: aggregate_runs(v) for k, v in self.columns.items()}

    def aggregate_heldout(self) -> dict[str, AggregateReport]:
        return {k: aggregate_runs(v) for k, v in self.heldout.items()}


def find_run_dirs(paths: Sequence) -> list[Path]:
    """Expand each path: a run directory itself, or a parent holding run-* dirs."""
    found = []
    for p in map(Path, paths):
        if (p / "report.json").is_file():
            found.append(p)
        elif p.is_dir():
            found += sorted(d for d in p.iterdir() if (d / "report.json").is_file())
    return found


def collect_runs(paths: Sequence) -> Collected:
    runs = find_run_dirs(paths)
    if not runs:
        raise FileNotFoundError(f"no run directories under {', '.join(map(str, paths))}")
    columns: dict[str, list[RunReport]] = {}
    heldout: dict[str, list[RunReport]] = {}
    for d in runs:
        for name, rep in reports_from_json((d / "report.json").read_text()).items():
            columns.setdefault(name, []).append(rep)
        if (d / "heldout.json").is_file():
            for name, rep in reports_from_json((d / "heldout.json").read_text()).items():
                heldout.setdefault(name, []).append(rep)
    return Collected(runs, columns, heldout)


def write_summary(collected: Collected, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    agg = collected.aggregate()
    for name, text in (("summary.csv", aggregates_to_csv(agg)),
                       ("summary.json", reports_to_json(agg))):
        _write(out / name, text)
        written.append(out / name)
    if collected.heldout:
        agg = collected.aggregate_heldout()
        for name, text in (("heldout_summary.csv", aggregates_to_csv(agg)),
                           ("heldout_summary.json", reports_to_json(agg))):
            _write(out / name, text)
            written.append(out / name)
    return written


def day_profiles(forecasts: Mapping[str, Sequence[ForecastSeries]], site_id: str,
                 day: str | None = None) -> tuple[str, dict[str, np.ndarray], np.ndarray]:
    """One site's 96-step curves for one day: (date, model -> predicted kW, actual kW).

    Without ``day`` the day with the highest actual energy is chosen.
    """
    curves: dict[str, np.ndarray] = {}
    actual = None
    date = day
    for model in sorted(forecasts):
        match = [f for f in forecasts[model] if f.site_id == site_id]
        if not match:
            continue
        f = match[0]
        days = np.asarray(f.timestamps, dtype="datetime64[D]")
        if date is None:
            per_day = f.actual_kw.reshape(-1, 96).sum(axis=1)
            date = str(days[::96][int(np.argmax(per_day))])
        sel = days == np.datetime64(date)
        if sel.sum() != 96:
            raise ValueError(f"{site_id} has no complete forecast for {date}")
        curves[model] = f.predicted_kw[sel]
        actual = f.actual_kw[sel]
    if actual is None:
        raise KeyError(f"no forecasts for site {site_id}")
    return date, curves, actual


def write_day_profile_csv(date: str, curves: Mapping[str, np.ndarray], actual: np.ndarray,
                          path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "minute_of_day", "actual_kw"] + list(curves))
        for i in range(96):
            w.writerow([date, i * 15, f"{actual[i]:.6f}"] + [f"{c[i]:.6f}" for c in curves.values()])


def write_json(obj, path) -> None:
    _write(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")
