"""Command line entry point.

    fedccl generate [--config FILE] [--seed N] -o DIR
    fedccl run CONFIG [--runs N] [--seed N] [-o DIR] [--no-forecasts]
    fedccl report RUN_DIR... [-o DIR] [--site ID] [--day YYYY-MM-DD] [--no-figures]

Exit codes: 0 success, 1 configuration error, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .harness import (
    ConfigError, ExperimentConfig, InvariantViolation, build_population, derive,
    load_config, run_experiment,
)
from .reporting import (
    collect_runs, day_profiles, read_forecasts, run_dir_name, write_day_profile_csv,
    write_run, write_summary,
)
from .solar import write_series_csv

log = logging.getLogger("fedccl")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _config(path, seed=None, runs=None, output=None) -> ExperimentConfig:
    cfg = load_config(path) if path else ExperimentConfig()
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if runs is not None:
        changes["runs"] = runs
    if output is not None:
        changes["output_dir"] = str(output)
    try:
        return dataclasses.replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_generate(args) -> int:
    cfg = _config(args.config, seed=args.seed)
    pop = build_population(cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sites.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site_id", "cluster", "latitude", "longitude", "azimuth", "kwp", "role"])
        for i in pop.infos:
            role = "heldout" if i.site_id in pop.heldout_ids else "training"
            w.writerow([i.site_id, i.cluster, f"{i.latitude:.6f}", f"{i.longitude:.6f}",
                        f"{i.azimuth:.3f}", f"{i.kwp:.3f}", role])
    for sid, series in sorted(pop.series.items()):
        write_series_csv(series, out / f"{sid}.csv")
    print(f"wrote {len(pop.series)} sites (scenario seed {derive(cfg.seed, 'scenario')}) to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args.config, seed=args.seed, runs=args.runs, output=args.output)
    out = Path(cfg.output_dir)
    for r in range(cfg.runs):
        run_cfg = cfg.for_run(r)
        t0 = time.perf_counter()
        result = run_experiment(run_cfg)
        d = write_run(result, out / run_dir_name(run_cfg.seed), forecasts=not args.no_forecasts)
        loc = result.columns.get("Federated Location")
        msg = f" location {loc.mean_error_power:.2f}%" if loc else ""
        print(f"run {r + 1}/{cfg.runs} seed {run_cfg.seed}: {d}{msg} "
              f"({time.perf_counter() - t0:.1f}s)")
    written = write_summary(collect_runs([out]), out)
    print("summary: " + ", ".join(str(p) for p in written))
    return EXIT_OK


def cmd_report(args) -> int:
    from . import plotting

    collected = collect_runs(args.runs)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    written = write_summary(collected, out)
    agg = collected.aggregate()
    if not args.no_figures:
        written.append(plotting.plot_error_bars(agg, out / "mean_error_power.png"))
        written.append(plotting.plot_error_bars(agg, out / "mean_error_energy.png",
                                                metric="mean_error_energy"))
        if collected.heldout:
            written.append(plotting.plot_heldout(collected.aggregate_heldout(),
                                                 out / "heldout.png"))
    # per-day curves come from the first run holding forecasts
    fc_dir = next((d for d in collected.runs if (d / "forecasts.csv.gz").is_file()), None)
    if fc_dir is not None:
        forecasts = read_forecasts(fc_dir / "forecasts.csv.gz")
        sites = sorted({f.site_id for fs in forecasts.values() for f in fs})
        site = args.site or sites[0]
        if site not in sites:
            raise ConfigError(f"site {site!r} has no forecasts in {fc_dir}")
        for group, models in (("federated", ("global", "location", "orientation", "local")),
                              ("heldout", ("predict_location", "evolve_location"))):
            chosen = {m: forecasts[m] for m in models if m in forecasts}
            if not any(f.site_id == site for fs in chosen.values() for f in fs):
                continue
            date, curves, actual = day_profiles(chosen, site, args.day)
            stem = f"day_{group}_{site}_{date}"
            write_day_profile_csv(date, curves, actual, out / f"{stem}.csv")
            written.append(out / f"{stem}.csv")
            if not args.no_figures:
                written.append(plotting.plot_day_profile(date, curves, actual,
                                                         out / f"{stem}.png", site))
    print(f"aggregated {len(collected.runs)} run(s)")
    for p in written:
        print(f"  {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedccl", description=__doc__.splitlines()[0] if __doc__
                                else None)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write the synthetic scenario as CSV files")
    g.add_argument("--config", help="TOML config (defaults if omitted)")
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(fn=cmd_generate)

    r = sub.add_parser("run", help="run experiments from a config file")
    r.add_argument("config", nargs="?", help="TOML config (defaults if omitted)")
    r.add_argument("--runs", type=int)
    r.add_argument("--seed", type=int, help="master seed of the first run")
    r.add_argument("-o", "--output", help="output directory (overrides output_dir)")
    r.add_argument("--no-forecasts", action="store_true",
                   help="skip the per-step forecast dump")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("report", help="aggregate run directories, write tables and figures")
    s.add_argument("runs", nargs="+", help="run directories or their parent")
    s.add_argument("-o", "--output", default="report")
    s.add_argument("--site", help="site for the per-day forecast curves")
    s.add_argument("--day", help="date for the per-day curves (default: sunniest test day)")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
