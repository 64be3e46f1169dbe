"""End-to-end experiments on the synthetic solar scenario.

One experiment run (one seed) produces error reports for the two
centralized baselines and the four federated tiers, plus the Predict and
Evolve reports for sites held out of training.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .aggregation import AggregationConfig
from .client import ClientSchedule, FederationClient, SessionOutcome, session_seed
from .clustering import (
    ClientProfile, ClusteringDimension, Dimension, location_distance,
)
from .metrics import ForecastSeries, RunReport, summarize
from .model import Level, ModelSnapshot, ModelWeights
from .protocol import ModelResponse, RegisterAck, RegisterClient, RequestAssignments, \
    RequestModel, UpdateAck, UpdateModel, frame_type
from .scheduler import Scheduler
from .server import FederationServer
from .solar import (
    HISTORY_DAYS, Dataset, ScenarioSpec, SiteInfo, SiteSeries,
    WeatherRegime, generate_scenario, series_dataset, split_series,
)
from .trainer import TrainerConfig, TrainingError, fit, fresh_snapshot, predict
from .transport import (
    FrameLog, FrameServer, InProcessTransport, RemoteError, ServerEndpoint, ServerProxy,
    SocketTransport, TransportError,
)

log = logging.getLogger(__name__)

TIERS = ("global", "location", "orientation", "local")
TIER_COLUMNS = {
    "global": "Federated Global",
    "location": "Federated Location",
    "orientation": "Federated Orientation",
    "local": "Federated Local",
}
BASELINE_COLUMNS = {
    "centralized_all": "Centralized (All)",
    "centralized_continual": "Centralized (Continual)",
}
ALLOWED_FRAMES = (RegisterClient, RegisterAck, RequestAssignments, RequestModel,
                  ModelResponse, UpdateModel, UpdateAck)


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSpec = ScenarioSpec()
    trainer: TrainerConfig = TrainerConfig()
    aggregation: AggregationConfig = AggregationConfig()
    schedule: ClientSchedule = ClientSchedule()
    location: ClusteringDimension = ClusteringDimension(Dimension.LOCATION, 50.0, 3)
    orientation: ClusteringDimension = ClusteringDimension(Dimension.ORIENTATION, 15.0, 3)
    seed: int = 0
    runs: int = 1
    cycles: int = 40
    evolve_cycles: int = 5
    heldout_per_cluster: int = 2
    heldout_sites: tuple[str, ...] = ()
    train_fraction: float = 0.8
    centralized_epochs: int = 4
    baselines: tuple[str, ...] = ("centralized_all", "centralized_continual")
    output_dir: str = "runs"

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if self.evolve_cycles < 0 or self.heldout_per_cluster < 0:
            raise ConfigError("evolve_cycles and heldout_per_cluster must be >= 0")
        if self.centralized_epochs < 0:
            raise ConfigError("centralized_epochs must be >= 0")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        unknown = set(self.baselines) - set(BASELINE_COLUMNS)
        if unknown:
            raise ConfigError(f"unknown baselines: {sorted(unknown)}")
        if self.heldout_per_cluster >= self.scenario.sites_per_cluster and not self.heldout_sites:
            raise ConfigError("held-out sites would leave a cluster without training sites")

    def for_run(self, run: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=self.seed + run, runs=1)


def derive(seed: int, tag: str) -> int:
    return session_seed(seed, 0, tag)


# -- config files ---------------------------------------------------------

def _load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def _build(cls, data: Mapping[str, Any] | None, where: str, **convert):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {sorted(unknown)}")
    for key, fn in convert.items():
        if key in data:
            data[key] = fn(data[key])
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    raw = dict(raw)
    sections = {k: raw.pop(k) for k in
                ("scenario", "trainer", "aggregation", "schedule", "clustering")
                if k in raw}
    scen = dict(sections.get("scenario", {}))
    regimes = scen.pop("regimes", None)
    scenario = _build(
        ScenarioSpec, scen, "scenario",
        centroids=lambda v: tuple(tuple(map(float, c)) for c in v),
        azimuth_groups=lambda v: tuple(map(float, v)),
        kwp_range=lambda v: tuple(map(float, v)),
    )
    if regimes is not None:
        scenario = dataclasses.replace(
            scenario, regimes=tuple(_build(WeatherRegime, r, "scenario.regimes") for r in regimes))
    clustering = sections.get("clustering", {})
    unknown = set(clustering) - {"location", "orientation"}
    if unknown:
        raise ConfigError(f"[clustering] unknown dimensions: {sorted(unknown)}")
    loc = dict(name="location", eps=50.0, min_pts=3) | dict(clustering.get("location", {}))
    ori = dict(name="orientation", eps=15.0, min_pts=3) | dict(clustering.get("orientation", {}))
    for key in ("heldout_sites", "baselines"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return ExperimentConfig(
            scenario=scenario,
            trainer=_build(TrainerConfig, sections.get("trainer"), "trainer",
                           hidden_sizes=tuple),
            aggregation=_build(AggregationConfig, sections.get("aggregation"), "aggregation"),
            schedule=_build(ClientSchedule, sections.get("schedule"), "schedule"),
            location=_build(ClusteringDimension, loc, "clustering.location"),
            orientation=_build(ClusteringDimension, ori, "clustering.orientation"),
            **_checked_top_level(raw),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _checked_top_level(raw: Mapping[str, Any]) -> dict:
    allowed = {"seed", "runs", "cycles", "evolve_cycles", "heldout_per_cluster", "heldout_sites",
               "train_fraction", "centralized_epochs", "baselines", "output_dir"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    return dict(raw)


def load_config(path) -> ExperimentConfig:
    return config_from_dict(_load_toml(path))


# -- population -------------------------------------------------------------

@dataclass
class Population:
    cfg: ExperimentConfig
    infos: list[SiteInfo]
    series: dict[str, SiteSeries]
    train: dict[str, SiteSeries]
    test: dict[str, SiteSeries]
    training_ids: list[str]
    heldout_ids: list[str]

    @property
    def n_train_days(self) -> int:
        return next(iter(self.train.values())).n_days

    def info(self, site_id: str) -> SiteInfo:
        return next(i for i in self.infos if i.site_id == site_id)


def select_heldout(infos: Sequence[SiteInfo], per_cluster: int) -> list[str]:
    """The sites closest to each ground-truth cluster's centroid."""
    chosen = []
    for c in sorted({i.cluster for i in infos}):
        members = [i for i in infos if i.cluster == c]
        lat = float(np.mean([i.latitude for i in members]))
        lon = float(np.mean([i.longitude for i in members]))
        centre = ClientProfile("centroid", lat, lon, 180.0, 1.0)
        members.sort(key=lambda i: (location_distance(i.profile(), centre), i.site_id))
        chosen += [i.site_id for i in members[:per_cluster]]
    return sorted(chosen)


def build_population(cfg: ExperimentConfig) -> Population:
    spec = dataclasses.replace(cfg.scenario, seed=derive(cfg.seed, "scenario"))
    infos, series = generate_scenario(spec)
    by_id = {s.site_id: s for s in series}
    if cfg.heldout_sites:
        unknown = set(cfg.heldout_sites) - set(by_id)
        if unknown:
            raise ConfigError(f"unknown held-out sites: {sorted(unknown)}")
        heldout = sorted(cfg.heldout_sites)
    else:
        heldout = select_heldout(infos, cfg.heldout_per_cluster)
    training = sorted(set(by_id) - set(heldout))
    if not training:
        raise ConfigError("no training sites left after holding out")
    train, test = {}, {}
    for sid, s in by_id.items():
        train[sid], test[sid] = split_series(s, cfg.train_fraction)
    return Population(cfg, infos, by_id, train, test, training, heldout)


# -- evaluation -------------------------------------------------------------

def forecast(model: ModelSnapshot, series: SiteSeries) -> ForecastSeries:
    ds = series_dataset(series)
    pred = np.asarray(predict(model, ds.X)) * series.kwp
    return ForecastSeries(series.site_id, series.timestamps, pred, series.production_kw, series.kwp)


def evaluate(models: Mapping[str, ModelSnapshot], pop: Population,
             sites: Sequence[str]) -> tuple[RunReport, list[ForecastSeries]]:
    fcs = [forecast(models[s], pop.test[s]) for s in sites]
    return summarize(fcs), fcs


# -- centralized baselines -------------------------------------------------

def _pooled(pop: Population, start_day: int, end_day: int) -> Dataset:
    return Dataset.concat([series_dataset(pop.train[s].days(start_day, end_day))
                           for s in pop.training_ids])


def _central_config(cfg: ExperimentConfig) -> TrainerConfig:
    return dataclasses.replace(cfg.trainer, epochs=max(1, cfg.centralized_epochs))


@dataclass
class BaselineResult:
    report: RunReport
    forecasts: list[ForecastSeries]
    model: ModelSnapshot
    n_examples: int


def _central_init(cfg: ExperimentConfig) -> ModelSnapshot:
    # without any training the baseline is the all-zero model
    return fresh_snapshot(cfg.trainer, seed=derive(cfg.seed, "init-global"),
                          zero=cfg.centralized_epochs == 0)


def run_baseline_centralized_all(cfg: ExperimentConfig, pop: Population | None = None):
    pop = pop or build_population(cfg)
    model = _central_init(cfg)
    data = _pooled(pop, 0, pop.n_train_days)
    if cfg.centralized_epochs > 0:
        # nothing learned earlier to protect, so no anchor penalty
        tcfg = dataclasses.replace(_central_config(cfg), l2_anchor_lambda=0.0)
        res = fit(list(model.weights), data.X, data.y, tcfg, seed=derive(cfg.seed, "central-0"))
        model = ModelSnapshot(model.meta, ModelWeights(res.layers))
    report, fcs = evaluate({s: model for s in pop.training_ids}, pop, pop.training_ids)
    return BaselineResult(report, fcs, model, len(data))


def chunk_bounds(n_days: int, chunk_days: int = HISTORY_DAYS) -> list[tuple[int, int]]:
    return [(s, min(s + chunk_days, n_days)) for s in range(0, n_days, chunk_days)]


def run_baseline_centralized_continual(cfg: ExperimentConfig, pop: Population | None = None):
    pop = pop or build_population(cfg)
    model = _central_init(cfg)
    layers = list(model.weights)
    n = 0
    if cfg.centralized_epochs > 0:
        tcfg = _central_config(cfg)
        for i, (a, b) in enumerate(chunk_bounds(pop.n_train_days)):
            data = _pooled(pop, a, b)
            n += len(data)
            # the very first chunk has no prior knowledge to protect
            anchor = layers if i else None
            run_cfg = tcfg if i else dataclasses.replace(tcfg, l2_anchor_lambda=0.0)
            layers = fit(layers, data.X, data.y, run_cfg, anchor=anchor,
                         seed=derive(cfg.seed, f"central-{i}")).layers
    model = ModelSnapshot(model.meta, ModelWeights(layers))
    report, fcs = evaluate({s: model for s in pop.training_ids}, pop, pop.training_ids)
    return BaselineResult(report, fcs, model, n)


# -- federated run -----------------------------------------------------------

@dataclass
class FederatedRun:
    cfg: ExperimentConfig
    pop: Population
    server: FederationServer
    endpoint: ServerEndpoint
    frame_log: FrameLog
    clients: dict[str, FederationClient]
    scheduler: Scheduler
    deltas: dict[str, list[int]] = field(default_factory=dict)
    reports: dict[str, RunReport] = field(default_factory=dict)
    forecasts: dict[str, list[ForecastSeries]] = field(default_factory=dict)
    fallbacks: dict[str, int] = field(default_factory=dict)
    evolve_start: float = math.inf

    @property
    def outcomes(self) -> list[SessionOutcome]:
        out = []
        for c in self.clients.values():
            out.extend(c.outcomes)
        return sorted(out, key=lambda o: (o.time, o.client_id, o.cycle, o.model_key))

    def tier_models(self, client: FederationClient) -> dict[str, ModelSnapshot]:
        g = self.server.request_model(Level.GLOBAL)
        models = {"global": g, "local": client.state.local_model}
        for dim in ("location", "orientation"):
            key = self.server.assignment(client.client_id).key_for(dim)
            if key is None:
                self.fallbacks[dim] = self.fallbacks.get(dim, 0) + 1
                models[dim] = g
            else:
                models[dim] = self.server.request_model(Level.CLUSTER, key)
        return models

    def evaluate_tiers(self, sites: Sequence[str], prefix: str = "") -> dict[str, RunReport]:
        per_tier: dict[str, list[ForecastSeries]] = {t: [] for t in TIERS}
        for sid in sites:
            models = self.tier_models(self.clients[sid])
            for t in TIERS:
                per_tier[t].append(forecast(models[t], self.pop.test[sid]))
        out = {}
        for t in TIERS:
            out[prefix + t] = summarize(per_tier[t])
            self.forecasts[prefix + t] = per_tier[t]
        self.reports.update(out)
        return out


def _client_process(run: FederatedRun, client: FederationClient, cycles: int,
                    start: float, interval: float, rng: np.random.Generator,
                    day_for_cycle=None):
    sched, sch = run.scheduler, client.state.schedule
    n_train = run.pop.n_train_days
    yield max(0.0, start - sched.now)
    for k in range(cycles):
        if k:
            yield interval * (1.0 + rng.uniform(-sch.jitter, sch.jitter))
        if not sch.active(sched.now):
            continue
        now = sched.now
        day = min(n_train, now) if day_for_cycle is None else day_for_cycle(k)
        client.state.cycles += 1
        try:
            client.refresh_assignments()
        except (TransportError, RemoteError):
            pass
        data = client.preprocess(day)
        try:
            client.train_local(data)
            client.record(Level.LOCAL, "local", "trained", time=now)
        except TrainingError:
            client.record(Level.LOCAL, "local", "aborted", time=now)

        def duration():
            return sch.session_hours * rng.uniform(0.5, 1.5) / 24.0

        longest = 0.0
        for key in client.state.assignments.keys():
            d = duration()
            longest = max(longest, d)
            _start_async_session(run, client, Level.CLUSTER, key, data, d)
        yield longest
        d = duration()
        _start_async_session(run, client, Level.GLOBAL, None, data, d)
        yield d


def _start_async_session(run: FederatedRun, client: FederationClient, level: Level,
                         key: str | None, data: Dataset, duration: float) -> None:
    sched = run.scheduler
    t0 = sched.now
    try:
        pending = client.start_session(level, key, data)
    except (TransportError, RemoteError):
        client.record(level, key, "skipped", time=t0)
        return
    except TrainingError:
        client.record(level, key, "aborted", time=t0)
        return

    def submit():
        try:
            ack = client.submit(pending)
        except (TransportError, RemoteError):
            client.record(level, key, "skipped", pending, time=sched.now)
            return
        run.deltas.setdefault(run.server.resolve(key or "global"), []).append(
            pending.delta.samples_learned)
        client.record(level, key, "submitted", pending, ack, time=sched.now)

    sched.call_later(duration, submit)


def _make_client(run: FederatedRun, site_id: str, register: bool = True) -> FederationClient:
    cfg, pop = run.cfg, run.pop
    transport = InProcessTransport(run.endpoint, run.frame_log)
    schedule = dataclasses.replace(cfg.schedule, seed=derive(cfg.seed, f"schedule-{site_id}"))
    client = FederationClient.create(
        pop.info(site_id).profile(), pop.train[site_id], cfg.trainer, ServerProxy(transport),
        schedule, seed=derive(cfg.seed, f"client-{site_id}"), register=register)
    run.clients[site_id] = client
    return client


def start_federation(cfg: ExperimentConfig, pop: Population | None = None) -> FederatedRun:
    pop = pop or build_population(cfg)
    scheduler = Scheduler()
    initial = fresh_snapshot(cfg.trainer, seed=derive(cfg.seed, "init-global"))
    server = FederationServer(initial, (cfg.location, cfg.orientation), cfg.aggregation,
                              clock=lambda: scheduler.now)
    endpoint = ServerEndpoint(server)
    run = FederatedRun(cfg, pop, server, endpoint, FrameLog(), {}, scheduler)
    for sid in pop.training_ids:
        _make_client(run, sid)
    return run


def run_federated(cfg: ExperimentConfig, pop: Population | None = None) -> FederatedRun:
    run = start_federation(cfg, pop)
    n_train = run.pop.n_train_days
    span = max(1.0, n_train - HISTORY_DAYS)
    interval = cfg.schedule.mean_interval_days or span / cfg.cycles
    for sid in run.pop.training_ids:
        client = run.clients[sid]
        rng = np.random.default_rng(client.state.schedule.seed)
        start = max(client.state.schedule.join_day, 1.0) + rng.uniform(0.0, interval)
        run.scheduler.spawn(_client_process(run, client, cfg.cycles, start, interval, rng))
    run.scheduler.run()
    run.evaluate_tiers(run.pop.training_ids)
    return run


def run_federated_threaded(cfg: ExperimentConfig, pop: Population | None = None,
                           use_sockets: bool = True) -> FederatedRun:
    """Wall-clock variant: one thread per client, optionally over TCP.

    Not reproducible in its interleaving; meant for exercising the server
    under genuine concurrency rather than for producing reports.
    """
    pop = pop or build_population(cfg)
    initial = fresh_snapshot(cfg.trainer, seed=derive(cfg.seed, "init-global"))
    server = FederationServer(initial, (cfg.location, cfg.orientation), cfg.aggregation)
    endpoint = ServerEndpoint(server)
    run = FederatedRun(cfg, pop, server, endpoint, FrameLog(), {}, Scheduler())
    frame_server = None
    if use_sockets:
        frame_server = FrameServer(("127.0.0.1", 0), endpoint)
        frame_server.start()
    try:
        for sid in pop.training_ids:
            if frame_server is None:
                transport = InProcessTransport(endpoint, run.frame_log)
            else:
                transport = SocketTransport(*frame_server.server_address,
                                            frame_log=run.frame_log)
            client = FederationClient.create(
                pop.info(sid).profile(), pop.train[sid], cfg.trainer, ServerProxy(transport),
                dataclasses.replace(cfg.schedule, seed=derive(cfg.seed, f"schedule-{sid}")),
                seed=derive(cfg.seed, f"client-{sid}"))
            run.clients[sid] = client
        n_train = pop.n_train_days
        days = np.linspace(HISTORY_DAYS, n_train, cfg.cycles)

        def work(client: FederationClient):
            for day in days:
                client.run_training_cycle(now_day=float(day))

        with ThreadPoolExecutor(max_workers=len(run.clients)) as pool:
            list(pool.map(work, run.clients.values()))
    finally:
        for c in run.clients.values():
            c.proxy.transport.close()
        if frame_server is not None:
            frame_server.shutdown()
            frame_server.server_close()
    for o in run.outcomes:
        if o.status == "submitted":
            run.deltas.setdefault(server.resolve(o.model_key), []).append(o.samples)
    run.evaluate_tiers(pop.training_ids)
    return run


def run_predict_evolve(cfg: ExperimentConfig, run: FederatedRun | None = None) -> FederatedRun:
    run = run or run_federated(cfg)
    pop = run.pop
    if not pop.heldout_ids:
        raise ConfigError("predict/evolve needs at least one held-out site")
    clash = set(pop.heldout_ids) & set(pop.training_ids)
    if clash:
        raise ConfigError(f"held-out sites collide with training sites: {sorted(clash)}")
    for sid in pop.heldout_ids:
        _make_client(run, sid)
    run.evaluate_tiers(pop.heldout_ids, prefix="predict_")

    n_train = pop.n_train_days
    if cfg.evolve_cycles:
        step = max(1.0, (n_train - HISTORY_DAYS) / cfg.cycles)
        t0 = run.evolve_start = run.scheduler.now
        for sid in pop.heldout_ids:
            client = run.clients[sid]
            rng = np.random.default_rng(derive(cfg.seed, f"evolve-{sid}"))
            n = cfg.evolve_cycles
            days = [max(1.0, n_train - step * (n - 1 - k)) for k in range(n)]
            run.scheduler.spawn(_client_process(
                run, client, n, t0 + rng.uniform(0.0, step), step, rng,
                day_for_cycle=lambda k, days=days: days[k]))
        run.scheduler.run()
    run.evaluate_tiers(pop.heldout_ids, prefix="evolve_")
    return run


# -- invariants ---------------------------------------------------------------

def check_invariants(run: FederatedRun, initial_counts: Mapping[str, int] | None = None) -> None:
    """Raise InvariantViolation if the run broke a server or privacy invariant."""
    srv = run.server
    by_model: dict[str, list] = {}
    for rec in srv.update_log:
        by_model.setdefault(rec.model_key, []).append(rec)
    for key, recs in by_model.items():
        for prev, cur in zip(recs, recs[1:]):
            if cur.base_round != prev.result_round:
                raise InvariantViolation(f"{key}: update history is not a serial chain")
        if any(r.result_round <= r.base_round for r in recs):
            raise InvariantViolation(f"{key}: round did not increase")
    for key in srv.model_keys():
        recs = by_model.get(key, [])
        if not recs:
            continue
        stored = srv.request_model(Level.GLOBAL if key == "global" else Level.CLUSTER, key)
        added = sum(r.samples_added for r in recs)
        if stored.meta.round != recs[-1].result_round:
            raise InvariantViolation(f"{key}: stored round differs from last logged update")
        expected = sum(run.deltas.get(key, []))
        if added != expected:
            raise InvariantViolation(f"{key}: acknowledged samples {expected} != applied {added}")
    for direction, frame in run.frame_log.frames:
        if frame_type(frame) not in ALLOWED_FRAMES:
            raise InvariantViolation(f"unexpected {frame_type(frame).__name__} frame ({direction})")
    clash = set(run.pop.heldout_ids) & set(run.pop.training_ids)
    if clash:
        raise InvariantViolation(f"held-out sites used for training: {sorted(clash)}")
    for sid in run.pop.heldout_ids:
        c = run.clients.get(sid)
        if c is not None and c.outcomes and c.outcomes[0].time < run.evolve_start:
            raise InvariantViolation(f"{sid} trained before the evolve phase")


def raw_payload_hits(run: FederatedRun, window: int = 4) -> int:
    """Frames containing any ``window`` consecutive raw production values."""
    needles = set()
    for s in run.pop.series.values():
        p = np.ascontiguousarray(s.production_kw, dtype="<f8")
        nz = np.flatnonzero(p)
        for i in nz[::97]:
            if i + window <= len(p) and np.all(p[i:i + window] != 0):
                needles.add(p[i:i + window].tobytes())
                needles.add(np.ascontiguousarray(p[i:i + window], dtype=">f8").tobytes())
    hits = 0
    for _, frame in run.frame_log.frames:
        if any(n in frame for n in needles):
            hits += 1
    return hits


# -- one complete experiment -----------------------------------------------------

@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    columns: dict[str, RunReport]
    heldout: dict[str, RunReport]
    run: FederatedRun | None
    forecasts: dict[str, list[ForecastSeries]]

    def degradation(self, tier: str = "location", phase: str = "predict") -> float:
        return (self.heldout[f"{phase}_{tier}"].mean_error_power
                - self.columns[TIER_COLUMNS[tier]].mean_error_power)


def run_experiment(cfg: ExperimentConfig, federated: bool = True,
                   baselines: bool = True) -> ExperimentResult:
    pop = build_population(cfg)
    columns: dict[str, RunReport] = {}
    forecasts: dict[str, list[ForecastSeries]] = {}
    if baselines:
        if "centralized_all" in cfg.baselines:
            res = run_baseline_centralized_all(cfg, pop)
            columns[BASELINE_COLUMNS["centralized_all"]] = res.report
            forecasts["centralized_all"] = res.forecasts
        if "centralized_continual" in cfg.baselines:
            res = run_baseline_centralized_continual(cfg, pop)
            columns[BASELINE_COLUMNS["centralized_continual"]] = res.report
            forecasts["centralized_continual"] = res.forecasts
    run = None
    heldout: dict[str, RunReport] = {}
    if federated:
        run = run_federated(cfg, pop)
        if pop.heldout_ids:
            run_predict_evolve(cfg, run)
        check_invariants(run)
        for t in TIERS:
            columns[TIER_COLUMNS[t]] = run.reports[t]
        heldout = {k: v for k, v in run.reports.items() if k.startswith(("predict_", "evolve_"))}
        forecasts.update(run.forecasts)
    return ExperimentResult(cfg, columns, heldout, run, forecasts)
