"""Client side of the asynchronous training loop.

One cycle trains the local model on the most recent window of local data,
then runs a fetch/train/submit session for every assigned cluster model
(concurrently), then one for the global model. A session that fails on the
transport is dropped whole and simply happens again next cycle.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clustering import ClientProfile, Dimension
from .metrics import ForecastSeries
from .model import Level, ModelSnapshot, TrainingDelta
from .server import ClusterAssignment
from .solar import HISTORY_DAYS, STEPS_PER_DAY, Dataset, SiteSeries, series_dataset
from .trainer import TrainerConfig, TrainingError, fresh_snapshot, predict, train_model
from .transport import RemoteError, ServerProxy, TransportError

log = logging.getLogger(__name__)


class ClientError(Exception):
    pass


@dataclass(frozen=True)
class ClientSchedule:
    mean_interval_days: float | None = None  # None: spread cycles over the data span
    jitter: float = 0.3
    join_day: float = float(HISTORY_DAYS)
    leave_day: float | None = None
    rejoin_day: float | None = None
    session_hours: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.mean_interval_days is not None and not self.mean_interval_days > 0:
            raise ValueError("intervals must be positive")
        if not self.session_hours > 0:
            raise ValueError("intervals must be positive")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")

    def active(self, day: float) -> bool:
        if day < self.join_day:
            return False
        if self.leave_day is not None and day >= self.leave_day:
            return self.rejoin_day is not None and day >= self.rejoin_day
        return True


@dataclass
class ClientState:
    profile: ClientProfile
    assignments: ClusterAssignment
    local_model: ModelSnapshot
    series: SiteSeries
    trainer: TrainerConfig
    schedule: ClientSchedule = field(default_factory=ClientSchedule)
    cycles: int = 0

    @property
    def client_id(self) -> str:
        return self.profile.client_id


@dataclass(frozen=True)
class PendingUpdate:
    level: Level
    cluster_key: str | None
    snapshot: ModelSnapshot
    delta: TrainingDelta
    fetched_round: int


@dataclass(frozen=True)
class SessionOutcome:
    client_id: str
    cycle: int
    level: str
    model_key: str
    status: str
    fetched_round: int | None = None
    accepted_round: int | None = None
    samples: int = 0
    path: str = ""
    time: float = 0.0


def session_seed(base: int, cycle: int, tag: str) -> int:
    words = [int(base) & 0xFFFFFFFF, cycle] + list(tag.encode("utf-8"))
    return int(np.random.SeedSequence(words).generate_state(1)[0])


class FederationClient:
    def __init__(self, state: ClientState, proxy: ServerProxy, seed: int = 0):
        self.state = state
        self.proxy = proxy
        self.seed = seed
        self.outcomes: list[SessionOutcome] = []
        self.trained_days: list[tuple[int, int]] = []

    @classmethod
    def create(cls, profile: ClientProfile, series: SiteSeries, trainer: TrainerConfig,
               proxy: ServerProxy, schedule: ClientSchedule = ClientSchedule(),
               seed: int = 0, register: bool = True) -> "FederationClient":
        local = fresh_snapshot(trainer, seed=session_seed(seed, 0, "init-local"),
                               level=Level.LOCAL)
        assignment = proxy.register(profile).assignment if register else ClusterAssignment({})
        return cls(ClientState(profile, assignment, local, series, trainer, schedule), proxy, seed)

    @property
    def client_id(self) -> str:
        return self.state.client_id

    def refresh_assignments(self) -> ClusterAssignment:
        self.state.assignments = self.proxy.assignments(self.client_id)
        return self.state.assignments

    def preprocess(self, now_day: float | None = None) -> Dataset:
        """Examples from the most recent full days available at ``now_day``."""
        series = self.state.series
        end = series.n_days if now_day is None else min(series.n_days, int(now_day))
        start = max(0, end - HISTORY_DAYS)
        if end <= start:
            raise ClientError(f"{self.client_id}: no local data before day {now_day}")
        self.trained_days.append((start, end))
        return series_dataset(series.days(start, end))

    def _seed(self, tag: str) -> int:
        return session_seed(self.seed, self.state.cycles, tag)

    def train_local(self, data: Dataset) -> ModelSnapshot:
        local, _ = train_model(self.state.local_model, data, self.state.trainer,
                               seed=self._seed("local"))
        self.state.local_model = local
        return local

    def start_session(self, level: Level, key: str | None, data: Dataset) -> PendingUpdate:
        fetched = self.proxy.request_model(level, key)
        trained, delta = train_model(fetched, data, self.state.trainer,
                                     seed=self._seed(key or "global"))
        return PendingUpdate(level, key, trained, delta, fetched.meta.round)

    def submit(self, pending: PendingUpdate):
        return self.proxy.update_model(pending.level, pending.cluster_key, pending.snapshot,
                                       pending.delta, self.client_id)

    def record(self, level: Level, key: str | None, status: str, pending=None, ack=None,
               time: float = 0.0) -> SessionOutcome:
        out = SessionOutcome(
            self.client_id, self.state.cycles, Level(level).value, key or "global", status,
            fetched_round=pending.fetched_round if pending else None,
            accepted_round=ack.accepted_round if ack else None,
            samples=pending.delta.samples_learned if pending else 0,
            path=ack.path if ack else "", time=time)
        self.outcomes.append(out)
        return out

    def run_session(self, level: Level, key: str | None, data: Dataset) -> SessionOutcome:
        pending = ack = None
        try:
            pending = self.start_session(level, key, data)
            ack = self.submit(pending)
        except (TransportError, RemoteError) as exc:
            log.info("%s: %s session %s skipped: %s", self.client_id, level.value, key, exc)
            return self.record(level, key, "skipped", pending)
        except TrainingError as exc:
            log.warning("%s: %s session %s aborted: %s", self.client_id, level.value, key, exc)
            return self.record(level, key, "aborted")
        return self.record(level, key, "submitted", pending, ack)

    def run_training_cycle(self, now_day: float | None = None,
                           parallel: bool = True) -> list[SessionOutcome]:
        self.state.cycles += 1
        first = len(self.outcomes)
        try:
            self.refresh_assignments()
        except (TransportError, RemoteError) as exc:
            log.info("%s: keeping previous assignments: %s", self.client_id, exc)
        data = self.preprocess(now_day)
        try:
            self.train_local(data)
            self.record(Level.LOCAL, "local", "trained")
        except TrainingError as exc:
            log.warning("%s: local training aborted: %s", self.client_id, exc)
            self.record(Level.LOCAL, "local", "aborted")

        keys = self.state.assignments.keys()
        if parallel and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=len(keys)) as pool:
                list(pool.map(lambda k: self.run_session(Level.CLUSTER, k, data), keys))
        else:
            for k in keys:
                self.run_session(Level.CLUSTER, k, data)
        self.run_session(Level.GLOBAL, None, data)
        return self.outcomes[first:]

    def model_for(self, choice: str) -> ModelSnapshot:
        if choice == "local":
            return self.state.local_model
        if choice == "global":
            return self.proxy.request_model(Level.GLOBAL)
        dim = choice.split(":", 1)[1] if choice.startswith("cluster:") else choice
        key = self.state.assignments.key_for(Dimension(dim))
        if key is None:
            raise ClientError(f"{self.client_id} is NOISE in {dim}; no cluster model")
        return self.proxy.request_model(Level.CLUSTER, key)

    def default_choice(self) -> str:
        if self.state.assignments.key_for(Dimension.LOCATION) is not None:
            return "cluster:location"
        return "global"

    def predict_for_client(self, horizon: np.ndarray, model_choice: str | None = None,
                           model: ModelSnapshot | None = None,
                           actual_kw: Sequence[float] | None = None,
                           timestamps=None) -> ForecastSeries:
        """Forecast 96-step days from normalised feature rows, in kW."""
        horizon = np.asarray(horizon, dtype=float)
        if horizon.ndim != 2 or horizon.shape[0] % STEPS_PER_DAY or horizon.shape[1] != 7:
            raise ClientError("horizon must be whole days of 96 rows x 7 normalised features")
        if model is None:
            model = self.model_for(model_choice or self.default_choice())
        kwp = self.state.profile.kwp
        pred = np.asarray(predict(model, horizon)) * kwp
        actual = np.zeros_like(pred) if actual_kw is None else np.asarray(actual_kw, float)
        ts = np.arange(len(pred)) if timestamps is None else timestamps
        return ForecastSeries(self.client_id, ts, pred, actual, kwp)


def write_outcomes_csv(outcomes: Sequence[SessionOutcome], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", "cycle", "time", "level", "model_key", "status",
                    "fetched_round", "accepted_round", "samples", "path"])
        for o in outcomes:
            w.writerow([o.client_id, o.cycle, repr(round(o.time, 6)), o.level, o.model_key,
                        o.status, "" if o.fetched_round is None else o.fetched_round,
                        "" if o.accepted_round is None else o.accepted_round, o.samples, o.path])
