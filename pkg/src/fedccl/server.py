"""Three-tier model store and the server-side update handler.

Writes to one model are serialized by that model's FIFO lock; updates to
different models proceed concurrently. Reads return whatever immutable
snapshot is currently stored, so they never observe a half-finished
aggregation. Registration runs under its own lock.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from types import MappingProxyType
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .aggregation import AggregationConfig, aggregate_models, is_sequential
from .clustering import (
    NOISE, ClientProfile, ClusteringDimension, DEFAULT_LOCATION, DEFAULT_ORIENTATION,
    Dimension, IncrementalDBSCAN, cluster_key,
)
from .model import Level, ModelMeta, ModelSnapshot, ShapeMismatchError, TrainingDelta

log = logging.getLogger(__name__)

GLOBAL_KEY = "global"


class ServerError(Exception):
    code = "server_error"


class UnknownModel(ServerError):
    code = "unknown_model"


class DuplicateClient(ServerError):
    code = "duplicate_client"


class UnknownClient(ServerError):
    code = "unknown_client"


class InvalidRequest(ServerError):
    code = "invalid_request"


class LockTimeout(ServerError):
    code = "lock_timeout"


class FairLock:
    """Mutex granting the lock in arrival order."""

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._queue: deque[object] = deque()
        self._held = False

    def acquire(self, timeout: float | None = None) -> bool:
        me = object()
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            self._queue.append(me)
            while self._held or self._queue[0] is not me:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    self._queue.remove(me)
                    self._cond.notify_all()
                    return False
                self._cond.wait(remaining)
            self._queue.popleft()
            self._held = True
            return True

    def release(self) -> None:
        with self._cond:
            if not self._held:
                raise RuntimeError("release of unheld lock")
            self._held = False
            self._cond.notify_all()

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster id (or NOISE) per clustering dimension."""

    labels: Mapping[str, int]

    def keys(self) -> list[str]:
        return [cluster_key(dim, cid) for dim, cid in sorted(self.labels.items()) if cid != NOISE]

    def key_for(self, dim: Dimension | str) -> str | None:
        cid = self.labels.get(Dimension(dim).value, NOISE)
        return None if cid == NOISE else cluster_key(dim, cid)

    def is_noise(self, dim: Dimension | str) -> bool:
        return self.labels.get(Dimension(dim).value, NOISE) == NOISE


@dataclass(frozen=True)
class UpdateRecord:
    timestamp: float
    client_id: str | None
    model_key: str
    base_round: int
    result_round: int
    path: str
    samples_added: int


@dataclass
class Registration:
    assignment: ClusterAssignment
    merges: list[dict] = field(default_factory=list)
    created: list[str] = field(default_factory=list)


def _model_key(level: Level | str, key: str | None) -> str:
    level = Level(level)
    if level is Level.GLOBAL:
        return GLOBAL_KEY
    if level is Level.LOCAL:
        raise InvalidRequest("local models never leave the client")
    if not key:
        raise InvalidRequest("cluster requests need a cluster key")
    return key


class FederationServer:
    def __init__(self, initial_global: ModelSnapshot,
                 dimensions: Iterable[ClusteringDimension] = (DEFAULT_LOCATION, DEFAULT_ORIENTATION),
                 aggregation: AggregationConfig = AggregationConfig(),
                 clock: Callable[[], float] = time.time,
                 lock_timeout: float | None = None,
                 keep_history: bool = False):
        if initial_global.meta.level is not Level.GLOBAL:
            initial_global = initial_global.with_meta(level=Level.GLOBAL, cluster_key=None)
        self.aggregation = aggregation
        self.clock = clock
        self.lock_timeout = lock_timeout
        self._models: dict[str, ModelSnapshot] = {GLOBAL_KEY: initial_global}
        self._locks: dict[str, FairLock] = {GLOBAL_KEY: FairLock()}
        self._aliases: dict[str, str] = {}
        self._reg_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self.clustering = {d.name.value: IncrementalDBSCAN(d) for d in dimensions}
        self.profiles: dict[str, ClientProfile] = {}
        self._assignments: Mapping[str, ClusterAssignment] = MappingProxyType({})
        self.update_log: list[UpdateRecord] = []
        self.history: dict[str, list[tuple[ModelSnapshot, ModelSnapshot]]] | None = (
            {} if keep_history else None)

    # -- reads -----------------------------------------------------------

    def resolve(self, key: str) -> str:
        seen = set()
        while key in self._aliases:
            if key in seen:
                raise RuntimeError(f"alias cycle at {key}")
            seen.add(key)
            key = self._aliases[key]
        return key

    def model_keys(self) -> list[str]:
        return sorted(self._models)

    def request_model(self, level: Level | str, key: str | None = None) -> ModelSnapshot:
        requested = _model_key(level, key)
        target = self.resolve(requested)
        while True:
            snap = self._models.get(target)
            if snap is not None:
                return snap
            # a merge may have retired the model between resolve and lookup
            again = self.resolve(requested)
            if again == target:
                raise UnknownModel(f"no model stored under {key!r}")
            target = again

    def assignment(self, client_id: str) -> ClusterAssignment:
        try:
            return self._assignments[client_id]
        except KeyError:
            raise UnknownClient(f"client {client_id!r} is not registered") from None

    def assignments(self) -> Mapping[str, ClusterAssignment]:
        return self._assignments

    def _rebuild_assignments(self) -> None:
        per_dim = {name: state.labels() for name, state in self.clustering.items()}
        self._assignments = MappingProxyType({
            cid: ClusterAssignment(MappingProxyType({n: per_dim[n][cid] for n in per_dim}))
            for cid in self.profiles
        })

    # -- registration ----------------------------------------------------

    def register_client(self, profile: ClientProfile) -> Registration:
        with self._reg_lock:
            if profile.client_id in self.profiles:
                raise DuplicateClient(f"client {profile.client_id!r} already registered")
            self.profiles[profile.client_id] = profile
            reg = Registration(ClusterAssignment({}))
            for name, state in self.clustering.items():
                result = state.insert(profile)
                for ev in result.merges:
                    survivor = cluster_key(name, ev.survivor)
                    for retired_id in ev.retired:
                        retired = cluster_key(name, retired_id)
                        self._retire(retired, survivor)
                        reg.merges.append({"dimension": name, "survivor": survivor,
                                           "retired": retired})
                for cid in result.created:
                    key = cluster_key(name, cid)
                    self._create_cluster_model(key)
                    reg.created.append(key)
            self._rebuild_assignments()
            reg.assignment = self.assignment(profile.client_id)
            return reg

    def _create_cluster_model(self, key: str) -> None:
        g = self._models[GLOBAL_KEY]
        meta = ModelMeta(Level.CLUSTER, key, g.meta.samples_learned, g.meta.epochs_learned, 0)
        self._locks[key] = FairLock()
        self._models[key] = ModelSnapshot(meta, g.weights)
        log.info("created cluster model %s from global round %d", key, g.meta.round)

    def _retire(self, retired: str, survivor: str) -> None:
        lock = self._locks[retired]
        lock.acquire()
        try:
            self._aliases[retired] = survivor
            del self._models[retired]
        finally:
            lock.release()
        log.info("cluster %s merged into %s", retired, survivor)

    # -- updates ---------------------------------------------------------

    def handle_model_update(self, level: Level | str, key: str | None,
                            w_updated: ModelSnapshot, delta: TrainingDelta,
                            client_id: str | None = None) -> ModelSnapshot:
        return self.apply_update(level, key, w_updated, delta, client_id)[0]

    def apply_update(self, level: Level | str, key: str | None,
                     w_updated: ModelSnapshot, delta: TrainingDelta,
                     client_id: str | None = None) -> tuple[ModelSnapshot, UpdateRecord]:
        requested = _model_key(level, key)
        while True:
            target = self.resolve(requested)
            lock = self._locks.get(target)
            if lock is None:
                raise UnknownModel(f"no model stored under {key!r}")
            if not lock.acquire(self.lock_timeout):
                raise LockTimeout(f"timed out waiting for {target}")
            if target in self._models:
                break
            lock.release()  # merged away while we waited
        try:
            base = self._models[target]
            if base.weights.shapes != w_updated.weights.shapes:
                raise ShapeMismatchError(
                    f"update shapes {w_updated.weights.shapes} != stored {base.weights.shapes}")
            path = "shortcut" if is_sequential(base, w_updated) else "average"
            result = aggregate_models(base, w_updated, delta, self.aggregation)
            self._models[target] = result
            record = UpdateRecord(self.clock(), client_id, target, base.meta.round,
                                  result.meta.round, path, delta.samples_learned)
            with self._log_lock:
                self.update_log.append(record)
                if self.history is not None:
                    self.history.setdefault(target, []).append((base, result))
        finally:
            lock.release()
        log.debug("update %s by %s: round %d -> %d via %s", target, client_id,
                  record.base_round, record.result_round, path)
        return result, record
