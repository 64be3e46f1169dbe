import dataclasses

import numpy as np
import pytest

from fedccl.harness import (
    BASELINE_COLUMNS, TIER_COLUMNS, ConfigError, ExperimentConfig, InvariantViolation,
    build_population, check_invariants, chunk_bounds, config_from_dict, forecast, load_config,
    raw_payload_hits, run_baseline_centralized_all, run_baseline_centralized_continual,
    run_experiment, run_federated, run_federated_threaded, run_predict_evolve, start_federation,
)
from fedccl.clustering import NOISE, ClientProfile, location_distance
from fedccl.metrics import summarize
from fedccl.model import Level
from fedccl.protocol import UpdateModel, decode_message, frame_type
from fedccl.solar import ScenarioSpec
from fedccl.trainer import fresh_snapshot

SMALL = ExperimentConfig(scenario=ScenarioSpec(sites_per_cluster=4, n_days=40),
                         cycles=4, evolve_cycles=2, heldout_per_cluster=1, seed=3)


def test_config_loading(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text("""
seed = 9
cycles = 12
heldout_sites = ["site-000"]

[scenario]
n_clusters = 2
sites_per_cluster = 5
n_days = 60
azimuth_groups = [170, 210]

[trainer]
hidden_sizes = [8]
epochs = 3

[aggregation]
weighting_mode = "delta"

[clustering.location]
eps = 40.0
""")
    cfg = load_config(path)
    assert cfg.seed == 9 and cfg.cycles == 12 and cfg.heldout_sites == ("site-000",)
    assert cfg.scenario.azimuth_groups == (170.0, 210.0)
    assert cfg.trainer.hidden_sizes == (8,) and cfg.aggregation.weighting_mode == "delta"
    assert cfg.location.eps == 40.0 and cfg.location.min_pts == 3
    assert cfg.for_run(2).seed == 11


@pytest.mark.parametrize("raw", [
    {"runs": 0}, {"bogus": 1}, {"trainer": {"learning_rate": -1}},
    {"scenario": {"n_days": 5}}, {"clustering": {"altitude": {}}},
    {"baselines": ["centralized_magic"]}, {"aggregation": {"weighting_mode": "median"}},
    {"heldout_per_cluster": 8},
])
def test_config_errors(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_bad_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("cycles = = 3")
    with pytest.raises(ConfigError):
        load_config(path)


def test_population_and_heldout_selection():
    pop = build_population(SMALL)
    assert len(pop.heldout_ids) == 3 and len(pop.training_ids) == 9
    assert not set(pop.heldout_ids) & set(pop.training_ids)
    # each held-out site is the one nearest its cluster's mean position
    for hid in pop.heldout_ids:
        c = pop.info(hid).cluster
        members = [i for i in pop.infos if i.cluster == c]
        lat = np.mean([i.latitude for i in members])
        lon = np.mean([i.longitude for i in members])
        centre = ClientProfile("c", float(lat), float(lon), 180.0, 1.0)
        d = {i.site_id: location_distance(i.profile(), centre) for i in members}
        assert d[hid] == min(d.values())
    with pytest.raises(ConfigError):
        build_population(dataclasses.replace(SMALL, heldout_sites=("site-999",)))


def test_chunks_are_day_aligned():
    assert chunk_bounds(16) == [(0, 7), (7, 14), (14, 16)]
    assert chunk_bounds(7) == [(0, 7)]


def test_centralized_all_pooling_and_determinism():
    pop = build_population(SMALL)
    a = run_baseline_centralized_all(SMALL, pop)
    assert a.n_examples == sum(len(pop.train[s]) for s in pop.training_ids)
    assert run_baseline_centralized_all(SMALL).report == a.report


def test_zero_epochs_gives_zero_model():
    cfg = dataclasses.replace(SMALL, centralized_epochs=0)
    pop = build_population(cfg)
    for res in (run_baseline_centralized_all(cfg, pop),
                run_baseline_centralized_continual(cfg, pop)):
        assert not res.model.weights.flat().any()
        zero = summarize([forecast(fresh_snapshot(cfg.trainer, zero=True), pop.test[s])
                          for s in pop.training_ids])
        assert res.report == zero


def test_single_chunk_continual_equals_all():
    cfg = dataclasses.replace(SMALL, scenario=dataclasses.replace(SMALL.scenario, n_days=14),
                              train_fraction=0.5)
    pop = build_population(cfg)
    assert pop.n_train_days == 7
    a = run_baseline_centralized_all(cfg, pop)
    c = run_baseline_centralized_continual(cfg, pop)
    assert a.model == c.model and a.report == c.report


def test_one_client_one_cycle_global_is_its_training_result():
    cfg = ExperimentConfig(scenario=ScenarioSpec(n_clusters=1, sites_per_cluster=2, n_days=30),
                           cycles=1, heldout_per_cluster=1, seed=1)
    run = run_federated(cfg)
    (client,) = run.clients.values()
    assert [r.path for r in run.server.update_log] == ["shortcut"]
    submitted = [f for d, f in run.frame_log.frames if d == "c2s"
                 and frame_type(f) is UpdateModel]
    sent = decode_message(submitted[0]).snapshot
    assert run.server.request_model(Level.GLOBAL) == sent


def test_federated_run_invariants_and_privacy():
    run = run_predict_evolve(SMALL)
    check_invariants(run)
    assert raw_payload_hits(run) == 0
    for t in ("global", "location", "orientation", "local"):
        for prefix in ("", "predict_", "evolve_"):
            assert prefix + t in run.reports
    # held-out sites do no training until their evolve phase
    for sid in run.pop.heldout_ids:
        times = [o.time for o in run.clients[sid].outcomes]
        assert times and min(times) >= run.evolve_start
    assert run.server.assignment(run.pop.heldout_ids[0]).labels["location"] != NOISE


def test_invariant_checker_catches_tampering():
    run = run_federated(SMALL)
    check_invariants(run)
    key = next(iter(run.deltas))
    run.deltas[key].append(1)
    with pytest.raises(InvariantViolation):
        check_invariants(run)


def test_heldout_collision_rejected():
    run = start_federation(SMALL)
    run.pop.heldout_ids.append(run.pop.training_ids[0])
    with pytest.raises(ConfigError):
        run_predict_evolve(SMALL, run)


def test_experiment_is_reproducible():
    a = run_experiment(SMALL)
    b = run_experiment(SMALL)
    assert set(a.columns) == set(TIER_COLUMNS.values()) | set(BASELINE_COLUMNS.values())
    assert a.columns == b.columns and a.heldout == b.heldout
    assert a.degradation("location", "predict") == pytest.approx(
        a.heldout["predict_location"].mean_error_power
        - a.columns["Federated Location"].mean_error_power)


def test_threaded_mode_over_sockets():
    run = run_federated_threaded(SMALL)
    check_invariants(run)
    assert raw_payload_hits(run) == 0
    g = run.server.request_model(Level.GLOBAL)
    assert g.meta.round == len(run.pop.training_ids) * SMALL.cycles


def test_shipped_default_config_matches_defaults():
    from pathlib import Path
    path = Path(__file__).resolve().parent.parent / "configs" / "default.toml"
    assert load_config(path) == ExperimentConfig()


def test_schedule_interval_and_availability():
    sched = dataclasses.replace(SMALL.schedule, mean_interval_days=1.0, jitter=0.0,
                                leave_day=12.0)
    cfg = dataclasses.replace(SMALL, schedule=sched, cycles=10)
    run = run_federated(cfg)
    check_invariants(run)
    times = sorted({o.time for o in run.outcomes if o.level == "local"})
    assert times and max(times) < 12.0
    gaps = np.diff([o.time for o in run.clients[run.pop.training_ids[0]].outcomes
                    if o.level == "local"])
    # the pause between cycles comes on top of the two session phases (<= 3 h each)
    assert ((gaps >= 1.0) & (gaps <= 1.0 + 2 * 3.0 / 24)).all()
