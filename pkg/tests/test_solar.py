import math

import numpy as np
import pytest

from fedccl.solar import (
    FEATURE_MAX, FEATURE_NAMES, SNOW_MASK_MM, STEPS_PER_DAY, ScenarioError, ScenarioSpec,
    WeatherRegime, clearsky_factor, generate_scenario, generate_site, make_examples,
    normalize_features, read_series_csv, site_info, write_series_csv,
)

SMALL = ScenarioSpec(n_clusters=2, sites_per_cluster=3, n_days=30, seed=4)


def test_spec_validation():
    for bad in (dict(n_days=13), dict(n_clusters=0), dict(kwp_range=(0, 1)),
                dict(noise=1.0), dict(azimuth_groups=()), dict(start_day_of_year=366)):
        with pytest.raises(ScenarioError):
            ScenarioSpec(**bad)
    with pytest.raises(ScenarioError):
        site_info(SMALL, SMALL.n_sites)


def test_midnight_is_dark():
    for i in range(SMALL.n_sites):
        s = generate_site(SMALL, i)
        assert (s.production_kw[s.minute_of_day == 0] == 0).all()
        assert (s.production_kw[s.ghi == 0] == 0).all()


def declination_deg(doy):
    return 23.45 * math.sin(math.radians(360.0 * (284 + doy) / 365.0))


def test_clear_noon_matches_closed_form():
    regime = WeatherRegime(clear_prob=1.0, overcast_prob=0.0, hourly_sd=0.0, clarity=1.0)
    spec = ScenarioSpec(n_clusters=1, sites_per_cluster=1, centroids=((48.0, 15.0),),
                        spread_km=0.0, azimuth_groups=(180.0,), azimuth_jitter=0.0,
                        regimes=(regime,), noise=0.0, n_days=20, start_day_of_year=150, seed=2)
    s = generate_site(spec, 0)
    noon = s.minute_of_day == 720
    assert s.clouds[noon].max() == 0
    expected = [s.kwp * math.cos(math.radians(48.0 - declination_deg(d)))
                for d in s.day_of_year[noon]]
    np.testing.assert_allclose(s.production_kw[noon], expected, rtol=1e-12)
    # peak shifts by four minutes per degree of azimuth
    morning = clearsky_factor(172, np.arange(0, 1440, 15), 48.0, 15.0, azimuth=150.0)
    assert np.arange(0, 1440, 15)[np.argmax(morning)] == 600


def test_snow_masks_production():
    spec = ScenarioSpec(n_clusters=2, sites_per_cluster=2, n_days=60, start_day_of_year=1,
                        seed=3)
    masked = 0
    for i in range(spec.n_sites):
        s = generate_site(spec, i)
        snowy = s.snow_depth > SNOW_MASK_MM
        masked += snowy.sum()
        assert (s.production_kw[snowy] == 0).all()
    assert masked > 0


def test_physical_invariants():
    _, sites = generate_scenario(SMALL)
    for s in sites:
        assert len(s) == SMALL.n_days * STEPS_PER_DAY
        assert ((0 <= s.production_kw) & (s.production_kw <= s.kwp)).all()
        assert (s.ghi >= s.solar_rad).all() and (s.solar_rad >= 0).all()
        raw = s.raw_features()
        assert ((raw >= 0) & (raw <= FEATURE_MAX)).all()
        for name in ("solar_rad", "ghi", "snow_depth", "precip", "clouds"):
            hours = getattr(s, name).reshape(-1, 4)
            assert (hours == hours[:, :1]).all(), name


def test_deterministic():
    a = generate_site(SMALL, 2)
    b = generate_site(ScenarioSpec(n_clusters=2, sites_per_cluster=3, n_days=30, seed=4), 2)
    assert a.equals(b)
    assert not a.equals(generate_site(ScenarioSpec(n_clusters=2, sites_per_cluster=3,
                                                   n_days=30, seed=5), 2))


def test_cluster_signal():
    spec = ScenarioSpec()
    infos, sites = generate_scenario(spec)
    daily = np.array([s.production_kw.reshape(-1, STEPS_PER_DAY).sum(axis=1) / s.kwp
                      for s in sites])
    r = np.corrcoef(daily)
    within, across = [], []
    for i in range(len(infos)):
        for j in range(i + 1, len(infos)):
            (within if infos[i].cluster == infos[j].cluster else across).append(r[i, j])
    assert np.mean(within) - np.mean(across) >= 0.1


def test_normalize_examples():
    row = np.zeros(7)
    row[0] = 956.2
    assert normalize_features(row)[0] == 1.0
    assert not normalize_features(np.zeros(7)).any()
    row = np.zeros(7)
    row[FEATURE_NAMES.index("minute_of_day")] = 720
    assert normalize_features(row)[5] == 0.5
    with pytest.raises(ValueError):
        normalize_features(-np.ones(7))
    with pytest.raises(ValueError):
        normalize_features(np.ones(6))


def test_make_examples_split():
    spec = ScenarioSpec(n_clusters=1, sites_per_cluster=1, n_days=100, seed=1)
    s = generate_site(spec, 0)
    train, test = make_examples(s)
    assert len(train) == 80 * STEPS_PER_DAY and len(test) == 20 * STEPS_PER_DAY
    assert not set(train.timestamps.tolist()) & set(test.timestamps.tolist())
    assert test.timestamps[0] - train.timestamps[-1] == np.timedelta64(15, "m")
    assert str(test.timestamps[0]).endswith("T00:00")
    assert ((train.X >= 0) & (train.X <= 1)).all()
    with pytest.raises(ScenarioError):
        make_examples(s.days(0, 13))


def test_csv_round_trip(tmp_path):
    s = generate_site(SMALL, 1)
    path = tmp_path / "site-001.csv"
    write_series_csv(s, path)
    assert read_series_csv(path).equals(s)
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(ScenarioError):
        read_series_csv(tmp_path / "empty.csv")
