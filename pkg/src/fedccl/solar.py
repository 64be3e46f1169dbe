"""Synthetic PV production and weather-forecast series.

Sites are laid out around a handful of regional centroids. Every region has
its own weather regime: a Markov chain of clear / mixed / overcast days with
an hourly autoregressive cloud perturbation on top, a regional forecast bias,
and an atmospheric clarity factor. Weather is produced hourly and repeated
over the four 15-minute steps of each hour, as a forecast feed would be.

Production for one step is::

    kwp * clarity * cos(lat - decl) * envelope(minute) * (1 - 0.75 * clouds / 100)
        * snow_mask * (1 + noise)

where ``envelope`` is a cosine bump over daylight whose peak sits at solar
noon shifted by (azimuth - 180) / 15 hours, and ``clouds`` is the site's
actual cover rather than the forecast the model gets to see.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .clustering import ClientProfile, solar_noon_minute

STEPS_PER_DAY = 96
STEP_MINUTES = 15
HISTORY_DAYS = 7

FEATURE_NAMES = (
    "solar_rad", "ghi", "snow_depth", "precip", "clouds", "minute_of_day", "day_of_year",
)
# observed maxima used as normalisation scales
FEATURE_MAX = np.array([956.2, 956.21, 1178.6, 14.78, 100.0, 1440.0, 365.0])
N_FEATURES = len(FEATURE_NAMES)

CLOUD_ATTENUATION = 0.75
SNOW_MASK_MM = 30.0
GHI_SCALE = 956.2
_DAY_STATE_LEVEL = np.array([-40.0, 35.0, 85.0])  # clear, mixed, overcast


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class WeatherRegime:
    clear_prob: float = 0.45
    overcast_prob: float = 0.2
    persistence: float = 0.55
    hourly_sd: float = 14.0
    hourly_ar: float = 0.8
    forecast_bias: float = 0.0
    forecast_sd: float = 6.0
    clarity: float = 1.0
    snow_factor: float = 1.0

    def __post_init__(self):
        if not 0 <= self.clear_prob + self.overcast_prob <= 1:
            raise ScenarioError("day-state probabilities must sum to at most 1")
        if not 0 < self.clarity <= 1:
            raise ScenarioError("clarity must lie in (0, 1]")


DEFAULT_CENTROIDS = ((48.21, 16.37), (47.26, 11.39), (50.11, 8.68))
DEFAULT_REGIMES = (
    WeatherRegime(clear_prob=0.45, forecast_bias=-10.0, clarity=0.86),
    WeatherRegime(clear_prob=0.35, overcast_prob=0.3, forecast_bias=12.0, clarity=1.0,
                  snow_factor=2.0),
    WeatherRegime(clear_prob=0.4, forecast_bias=0.0, clarity=0.93),
)


@dataclass(frozen=True)
class ScenarioSpec:
    n_clusters: int = 3
    sites_per_cluster: int = 8
    centroids: tuple[tuple[float, float], ...] = DEFAULT_CENTROIDS
    spread_km: float = 12.0
    azimuth_groups: tuple[float, ...] = (160.0, 200.0)
    azimuth_jitter: float = 4.0
    kwp_range: tuple[float, float] = (4.0, 40.0)
    regimes: tuple[WeatherRegime, ...] = DEFAULT_REGIMES
    n_days: int = 120
    start_day_of_year: int = 60
    year: int = 2023
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.sites_per_cluster < 1:
            raise ScenarioError("need at least one cluster and one site per cluster")
        if self.n_days < 2 * HISTORY_DAYS:
            raise ScenarioError(f"n_days must be >= {2 * HISTORY_DAYS}")
        if not 1 <= self.start_day_of_year <= 365:
            raise ScenarioError("start_day_of_year must be in [1, 365]")
        if self.spread_km < 0 or self.azimuth_jitter < 0 or self.noise < 0:
            raise ScenarioError("spread, jitter and noise must be non-negative")
        if not self.azimuth_groups:
            raise ScenarioError("need at least one azimuth group")
        lo, hi = self.kwp_range
        if not 0 < lo <= hi:
            raise ScenarioError("kwp_range must satisfy 0 < low <= high")
        if self.noise >= 1:
            raise ScenarioError("noise must be < 1")

    @property
    def n_sites(self) -> int:
        return self.n_clusters * self.sites_per_cluster

    def centroid(self, cluster: int) -> tuple[float, float]:
        if cluster < len(self.centroids):
            return self.centroids[cluster]
        rng = np.random.default_rng([self.seed, 7, cluster])
        return float(rng.uniform(46.0, 52.0)), float(rng.uniform(6.0, 18.0))

    def regime(self, cluster: int) -> WeatherRegime:
        if cluster < len(self.regimes):
            return self.regimes[cluster]
        rng = np.random.default_rng([self.seed, 8, cluster])
        return WeatherRegime(forecast_bias=float(rng.uniform(-12, 12)),
                             clarity=float(rng.uniform(0.82, 1.0)))


@dataclass(frozen=True)
class SiteInfo:
    site_id: str
    cluster: int
    latitude: float
    longitude: float
    azimuth: float
    kwp: float

    def profile(self) -> ClientProfile:
        return ClientProfile(self.site_id, self.latitude, self.longitude,
                             self.azimuth, self.kwp)


@dataclass(eq=False)
class SiteSeries:
    site_id: str
    timestamps: np.ndarray
    solar_rad: np.ndarray
    ghi: np.ndarray
    snow_depth: np.ndarray
    precip: np.ndarray
    clouds: np.ndarray
    minute_of_day: np.ndarray
    day_of_year: np.ndarray
    production_kw: np.ndarray
    kwp: float

    def __len__(self) -> int:
        return len(self.production_kw)

    @property
    def n_days(self) -> int:
        return len(self) // STEPS_PER_DAY

    def raw_features(self) -> np.ndarray:
        return np.column_stack([getattr(self, name) for name in FEATURE_NAMES]).astype(float)

    def days(self, start: int, stop: int) -> "SiteSeries":
        sl = slice(start * STEPS_PER_DAY, stop * STEPS_PER_DAY)
        return SiteSeries(self.site_id, self.timestamps[sl],
                          *(getattr(self, n)[sl] for n in FEATURE_NAMES),
                          self.production_kw[sl], self.kwp)

    def equals(self, other: "SiteSeries") -> bool:
        if self.site_id != other.site_id or self.kwp != other.kwp:
            return False
        names = ("timestamps",) + FEATURE_NAMES + ("production_kw",)
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)


def declination(day_of_year) -> np.ndarray:
    return np.radians(23.45) * np.sin(2 * np.pi * (284 + np.asarray(day_of_year)) / 365.0)


def half_day_minutes(latitude: float, day_of_year) -> np.ndarray:
    x = -math.tan(math.radians(latitude)) * np.tan(declination(day_of_year))
    return np.degrees(np.arccos(np.clip(x, -1.0, 1.0))) / 15.0 * 60.0


def noon_peak_factor(latitude: float, day_of_year) -> np.ndarray:
    return np.clip(np.cos(math.radians(latitude) - declination(day_of_year)), 0.0, 1.0)


def clearsky_factor(day_of_year, minute, latitude: float, longitude: float,
                    azimuth: float = 180.0) -> np.ndarray:
    """Clear-sky production as a fraction of kWp, before regional clarity."""
    doy = np.asarray(day_of_year, dtype=float)
    m = np.asarray(minute, dtype=float)
    half = half_day_minutes(latitude, doy)
    noon = solar_noon_minute(longitude)
    daylight = np.abs(m - noon) < half
    peak = noon + (azimuth - 180.0) * 4.0
    with np.errstate(divide="ignore", invalid="ignore"):
        shape = np.cos(0.5 * np.pi * (m - peak) / np.where(half > 0, half, 1.0))
    shape = np.where(daylight & (np.abs(m - peak) < half), np.maximum(shape, 0.0), 0.0)
    return noon_peak_factor(latitude, doy) * shape


def _timeline(spec: ScenarioSpec):
    n = spec.n_days * STEPS_PER_DAY
    start = np.datetime64(f"{spec.year}-01-01T00:00") + np.timedelta64(
        spec.start_day_of_year - 1, "D")
    ts = start + np.arange(n) * np.timedelta64(STEP_MINUTES, "m")
    minute = (np.arange(n) % STEPS_PER_DAY) * STEP_MINUTES
    day_offset = np.arange(n) // STEPS_PER_DAY
    doy = (spec.start_day_of_year - 1 + day_offset) % 365 + 1
    return ts, minute, doy


def _hourly_to_steps(x: np.ndarray) -> np.ndarray:
    return np.repeat(x, STEPS_PER_DAY // 24)


@functools.lru_cache(maxsize=64)
def _regional_weather(spec: ScenarioSpec, cluster: int) -> dict[str, np.ndarray]:
    reg = spec.regime(cluster)
    rng = np.random.default_rng([spec.seed, 0, cluster])
    n_days, n_hours = spec.n_days, spec.n_days * 24

    p = np.array([reg.clear_prob, 1 - reg.clear_prob - reg.overcast_prob, reg.overcast_prob])
    states = np.empty(n_days, dtype=int)
    states[0] = rng.choice(3, p=p)
    for d in range(1, n_days):
        states[d] = states[d - 1] if rng.random() < reg.persistence else rng.choice(3, p=p)

    ar = np.empty(n_hours)
    ar[0] = rng.normal(0, reg.hourly_sd)
    eps = rng.normal(0, reg.hourly_sd * math.sqrt(1 - reg.hourly_ar ** 2), n_hours)
    for t in range(1, n_hours):
        ar[t] = reg.hourly_ar * ar[t - 1] + eps[t]
    latent = np.repeat(_DAY_STATE_LEVEL[states], 24) + ar
    fc_err = rng.normal(0, reg.forecast_sd, n_hours)
    forecast_latent = latent + reg.forecast_bias + fc_err
    clouds_fc = np.clip(forecast_latent, 0.0, 100.0)

    rain = forecast_latent > 70.0
    precip = np.where(rain, rng.gamma(1.2, 1.0, n_hours) * (forecast_latent - 70.0) / 30.0, 0.0)
    precip = np.clip(precip, 0.0, 14.78)

    _, _, doy_steps = _timeline(spec)
    doy_days = doy_steps[::STEPS_PER_DAY]
    cold = (doy_days < 95) | (doy_days > 320)
    daily_precip = precip.reshape(n_days, 24).sum(axis=1)
    snow = np.empty(n_days)
    depth = 0.0
    for d in range(n_days):
        depth *= 0.8
        if cold[d]:
            depth += 8.0 * reg.snow_factor * daily_precip[d]
        snow[d] = min(depth, 1178.6)

    lat, lon = spec.centroid(cluster)
    _, minute, doy = _timeline(spec)
    noon = solar_noon_minute(lon)
    half = half_day_minutes(lat, doy)
    with np.errstate(invalid="ignore"):
        horiz = np.where(np.abs(minute - noon) < half,
                         np.cos(0.5 * np.pi * (minute - noon) / np.maximum(half, 1.0)), 0.0)
    horiz = np.maximum(horiz, 0.0) * noon_peak_factor(lat, doy)
    ghi_hourly = horiz.reshape(n_hours, 4).mean(axis=1) * GHI_SCALE
    solar_hourly = ghi_hourly * (1.0 - CLOUD_ATTENUATION * clouds_fc / 100.0)

    return {
        "latent": latent,
        "clouds": clouds_fc,
        "precip": precip,
        "snow_daily": snow,
        "ghi": np.minimum(ghi_hourly, FEATURE_MAX[1]),
        "solar_rad": np.minimum(solar_hourly, FEATURE_MAX[0]),
    }


def site_info(spec: ScenarioSpec, site_index: int) -> SiteInfo:
    if not 0 <= site_index < spec.n_sites:
        raise ScenarioError(f"site index {site_index} out of range")
    cluster, within = divmod(site_index, spec.sites_per_cluster)
    rng = np.random.default_rng([spec.seed, 1, site_index])
    lat0, lon0 = spec.centroid(cluster)
    dn, de = rng.normal(0.0, spec.spread_km, 2) if spec.spread_km > 0 else (0.0, 0.0)
    lat = lat0 + dn / 111.2
    lon = lon0 + de / (111.2 * math.cos(math.radians(lat0)))
    group = spec.azimuth_groups[within % len(spec.azimuth_groups)]
    az = (group + rng.uniform(-spec.azimuth_jitter, spec.azimuth_jitter)) % 360.0
    lo, hi = spec.kwp_range
    kwp = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    return SiteInfo(f"site-{site_index:03d}", cluster, float(lat), float(lon), float(az),
                    round(kwp, 3))


def generate_site(spec: ScenarioSpec, site_index: int) -> SiteSeries:
    info = site_info(spec, site_index)
    weather = _regional_weather(spec, info.cluster)
    reg = spec.regime(info.cluster)
    rng = np.random.default_rng([spec.seed, 2, site_index])
    ts, minute, doy = _timeline(spec)

    n_hours = spec.n_days * 24
    local_latent = weather["latent"] + rng.normal(0.0, 4.0, n_hours)
    clouds_actual = _hourly_to_steps(np.clip(local_latent, 0.0, 100.0))
    snow = np.repeat(weather["snow_daily"], STEPS_PER_DAY)
    ghi = _hourly_to_steps(weather["ghi"])

    power = clearsky_factor(doy, minute, info.latitude, info.longitude, info.azimuth)
    power = power * reg.clarity * (1.0 - CLOUD_ATTENUATION * clouds_actual / 100.0)
    if spec.noise > 0:
        power = power * (1.0 + rng.uniform(-spec.noise, spec.noise, len(power)))
    power = np.where((snow > SNOW_MASK_MM) | (ghi <= 0), 0.0, power)
    production = np.clip(power, 0.0, 1.0) * info.kwp

    return SiteSeries(
        site_id=info.site_id,
        timestamps=ts,
        solar_rad=_hourly_to_steps(weather["solar_rad"]),
        ghi=ghi,
        snow_depth=snow,
        precip=_hourly_to_steps(weather["precip"]),
        clouds=_hourly_to_steps(weather["clouds"]),
        minute_of_day=minute.astype(float),
        day_of_year=doy.astype(float),
        production_kw=production,
        kwp=info.kwp,
    )


def generate_scenario(spec: ScenarioSpec) -> tuple[list[SiteInfo], list[SiteSeries]]:
    infos = [site_info(spec, i) for i in range(spec.n_sites)]
    return infos, [generate_site(spec, i) for i in range(spec.n_sites)]


def normalize_features(raw) -> np.ndarray:
    """Scale raw feature rows (7 columns, or one row) into [0, 1]."""
    arr = np.asarray(raw, dtype=float)
    if arr.shape[-1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features, got {arr.shape[-1]}")
    if not np.isfinite(arr).all():
        raise ValueError("raw features must be finite")
    if (arr < 0).any():
        raise ValueError("raw feature values must be non-negative")
    return np.clip(arr / FEATURE_MAX, 0.0, 1.0)


@dataclass(frozen=True)
class TrainingExample:
    features: np.ndarray
    target: float

    def __post_init__(self):
        if not np.isfinite(self.features).all() or not math.isfinite(self.target):
            raise ValueError("training example must be finite")
        if not 0.0 <= self.target <= 1.0:
            raise ValueError("target must lie in [0, 1]")


@dataclass(eq=False)
class Dataset:
    """Normalised examples in matrix form; iterating yields TrainingExample."""

    X: np.ndarray
    y: np.ndarray
    timestamps: np.ndarray = field(default=None)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        self.X = X.reshape(len(self.y), -1) if X.size else X.reshape(0, N_FEATURES)
        if len(self.X) != len(self.y):
            raise ValueError("features and targets differ in length")

    def __len__(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[TrainingExample]:
        for x, t in zip(self.X, self.y):
            yield TrainingExample(x, float(t))

    @classmethod
    def from_examples(cls, examples: Sequence[TrainingExample]) -> "Dataset":
        examples = list(examples)
        if not examples:
            return cls(np.zeros((0, N_FEATURES)), np.zeros(0))
        return cls(np.stack([e.features for e in examples]), np.array([e.target for e in examples]))

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        ts = None
        if all(p.timestamps is not None for p in parts):
            ts = np.concatenate([p.timestamps for p in parts])
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]), ts)


def series_dataset(series: SiteSeries) -> Dataset:
    return Dataset(normalize_features(series.raw_features()),
                   np.clip(series.production_kw / series.kwp, 0.0, 1.0),
                   series.timestamps)


def train_test_days(n_days: int, train_fraction: float = 0.8) -> int:
    """Number of leading days that go to training."""
    n_train = int(math.floor(n_days * train_fraction + 1e-9))
    return max(1, min(n_days - 1, n_train))


def split_series(series: SiteSeries, train_fraction: float = 0.8) -> tuple[SiteSeries, SiteSeries]:
    if series.n_days < 2 * HISTORY_DAYS:
        raise ScenarioError(f"series has {series.n_days} days; need >= {2 * HISTORY_DAYS}")
    k = train_test_days(series.n_days, train_fraction)
    return series.days(0, k), series.days(k, series.n_days)


def make_examples(series: SiteSeries, train_fraction: float = 0.8) -> tuple[Dataset, Dataset]:
    """Chronological split on day boundaries, one example per 15-minute step."""
    train, test = split_series(series, train_fraction)
    return series_dataset(train), series_dataset(test)


CSV_COLUMNS = ("timestamp",) + FEATURE_NAMES + ("production_kw", "kwp")


def write_series_csv(series: SiteSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cols = [getattr(series, n) for n in FEATURE_NAMES]
        for i, ts in enumerate(series.timestamps):
            w.writerow([str(ts)] + [repr(float(c[i])) for c in cols]
                       + [repr(float(series.production_kw[i])), repr(float(series.kwp))])


def read_series_csv(path, site_id: str | None = None) -> SiteSeries:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ScenarioError(f"{path}: no rows")
    missing = set(CSV_COLUMNS) - set(rows[0])
    if missing:
        raise ScenarioError(f"{path}: missing columns {sorted(missing)}")
    col = {n: np.array([float(r[n]) for r in rows]) for n in CSV_COLUMNS[1:]}
    return SiteSeries(
        site_id=site_id or path.stem,
        timestamps=np.array([np.datetime64(r["timestamp"], "m") for r in rows]),
        **{n: col[n] for n in FEATURE_NAMES},
        production_kw=col["production_kw"],
        kwp=float(col["kwp"][0]),
    )
