//! Synthetic multi-station scenario driven by the same conduction column
//! as the forecaster plus a traffic-hour heat source.

use chrono::{DateTime, TimeDelta, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::anomaly::{InjectionKind, InjectionSpec};
use crate::channel::{Channel, ChannelValues};
use crate::data::{Forcing, StationSeries};
use crate::energy_balance::{
    step_profile, surface_flux, ColumnConfig, SurfaceMeteo, SurfaceParams, KELVIN, STEFAN_BOLTZMANN,
};
use crate::features::DEFAULT_LAG_WINDOW;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherDriver {
    pub air_mean: f64,
    /// Half the daily air temperature range, °C.
    pub air_diurnal: f64,
    /// Standard deviation of the slow air temperature anomaly, °C.
    pub air_anomaly: f64,
    /// Lag-1 correlation of the hourly air anomaly.
    pub air_persistence: f64,
    /// Spread of per-station climate offsets, °C.
    pub station_spread: f64,
    /// Clear-sky noon shortwave, W/m².
    pub shortwave_peak: f64,
    pub cloud_mean: f64,
    pub cloud_sd: f64,
    pub cloud_persistence: f64,
    pub humidity_mean: f64,
    pub humidity_diurnal: f64,
    pub humidity_sd: f64,
    pub humidity_persistence: f64,
    pub wind_mean: f64,
}

impl Default for WeatherDriver {
    fn default() -> Self {
        WeatherDriver {
            air_mean: 1.0,
            air_diurnal: 4.0,
            air_anomaly: 2.5,
            air_persistence: 0.97,
            station_spread: 1.5,
            shortwave_peak: 450.0,
            cloud_mean: 0.5,
            cloud_sd: 0.25,
            cloud_persistence: 0.9,
            humidity_mean: 80.0,
            humidity_diurnal: 10.0,
            humidity_sd: 6.0,
            humidity_persistence: 0.9,
            wind_mean: 3.0,
        }
    }
}

/// Heat released by traffic: two Gaussian rush-hour bumps per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficHeat {
    /// Peak flux, W/m².
    pub amplitude: f64,
    pub morning_peak: f64,
    pub evening_peak: f64,
    /// Bump width (standard deviation), hours.
    pub width: f64,
}

impl Default for TrafficHeat {
    fn default() -> Self {
        TrafficHeat {
            amplitude: 150.0,
            morning_peak: 8.0,
            evening_peak: 17.5,
            width: 1.5,
        }
    }
}

impl TrafficHeat {
    /// Flux at fractional hour of day `hour`.
    pub fn flux(&self, hour: f64) -> f64 {
        let bump = |c: f64| {
            // distance on the 24 h circle
            let d = (hour - c).rem_euclid(24.0);
            let d = d.min(24.0 - d);
            (-0.5 * (d / self.width).powi(2)).exp()
        };
        self.amplitude * (bump(self.morning_peak) + bump(self.evening_peak))
    }
}

/// Observation noise standard deviations per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub air: f64,
    pub road: f64,
    pub underground: f64,
    pub humidity: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        SensorNoise {
            air: 0.1,
            road: 0.1,
            underground: 0.05,
            humidity: 1.0,
        }
    }
}

impl SensorNoise {
    fn get(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Air => self.air,
            Channel::Road => self.road,
            Channel::Underground => self.underground,
            Channel::Humidity => self.humidity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkScenario {
    pub stations: usize,
    pub holdout_stations: usize,
    pub days: usize,
    pub holdout_days: usize,
    pub cadence_minutes: i64,
    pub start: DateTime<Utc>,
    /// Simulated hours discarded before `start`.
    pub spin_up_hours: usize,
    pub weather: WeatherDriver,
    pub traffic: TrafficHeat,
    pub noise: SensorNoise,
    /// Injection templates for the detector benchmark; seeds are
    /// re-derived per station and channel.
    pub injection: Vec<InjectionSpec>,
    /// Denser templates corrupting the held-out inputs of the forecast
    /// benchmark.
    pub corruption: Vec<InjectionSpec>,
    pub column: ColumnConfig,
    pub surface: SurfaceParams,
    pub seed: u64,
}

impl Default for BenchmarkScenario {
    fn default() -> Self {
        BenchmarkScenario {
            stations: 4,
            holdout_stations: 1,
            days: 28,
            holdout_days: 7,
            cadence_minutes: 60,
            start: Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap(),
            spin_up_hours: 72,
            weather: WeatherDriver::default(),
            traffic: TrafficHeat::default(),
            noise: SensorNoise::default(),
            injection: InjectionSpec::default_suite(0),
            corruption: default_corruption(),
            column: ColumnConfig::default(),
            surface: SurfaceParams::default(),
            seed: 7,
        }
    }
}

impl BenchmarkScenario {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::SpecInvalid(m));
        if self.stations < 4 {
            return bad(format!("need at least 4 stations, got {}", self.stations));
        }
        if self.holdout_stations == 0 || self.holdout_stations >= self.stations - 1 {
            return bad("holdout must leave at least 2 training stations".into());
        }
        if self.days < 14 {
            return bad(format!("span must be at least 14 days, got {}", self.days));
        }
        if self.holdout_days == 0 || self.holdout_days >= self.days {
            return bad("holdout tail must be shorter than the span".into());
        }
        if self.cadence_minutes != 60 {
            return bad("only hourly cadence is supported".into());
        }
        self.column.validate().map_err(|e| EvalError::SpecInvalid(e.to_string()))?;
        self.surface.validate().map_err(|e| EvalError::SpecInvalid(e.to_string()))?;
        for s in self.injection.iter().chain(&self.corruption) {
            s.validate().map_err(|e| EvalError::SpecInvalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        self.days * 24
    }

    /// First slot of the held-out time tail.
    pub fn split_slot(&self) -> usize {
        (self.days - self.holdout_days) * 24
    }

    pub fn station_id(i: usize) -> String {
        format!("S{:02}", i + 1)
    }

    /// Injection specs for one station, with seeds unique to the station,
    /// channel and purpose.
    pub fn injection_for(&self, purpose: u64, station: usize, channel: Channel) -> Vec<InjectionSpec> {
        self.reseed(&self.injection, purpose, station, channel)
    }

    pub fn corruption_for(&self, purpose: u64, station: usize, channel: Channel) -> Vec<InjectionSpec> {
        self.reseed(&self.corruption, purpose, station, channel)
    }

    fn reseed(&self, specs: &[InjectionSpec], purpose: u64, station: usize, channel: Channel) -> Vec<InjectionSpec> {
        let stream = purpose * 10_000 + station as u64 * 10 + channel.index() as u64;
        let base = crate::derive_seed(self.seed, stream);
        specs
            .iter()
            .enumerate()
            .map(|(k, s)| InjectionSpec {
                seed: crate::derive_seed(base, k as u64),
                ..s.clone()
            })
            .collect()
    }

    /// Scales every injection range by `factor` (for separability checks).
    pub fn with_injection_scale(mut self, factor: f64) -> Self {
        for s in &mut self.injection {
            s.amplitude = (s.amplitude.0 * factor, s.amplitude.1 * factor);
            s.intensity = (s.intensity.0 * factor, s.intensity.1 * factor);
            s.noise = (s.noise.0 * factor, s.noise.1 * factor);
        }
        self
    }

    pub fn injection_kinds(&self) -> Vec<InjectionKind> {
        self.injection.iter().map(|s| s.kind).collect()
    }
}

/// Forecast-input corruption: the three fault kinds at about 50 events per
/// 1000 slots.
pub fn default_corruption() -> Vec<InjectionSpec> {
    InjectionSpec::default_suite(1)
        .into_iter()
        .map(|s| match s.kind {
            InjectionKind::LongTerm => InjectionSpec { rate: 8.0, length: (12, 36), ..s },
            _ => InjectionSpec { rate: 20.0, ..s },
        })
        .collect()
}

/// Scenario output. `stations` hold the full span; the split accessors cut
/// it into the training block and the held-out block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub spec: BenchmarkScenario,
    pub stations: Vec<StationSeries>,
    /// Traffic heat's contribution to each station's road temperature,
    /// `road(with heat) − road(without)`, noise-free.
    pub road_bias: Vec<Vec<f64>>,
}

/// Slots of context before the held-out tail that inputs may read.
pub const HOLDOUT_CONTEXT: usize = DEFAULT_LAG_WINDOW + 2;

impl ScenarioData {
    pub fn training_indices(&self) -> std::ops::Range<usize> {
        0..self.spec.stations - self.spec.holdout_stations
    }

    pub fn holdout_indices(&self) -> std::ops::Range<usize> {
        self.spec.stations - self.spec.holdout_stations..self.spec.stations
    }

    /// Training stations over the leading period.
    pub fn training(&self) -> Vec<StationSeries> {
        let split = self.spec.split_slot();
        self.training_indices()
            .map(|i| self.stations[i].slice(0..split))
            .collect()
    }

    /// Held-out stations over the trailing period, prefixed by
    /// [`HOLDOUT_CONTEXT`] slots that serve only as model inputs.
    pub fn holdout(&self) -> Vec<StationSeries> {
        let from = self.spec.split_slot() - HOLDOUT_CONTEXT;
        self.holdout_indices()
            .map(|i| self.stations[i].slice(from..self.spec.slots()))
            .collect()
    }
}

struct Ar1 {
    phi: f64,
    state: f64,
    innovation: Normal<f64>,
}

impl Ar1 {
    /// Stationary AR(1) with marginal standard deviation `sd`.
    fn new<R: Rng>(phi: f64, sd: f64, rng: &mut R) -> Self {
        let innovation = Normal::new(0.0, sd * (1.0 - phi * phi).sqrt()).expect("finite sd");
        let state = Normal::new(0.0, sd).expect("finite sd").sample(rng);
        Ar1 {
            phi,
            state,
            innovation,
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> f64 {
        self.state = self.phi * self.state + self.innovation.sample(rng);
        self.state
    }
}

struct HourlyWeather {
    air: Vec<f64>,
    humidity: Vec<f64>,
    forcing: Vec<Forcing>,
}

fn hourly_weather<R: Rng>(spec: &BenchmarkScenario, offset: f64, hours: usize, start: DateTime<Utc>, rng: &mut R) -> HourlyWeather {
    let w = &spec.weather;
    let mut air_anom = Ar1::new(w.air_persistence, w.air_anomaly, rng);
    let mut cloud = Ar1::new(w.cloud_persistence, w.cloud_sd, rng);
    let mut hum = Ar1::new(w.humidity_persistence, w.humidity_sd, rng);
    let mut out = HourlyWeather {
        air: Vec::with_capacity(hours),
        humidity: Vec::with_capacity(hours),
        forcing: Vec::with_capacity(hours),
    };
    for k in 0..hours {
        let t = start + TimeDelta::hours(k as i64);
        let h = t.hour() as f64;
        let diurnal = (std::f64::consts::TAU * (h - 9.0) / 24.0).sin();
        let air = w.air_mean + offset + w.air_diurnal * diurnal + air_anom.next(rng);
        let c = (w.cloud_mean + cloud.next(rng)).clamp(0.0, 1.0);
        let sun = (std::f64::consts::PI * (h - 6.0) / 12.0).sin().max(0.0);
        let sky_emissivity = 0.72 + 0.22 * c;
        out.air.push(air);
        out.humidity.push((w.humidity_mean - w.humidity_diurnal * diurnal + hum.next(rng)).clamp(20.0, 100.0));
        out.forcing.push(Forcing {
            shortwave_in: w.shortwave_peak * sun * (1.0 - 0.7 * c),
            longwave_in: sky_emissivity * STEFAN_BOLTZMANN * (air + KELVIN).powi(4),
            wind_speed: (w.wind_mean + rng.random_range(-1.0..1.0)).max(0.0),
            precip_phase_flux: 0.0,
        });
    }
    out
}

/// Runs the column through `weather`, recording road and sensor-depth
/// temperatures at each hour, with or without the traffic heat.
fn simulate_column(
    spec: &BenchmarkScenario,
    weather: &HourlyWeather,
    start: DateTime<Utc>,
    with_traffic: bool,
) -> Result<Vec<(f64, f64)>, EvalError> {
    let col = &spec.column;
    let mut profile = col
        .uniform_profile(col.deep_temp)
        .map_err(|e| EvalError::SpecInvalid(e.to_string()))?;
    let ug = profile.nearest_node(col.underground_depth);
    let per_hour = (3600.0 / col.dt).round() as usize;
    let hours = weather.air.len();
    let mut out = Vec::with_capacity(hours);
    let lerp = |a: f64, b: f64, w: f64| a + (b - a) * w;
    for k in 0..hours {
        out.push((profile.surface_temp(), profile.temperatures()[ug]));
        if k + 1 == hours {
            break;
        }
        let (f0, f1) = (weather.forcing[k], weather.forcing[k + 1]);
        for s in 0..per_hour {
            let w = s as f64 / per_hour as f64;
            let met = SurfaceMeteo {
                shortwave_in: lerp(f0.shortwave_in, f1.shortwave_in, w),
                longwave_in: lerp(f0.longwave_in, f1.longwave_in, w),
                wind_speed: lerp(f0.wind_speed, f1.wind_speed, w),
                precip_phase_flux: lerp(f0.precip_phase_flux, f1.precip_phase_flux, w),
                air_temp: lerp(weather.air[k], weather.air[k + 1], w),
                humidity: lerp(weather.humidity[k], weather.humidity[k + 1], w),
            };
            let hour = (start + TimeDelta::hours(k as i64)).hour() as f64 + w;
            let params = SurfaceParams {
                anthropogenic: if with_traffic { spec.traffic.flux(hour) } else { 0.0 },
                ..spec.surface
            };
            let r = surface_flux(profile.surface_temp(), &met, &params)?;
            profile = step_profile(&profile, col.dt, r)?;
        }
    }
    Ok(out)
}

/// Deterministic synthetic stations for `spec`.
pub fn generate_scenario(spec: &BenchmarkScenario) -> Result<ScenarioData, EvalError> {
    spec.validate()?;
    let spin = spec.spin_up_hours;
    let hours = spin + spec.slots();
    let sim_start = spec.start - TimeDelta::hours(spin as i64);
    let mut stations = Vec::with_capacity(spec.stations);
    let mut road_bias = Vec::with_capacity(spec.stations);
    for i in 0..spec.stations {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(spec.seed, i as u64));
        let offset = Normal::new(0.0, spec.weather.station_spread.max(1e-12))
            .expect("finite spread")
            .sample(&mut rng);
        let weather = hourly_weather(spec, offset, hours, sim_start, &mut rng);
        let column = simulate_column(spec, &weather, sim_start, true)?;
        let baseline = simulate_column(spec, &weather, sim_start, false)?;
        let mut rows = Vec::with_capacity(spec.slots());
        let mut bias = Vec::with_capacity(spec.slots());
        for k in spin..hours {
            let mut v = ChannelValues([weather.air[k], column[k].0, column[k].1, weather.humidity[k]]);
            for ch in Channel::ALL {
                let sd = spec.noise.get(ch);
                if sd > 0.0 {
                    v[ch] += Normal::new(0.0, sd).expect("finite sd").sample(&mut rng);
                }
            }
            v[Channel::Humidity] = v[Channel::Humidity].clamp(0.0, 100.0);
            rows.push((Some(v), Some(weather.forcing[k])));
            bias.push(column[k].0 - baseline[k].0);
        }
        stations.push(StationSeries::regular(
            BenchmarkScenario::station_id(i),
            spec.start,
            TimeDelta::minutes(spec.cadence_minutes),
            rows,
        ));
        road_bias.push(bias);
    }
    Ok(ScenarioData {
        spec: spec.clone(),
        stations,
        road_bias,
    })
}
