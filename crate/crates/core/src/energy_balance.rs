//! Physical road forecaster: net surface energy flux drives an implicit
//! finite-volume heat-conduction column through pavement and ground.
//!
//! Road temperature is the surface node, underground temperature the node
//! nearest the sensor depth. Air temperature and humidity have no physics
//! here and use a persistence-plus-trend forecast.

use serde::{Deserialize, Serialize};

use crate::channel::{Channel, ChannelValues, Horizon};
use crate::data::{Forcing, SlotSource};

/// Stefan–Boltzmann constant, W/(m²·K⁴).
pub const STEFAN_BOLTZMANN: f64 = 5.670_374_419e-8;
pub const KELVIN: f64 = 273.15;
/// Specific heat of air at constant pressure, J/(kg·K).
pub const AIR_HEAT_CAPACITY: f64 = 1005.0;
const SURFACE_PRESSURE_PA: f64 = 101_325.0;
/// Largest time step accepted by [`step_profile`], seconds.
pub const MAX_STEP_SECONDS: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhysicsError {
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("invalid column: {0}")]
    InvalidColumn(String),
    #[error("singular conduction system at node {0}")]
    SingularSystem(usize),
    #[error("time step {0} s outside (0, {MAX_STEP_SECONDS}]")]
    StepTooLarge(f64),
    #[error("meteo covers {got} steps, forecast needs {needed}")]
    InsufficientMeteo { needed: usize, got: usize },
    #[error("no observation at issue slot {0}")]
    MissingObservation(usize),
}

/// Surface forcing at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMeteo {
    pub shortwave_in: f64,
    pub longwave_in: f64,
    pub air_temp: f64,
    pub wind_speed: f64,
    pub humidity: f64,
    pub precip_phase_flux: f64,
}

impl SurfaceMeteo {
    fn check(&self) -> Result<(), PhysicsError> {
        let all = [
            self.shortwave_in,
            self.longwave_in,
            self.air_temp,
            self.wind_speed,
            self.humidity,
            self.precip_phase_flux,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(PhysicsError::NonFiniteInput("meteo"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceParams {
    pub albedo: f64,
    pub emissivity: f64,
    /// Sensible heat exchange coefficient, W/(m²·K).
    pub sensible_coeff: f64,
    /// Latent exchange coefficient, W/(m²·K); divided by the heat capacity of
    /// air to turn a specific-humidity deficit into a vapour flux.
    pub latent_coeff: f64,
    /// J/kg
    pub latent_heat_vaporization: f64,
    /// J/kg
    pub latent_heat_fusion: f64,
    /// Anthropogenic flux, W/m². Zero in the forecaster.
    pub anthropogenic: f64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        SurfaceParams {
            albedo: 0.1,
            emissivity: 0.95,
            sensible_coeff: 15.0,
            latent_coeff: 10.0,
            latent_heat_vaporization: 2.501e6,
            latent_heat_fusion: 3.34e5,
            anthropogenic: 0.0,
        }
    }
}

impl SurfaceParams {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.albedo) || !unit(self.emissivity) {
            return Err(PhysicsError::InvalidColumn(
                "albedo and emissivity must lie in [0, 1]".into(),
            ));
        }
        if self.latent_heat_vaporization <= 0.0 || self.latent_heat_fusion <= 0.0 {
            return Err(PhysicsError::InvalidColumn("latent heats must be positive".into()));
        }
        Ok(())
    }
}

/// Saturation specific humidity (kg/kg) over water, Magnus form.
pub fn saturation_specific_humidity(temp_c: f64) -> f64 {
    let t = temp_c.clamp(-100.0, 100.0);
    let e = 611.2 * (17.67 * t / (t + 243.5)).exp();
    0.622 * e / (SURFACE_PRESSURE_PA - 0.378 * e)
}

/// Net surface energy flux R in W/m² (positive warms the surface):
///
/// `R = (1−α)S + εI − εσT⁴ − H − L_a·E + L_f·P + A`
///
/// with `H = C_H (T_s − T_air)` and `E = C_E / c_p · max(0, q_sat(T_s) − q_air)`.
pub fn surface_flux(
    surface_temp: f64,
    met: &SurfaceMeteo,
    p: &SurfaceParams,
) -> Result<f64, PhysicsError> {
    if !surface_temp.is_finite() {
        return Err(PhysicsError::NonFiniteInput("surface temperature"));
    }
    met.check()?;
    let tk = surface_temp + KELVIN;
    let absorbed = (1.0 - p.albedo) * met.shortwave_in + p.emissivity * met.longwave_in;
    let emitted = p.emissivity * STEFAN_BOLTZMANN * tk.powi(4);
    let sensible = p.sensible_coeff * (surface_temp - met.air_temp);
    let latent = if p.latent_coeff == 0.0 {
        0.0
    } else {
        let q_air = saturation_specific_humidity(met.air_temp) * met.humidity.clamp(0.0, 100.0) / 100.0;
        let deficit = (saturation_specific_humidity(surface_temp) - q_air).max(0.0);
        p.latent_heat_vaporization * p.latent_coeff / AIR_HEAT_CAPACITY * deficit
    };
    let phase = p.latent_heat_fusion * met.precip_phase_flux;
    Ok(absorbed - emitted - sensible - latent + phase + p.anthropogenic)
}

/// Pavement/ground column. Segment `i` spans nodes `i` and `i + 1` and
/// carries one material; the last node is held at `deep_temp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalProfile {
    node_depths: Vec<f64>,
    temperatures: Vec<f64>,
    conductivity: Vec<f64>,
    heat_capacity: Vec<f64>,
    deep_temp: f64,
}

impl ThermalProfile {
    pub fn new(
        node_depths: Vec<f64>,
        temperatures: Vec<f64>,
        conductivity: Vec<f64>,
        heat_capacity: Vec<f64>,
        deep_temp: f64,
    ) -> Result<Self, PhysicsError> {
        let n = node_depths.len();
        let bad = |m: &str| Err(PhysicsError::InvalidColumn(m.to_string()));
        if n < 3 {
            return bad("need at least 3 nodes");
        }
        if temperatures.len() != n || conductivity.len() != n - 1 || heat_capacity.len() != n - 1 {
            return bad("per-node and per-segment lengths disagree");
        }
        if node_depths[0] != 0.0 || node_depths.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("depths must start at 0 and strictly increase");
        }
        if conductivity.iter().chain(&heat_capacity).any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("conductivity and heat capacity must be positive");
        }
        if temperatures.iter().any(|t| !t.is_finite()) || !deep_temp.is_finite() {
            return Err(PhysicsError::NonFiniteInput("temperature"));
        }
        Ok(ThermalProfile {
            node_depths,
            temperatures,
            conductivity,
            heat_capacity,
            deep_temp,
        })
    }

    pub fn node_depths(&self) -> &[f64] {
        &self.node_depths
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn deep_temp(&self) -> f64 {
        self.deep_temp
    }

    pub fn surface_temp(&self) -> f64 {
        self.temperatures[0]
    }

    pub fn conductivity(&self) -> &[f64] {
        &self.conductivity
    }

    pub fn heat_capacity(&self) -> &[f64] {
        &self.heat_capacity
    }

    /// Index of the node whose depth is closest to `depth`.
    pub fn nearest_node(&self, depth: f64) -> usize {
        let mut best = 0;
        for (i, z) in self.node_depths.iter().enumerate() {
            if (z - depth).abs() < (self.node_depths[best] - depth).abs() {
                best = i;
            }
        }
        best
    }

    pub fn with_temperatures(&self, temperatures: Vec<f64>) -> Result<Self, PhysicsError> {
        Self::new(
            self.node_depths.clone(),
            temperatures,
            self.conductivity.clone(),
            self.heat_capacity.clone(),
            self.deep_temp,
        )
    }
}

/// Surface boundary condition for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceBoundary {
    /// Net downward flux into the surface, W/m².
    Flux(f64),
    /// Surface node held at a temperature, °C.
    Fixed(f64),
}

/// One backward-Euler step with surface flux `flux` (W/m²).
pub fn step_profile(
    profile: &ThermalProfile,
    dt: f64,
    flux: f64,
) -> Result<ThermalProfile, PhysicsError> {
    step_profile_with(profile, dt, SurfaceBoundary::Flux(flux))
}

/// One backward-Euler step of `ρc ∂T/∂t = ∂/∂z(k ∂T/∂z)` on the column,
/// central differences in space, deep node held at the profile's deep
/// temperature. Returns a new profile.
pub fn step_profile_with(
    profile: &ThermalProfile,
    dt: f64,
    surface: SurfaceBoundary,
) -> Result<ThermalProfile, PhysicsError> {
    if !(dt > 0.0 && dt <= MAX_STEP_SECONDS) {
        return Err(PhysicsError::StepTooLarge(dt));
    }
    let n = profile.node_depths.len();
    let z = &profile.node_depths;
    let t = &profile.temperatures;
    let seg: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();
    let g: Vec<f64> = (0..n - 1).map(|i| profile.conductivity[i] / seg[i]).collect();
    let cap = |i: usize| -> f64 {
        let below = profile.heat_capacity[i] * seg[i] / 2.0;
        if i == 0 {
            below
        } else {
            below + profile.heat_capacity[i - 1] * seg[i - 1] / 2.0
        }
    };

    // Tridiagonal system over nodes 0..n-1 (exclusive of the deep node).
    let m = n - 1;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        let c = cap(i) / dt;
        if i == 0 {
            match surface {
                SurfaceBoundary::Flux(r) => {
                    if !r.is_finite() {
                        return Err(PhysicsError::NonFiniteInput("surface flux"));
                    }
                    diag[0] = c + g[0];
                    upper[0] = -g[0];
                    rhs[0] = c * t[0] + r;
                }
                SurfaceBoundary::Fixed(v) => {
                    diag[0] = 1.0;
                    rhs[0] = v;
                }
            }
            continue;
        }
        lower[i] = -g[i - 1];
        diag[i] = c + g[i - 1] + g[i];
        upper[i] = -g[i];
        rhs[i] = c * t[i];
    }
    rhs[m - 1] += g[m - 1] * profile.deep_temp;
    if m > 1 {
        upper[m - 1] = 0.0;
    }

    let mut solution = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    solution.push(profile.deep_temp);
    Ok(ThermalProfile {
        temperatures: solution,
        ..profile.clone()
    })
}

/// Thomas algorithm. `lower[0]` and `upper[n-1]` are ignored.
fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>, PhysicsError> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 || !denom.is_finite() {
        return Err(PhysicsError::SingularSystem(0));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(PhysicsError::SingularSystem(i));
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Geometry and materials of the conduction column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnConfig {
    pub node_depths: Vec<f64>,
    /// Bottom of the pavement layer, m.
    pub pavement_depth: f64,
    pub pavement_conductivity: f64,
    pub pavement_heat_capacity: f64,
    pub ground_conductivity: f64,
    pub ground_heat_capacity: f64,
    /// Dirichlet temperature of the deepest node, °C.
    pub deep_temp: f64,
    /// Depth of the underground sensor, m.
    pub underground_depth: f64,
    /// Model time step, s.
    pub dt: f64,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        ColumnConfig {
            node_depths: vec![
                0.0, 0.02, 0.05, 0.1, 0.2, 0.3, 0.45, 0.65, 0.9, 1.2, 1.6, 2.0,
            ],
            pavement_depth: 0.1,
            pavement_conductivity: 1.2,
            pavement_heat_capacity: 2.0e6,
            ground_conductivity: 1.5,
            ground_heat_capacity: 2.4e6,
            deep_temp: 4.0,
            underground_depth: 0.3,
            dt: 60.0,
        }
    }
}

impl ColumnConfig {
    fn materials(&self) -> (Vec<f64>, Vec<f64>) {
        self.node_depths
            .windows(2)
            .map(|w| {
                if 0.5 * (w[0] + w[1]) < self.pavement_depth {
                    (self.pavement_conductivity, self.pavement_heat_capacity)
                } else {
                    (self.ground_conductivity, self.ground_heat_capacity)
                }
            })
            .unzip()
    }

    pub fn uniform_profile(&self, temp: f64) -> Result<ThermalProfile, PhysicsError> {
        let (k, c) = self.materials();
        ThermalProfile::new(
            self.node_depths.clone(),
            vec![temp; self.node_depths.len()],
            k,
            c,
            temp,
        )
    }

    /// Profile piecewise-linear through the road reading at the surface, the
    /// underground reading at the sensor depth and `deep_temp` at the bottom.
    pub fn profile_from_readings(
        &self,
        road: f64,
        underground: f64,
    ) -> Result<ThermalProfile, PhysicsError> {
        let (k, c) = self.materials();
        let bottom = *self.node_depths.last().unwrap_or(&0.0);
        let zs = self.underground_depth;
        let temps = self
            .node_depths
            .iter()
            .map(|&z| {
                if z <= zs {
                    road + (underground - road) * z / zs
                } else {
                    underground + (self.deep_temp - underground) * (z - zs) / (bottom - zs)
                }
            })
            .collect();
        ThermalProfile::new(self.node_depths.clone(), temps, k, c, self.deep_temp)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        self.uniform_profile(0.0)?;
        let bottom = *self.node_depths.last().unwrap();
        if !(self.underground_depth > 0.0 && self.underground_depth < bottom) {
            return Err(PhysicsError::InvalidColumn("underground depth outside column".into()));
        }
        if !(self.dt > 0.0 && self.dt <= MAX_STEP_SECONDS) || (3600.0 / self.dt).fract() != 0.0 {
            return Err(PhysicsError::InvalidColumn("dt must divide one hour and be ≤ 300 s".into()));
        }
        Ok(())
    }
}

/// Physical forecasts for every channel and horizon at one issue time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhysicalForecast {
    values: [[f64; 3]; 4],
}

impl PhysicalForecast {
    pub fn get(&self, channel: Channel, horizon: Horizon) -> f64 {
        self.values[channel.index()][horizon.index()]
    }

    pub fn set(&mut self, channel: Channel, horizon: Horizon, v: f64) {
        self.values[channel.index()][horizon.index()] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, Horizon, f64)> + '_ {
        Channel::ALL
            .into_iter()
            .flat_map(move |c| Horizon::ALL.into_iter().map(move |h| (c, h, self.get(c, h))))
    }
}

/// Road and underground temperatures at 1, 2 and 3 hours from rolling the
/// column forward with the flux re-evaluated from the current surface
/// temperature at each step.
pub fn run_column(
    profile: &ThermalProfile,
    params: &SurfaceParams,
    met_sequence: &[SurfaceMeteo],
    dt: f64,
    underground_depth: f64,
) -> Result<[(f64, f64); 3], PhysicsError> {
    let per_hour = (3600.0 / dt).round() as usize;
    if per_hour == 0 || (per_hour as f64 * dt - 3600.0).abs() > 1e-9 {
        return Err(PhysicsError::StepTooLarge(dt));
    }
    let needed = 3 * per_hour;
    if met_sequence.len() < needed {
        return Err(PhysicsError::InsufficientMeteo {
            needed,
            got: met_sequence.len(),
        });
    }
    let ug = profile.nearest_node(underground_depth);
    let mut current = profile.clone();
    let mut out = [(0.0, 0.0); 3];
    for (step, met) in met_sequence[..needed].iter().enumerate() {
        let flux = surface_flux(current.surface_temp(), met, params)?;
        current = step_profile(&current, dt, flux)?;
        if (step + 1) % per_hour == 0 {
            out[(step + 1) / per_hour - 1] = (current.surface_temp(), current.temperatures[ug]);
        }
    }
    Ok(out)
}

/// `last + hours · mean slope` over the last three values (oldest first),
/// each `step_hours` apart.
pub fn persistence_trend(recent: &[f64], step_hours: f64, hours: f64) -> f64 {
    let tail = &recent[recent.len().saturating_sub(3)..];
    let last = *tail.last().expect("at least one value");
    if tail.len() < 2 {
        return last;
    }
    let slope = (last - tail[0]) / ((tail.len() - 1) as f64 * step_hours);
    last + hours * slope
}

/// Full physical forecast.
///
/// `recent` holds the latest observations (oldest first, one cadence apart,
/// the last one at issue time); it initializes the column and feeds the
/// air/humidity fallback. `met_sequence` gives forcing at the start of every
/// model step over three hours.
pub fn forecast(
    profile: &ThermalProfile,
    params: &SurfaceParams,
    met_sequence: &[SurfaceMeteo],
    recent: &[ChannelValues],
    step_hours: f64,
    column: &ColumnConfig,
) -> Result<PhysicalForecast, PhysicsError> {
    let column_out = run_column(profile, params, met_sequence, column.dt, column.underground_depth)?;
    let mut fc = PhysicalForecast {
        values: [[0.0; 3]; 4],
    };
    let series = |ch: Channel| recent.iter().map(|v| v[ch]).collect::<Vec<_>>();
    let air = series(Channel::Air);
    let hum = series(Channel::Humidity);
    for h in Horizon::ALL {
        let (road, ug) = column_out[h.index()];
        fc.set(Channel::Road, h, road);
        fc.set(Channel::Underground, h, ug);
        fc.set(Channel::Air, h, persistence_trend(&air, step_hours, h.hours() as f64));
        fc.set(
            Channel::Humidity,
            h,
            persistence_trend(&hum, step_hours, h.hours() as f64).clamp(0.0, 100.0),
        );
    }
    Ok(fc)
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

/// Model-step meteo over the three hours after `issue`, interpolating the
/// per-slot forcing linearly and driving air temperature and humidity with
/// the persistence-plus-trend forecast.
pub fn meteo_sequence<S: SlotSource + ?Sized>(
    source: &S,
    issue: usize,
    recent: &[ChannelValues],
    step_hours: f64,
    dt: f64,
) -> Result<Vec<SurfaceMeteo>, PhysicsError> {
    let slots_ahead = (3.0 / step_hours).ceil() as usize;
    let forcing: Vec<Forcing> = (issue..=issue + slots_ahead)
        .map(|s| source.forcing(s))
        .collect::<Option<_>>()
        .ok_or(PhysicsError::InsufficientMeteo {
            needed: slots_ahead + 1,
            got: (issue..=issue + slots_ahead)
                .take_while(|&s| source.forcing(s).is_some())
                .count(),
        })?;
    let air: Vec<f64> = recent.iter().map(|v| v[Channel::Air]).collect();
    let hum: Vec<f64> = recent.iter().map(|v| v[Channel::Humidity]).collect();
    let steps = (3.0 * 3600.0 / dt).round() as usize;
    Ok((0..steps)
        .map(|k| {
            let hours = k as f64 * dt / 3600.0;
            let pos = hours / step_hours;
            let i = (pos.floor() as usize).min(slots_ahead - 1);
            let w = pos - i as f64;
            let (a, b) = (forcing[i], forcing[i + 1]);
            SurfaceMeteo {
                shortwave_in: lerp(a.shortwave_in, b.shortwave_in, w),
                longwave_in: lerp(a.longwave_in, b.longwave_in, w),
                wind_speed: lerp(a.wind_speed, b.wind_speed, w),
                precip_phase_flux: lerp(a.precip_phase_flux, b.precip_phase_flux, w),
                air_temp: persistence_trend(&air, step_hours, hours),
                humidity: persistence_trend(&hum, step_hours, hours).clamp(0.0, 100.0),
            }
        })
        .collect())
}

/// Physical forecast issued at slot `issue` of a regular source, using up
/// to three prior observations for the fallback trend.
pub fn issue_forecast<S: SlotSource + ?Sized>(
    source: &S,
    issue: usize,
    step_hours: f64,
    column: &ColumnConfig,
    params: &SurfaceParams,
) -> Result<PhysicalForecast, PhysicsError> {
    if source.is_gap(issue) {
        return Err(PhysicsError::MissingObservation(issue));
    }
    let mut recent = Vec::with_capacity(3);
    for s in (issue.saturating_sub(2)..=issue).rev() {
        if source.is_gap(s) {
            break;
        }
        let mut v = ChannelValues::default();
        for ch in Channel::ALL {
            v[ch] = source.value(s, ch);
        }
        recent.push(v);
    }
    recent.reverse();
    let now = recent.last().expect("issue slot present");
    let profile = column.profile_from_readings(now[Channel::Road], now[Channel::Underground])?;
    let met = meteo_sequence(source, issue, &recent, step_hours, column.dt)?;
    forecast(&profile, params, &met, &recent, step_hours, column)
}
