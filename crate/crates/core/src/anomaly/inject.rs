use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{AnomalyError, AnomalyLabel};
use crate::channel::Channel;
use crate::data::{SlotSource, StationSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    /// One slot offset by a uniform amplitude with random sign.
    Single,
    /// A burst of mean-centred Poisson noise.
    ShortTerm,
    /// A segment of Gaussian noise.
    LongTerm,
}

/// Units of the amplitude, intensity and noise ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionUnits {
    /// Multiples of the channel's standard deviation over the series.
    Sigma,
    /// Channel units.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub kind: InjectionKind,
    /// Expected events per 1000 slots.
    pub rate: f64,
    pub units: InjectionUnits,
    /// Single: deviation range.
    pub amplitude: (f64, f64),
    /// Short-term: Poisson intensity range.
    pub intensity: (f64, f64),
    /// Long-term: noise standard deviation range.
    pub noise: (f64, f64),
    /// Event length range in slots (ignored for single events).
    pub length: (usize, usize),
    pub seed: u64,
}

impl InjectionSpec {
    pub fn default_for(kind: InjectionKind, seed: u64) -> Self {
        let length = match kind {
            InjectionKind::Single => (1, 1),
            InjectionKind::ShortTerm => (2, 6),
            InjectionKind::LongTerm => (24, 96),
        };
        InjectionSpec {
            kind,
            rate: 10.0 / 3.0,
            units: InjectionUnits::Sigma,
            amplitude: (3.0, 6.0),
            intensity: (1.0, 4.0),
            noise: (1.0, 3.0),
            length,
            seed,
        }
    }

    /// The three kinds at a combined rate of 10 events per 1000 slots, with
    /// seeds derived from `seed`. Long drifts come first so they are placed
    /// while the series is still empty.
    pub fn default_suite(seed: u64) -> Vec<InjectionSpec> {
        [InjectionKind::LongTerm, InjectionKind::ShortTerm, InjectionKind::Single]
            .into_iter()
            .enumerate()
            .map(|(i, k)| Self::default_for(k, crate::derive_seed(seed, i as u64)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), AnomalyError> {
        let bad = |m: &str| Err(AnomalyError::InvalidSpec(m.into()));
        let range_ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad("rate must be > 0");
        }
        if self.length.0 > self.length.1 {
            return bad("empty length range");
        }
        match self.kind {
            InjectionKind::Single => {
                if !range_ok(self.amplitude) || self.amplitude.0 <= 0.0 {
                    return bad("amplitude range must be nonempty and positive");
                }
            }
            InjectionKind::ShortTerm => {
                if !range_ok(self.intensity) || self.intensity.0 <= 0.0 {
                    return bad("intensity range must be nonempty and positive");
                }
                if self.length.0 < 2 {
                    return bad("short-term events last at least 2 slots");
                }
            }
            InjectionKind::LongTerm => {
                if !range_ok(self.noise) || self.noise.0 <= 0.0 {
                    return bad("noise range must be nonempty and positive");
                }
                if self.length.0 < 1 {
                    return bad("events last at least 1 slot");
                }
            }
        }
        Ok(())
    }

    fn event_length<R: Rng>(&self, rng: &mut R) -> usize {
        match self.kind {
            InjectionKind::Single => 1,
            _ => rng.random_range(self.length.0..=self.length.1),
        }
    }

    /// Longest event the spec can place, slots.
    pub fn max_length(&self) -> usize {
        match self.kind {
            InjectionKind::Single => 1,
            _ => self.length.1,
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 200;

fn channel_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Corrupts one channel of a gap-free series with the events of `spec`.
///
/// The event count is Poisson with mean `rate·len/1000`; events never
/// overlap. Every slot inside an event is labelled anomalous.
pub fn inject(
    series: &StationSeries,
    channel: Channel,
    spec: &InjectionSpec,
) -> Result<(StationSeries, Vec<AnomalyLabel>), AnomalyError> {
    inject_all(series, channel, std::slice::from_ref(spec))
}

/// Applies several specs to one channel in order, sharing the occupancy
/// so that events of different kinds do not overlap either.
pub fn inject_all(
    series: &StationSeries,
    channel: Channel,
    specs: &[InjectionSpec],
) -> Result<(StationSeries, Vec<AnomalyLabel>), AnomalyError> {
    let n = series.len();
    if let Some(g) = (0..n).find(|&i| series.is_gap(i)) {
        return Err(AnomalyError::GapInSpan(g));
    }
    let values: Vec<f64> = (0..n).map(|i| series.value(i, channel)).collect();
    let sd = if n > 0 { channel_sd(&values) } else { 0.0 };
    let mut offsets = vec![0.0; n];
    let mut labels = vec![AnomalyLabel::Normal; n];
    for spec in specs {
        spec.validate()?;
        if n < spec.max_length() {
            return Err(AnomalyError::SpanTooShort {
                len: n,
                needed: spec.max_length(),
            });
        }
        let unit = match spec.units {
            InjectionUnits::Sigma => sd,
            InjectionUnits::Absolute => 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let count = Poisson::new(spec.rate * n as f64 / 1000.0)
            .map_err(|e| AnomalyError::InvalidSpec(e.to_string()))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let len = spec.event_length(&mut rng);
            let free = |s: usize, labels: &[AnomalyLabel]| labels[s..s + len].iter().all(|l| !l.is_anomaly());
            let start = match (0..PLACEMENT_ATTEMPTS)
                .map(|_| rng.random_range(0..=n - len))
                .find(|&s| free(s, &labels))
            {
                Some(s) => s,
                None => {
                    // crowded: draw among the starts that still fit
                    let open: Vec<usize> = (0..=n - len).filter(|&s| free(s, &labels)).collect();
                    if open.is_empty() {
                        return Err(AnomalyError::OverlapExhaustion { requested: count });
                    }
                    open[rng.random_range(0..open.len())]
                }
            };
            match spec.kind {
                InjectionKind::Single => {
                    let a = rng.random_range(spec.amplitude.0..=spec.amplitude.1) * unit;
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    offsets[start] = sign * a;
                }
                InjectionKind::ShortTerm => {
                    let lambda = rng.random_range(spec.intensity.0..=spec.intensity.1);
                    let dist = Poisson::new(lambda).map_err(|e| AnomalyError::InvalidSpec(e.to_string()))?;
                    for o in &mut offsets[start..start + len] {
                        *o = (dist.sample(&mut rng) - lambda) * unit;
                    }
                }
                InjectionKind::LongTerm => {
                    let sigma = rng.random_range(spec.noise.0..=spec.noise.1) * unit;
                    let dist = Normal::new(0.0, sigma).map_err(|e| AnomalyError::InvalidSpec(e.to_string()))?;
                    for o in &mut offsets[start..start + len] {
                        *o = dist.sample(&mut rng);
                    }
                }
            }
            labels[start..start + len].fill(AnomalyLabel::Anomaly);
        }
    }
    let mut out = series.clone();
    for (slot, off) in out.slots_mut().iter_mut().zip(&offsets) {
        if *off != 0.0 {
            let r = slot.reading.as_mut().expect("gap-free");
            r[channel] += off;
        }
    }
    Ok((out, labels))
}
