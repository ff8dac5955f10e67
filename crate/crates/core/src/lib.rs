//! Road-weather forecasting toolkit.
//!
//! A simplified energy-balance road model produces physical forecasts; a
//! gradient-boosted corrector learns and removes their residuals; a
//! residual-threshold detector, tuned on synthetically injected faults,
//! flags broken sensors.

pub mod anomaly;
pub mod channel;
pub mod config;
pub mod correction;
pub mod data;
pub mod energy_balance;
pub mod evaluation;
pub mod features;
pub mod gbdt;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod ridge;

pub use channel::{Channel, ChannelValues, Horizon};

/// Independent seed for sub-stream `stream` of a run seeded with `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}
