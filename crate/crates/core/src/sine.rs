//! Synthetic multivariate sine series used as a small, fully known dataset.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RawSeries;
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_LENGTH: usize = 1000;
pub const DEFAULT_FEATURES: usize = 5;

/// Angular frequency range per time step.
const FREQUENCY: (f64, f64) = (0.1, 0.4);

/// Per-feature sinusoid parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SineParams {
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl SineParams {
    pub fn draw(features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frequencies = Vec::with_capacity(features);
        let mut phases = Vec::with_capacity(features);
        for _ in 0..features {
            frequencies.push(rng.random_range(FREQUENCY.0..FREQUENCY.1));
            phases.push(rng.random_range(0.0..2.0 * PI));
        }
        SineParams { frequencies, phases }
    }
}

/// `length` rows of `sin(ω_j·t + φ_j)` for `features` columns named
/// `sine_0`, `sine_1`, …
pub fn make_sine(length: usize, features: usize, seed: u64) -> RawSeries {
    let p = SineParams::draw(features, seed);
    let values = Tensor::from_fn(&[length, features], |i| {
        let (t, j) = (i / features, i % features);
        (p.frequencies[j] * t as f64 + p.phases[j]).sin()
    });
    let names = (0..features).map(|j| format!("sine_{j}")).collect();
    RawSeries::new(values, names, format!("sine(seed={seed})"))
}

/// Writes a series as CSV with a header row of feature names.
pub fn write_series_csv(series: &RawSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&series.feature_names)?;
    let m = series.features();
    for r in 0..series.len() {
        w.write_record(series.values.data()[r * m..(r + 1) * m].iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
