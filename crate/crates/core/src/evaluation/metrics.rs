use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::shuffled_batches;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{Gru, Linear};
use crate::optim::Adam;
use crate::params::{Component, ParamStore};
use crate::tensor::Tensor;

/// Minimum number of windows per side for the discriminative score.
pub const MIN_DISCRIMINATIVE_WINDOWS: usize = 20;

/// Seeds are `base, base + 1, …` for this many repetitions.
pub const METRIC_SEEDS: u64 = 5;

const TRAIN_FRACTION: f64 = 0.8;

/// Training budget of the post-hoc classifier and predictor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSettings {
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            layers: 2,
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

fn hidden_width(features: usize) -> usize {
    (2 * features).max(8)
}

fn check_windows(real: &[Tensor], synth: &[Tensor]) -> Result<(usize, usize)> {
    let first = real
        .first()
        .or(synth.first())
        .ok_or(Error::InsufficientData { need: 1, have: 0 })?;
    let shape = first.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!("windows must be [T, M], got {shape:?}")));
    }
    for w in real.iter().chain(synth) {
        if w.shape().len() != 2 || w.shape()[1] != shape[1] {
            return Err(Error::FeatureCountMismatch {
                expected: shape[1],
                found: w.shape().get(1).copied().unwrap_or(0),
            });
        }
        if w.shape()[0] != shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "window lengths {} and {} differ",
                shape[0],
                w.shape()[0]
            )));
        }
    }
    Ok((shape[0], shape[1]))
}

fn batch_of(windows: &[&Tensor], idx: &[usize]) -> Tensor {
    let (t, m) = (windows[0].dim(0), windows[0].dim(1));
    let mut data = Vec::with_capacity(idx.len() * t * m);
    for &i in idx {
        data.extend_from_slice(windows[i].data());
    }
    Tensor::new(&[idx.len(), t, m], data)
}

struct Classifier {
    store: ParamStore,
    gru: Gru,
    head: Linear,
}

impl Classifier {
    fn new(features: usize, settings: &ProbeSettings, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        let h = hidden_width(features);
        let c = Component::Probe;
        let gru = Gru::new(&mut store, rng, "classifier.gru", c, features, h, settings.layers);
        let head = Linear::new(&mut store, rng, "classifier.head", c, h, 1);
        Classifier { store, gru, head }
    }

    fn logits(&self, g: &mut Graph, x: &Tensor) -> crate::graph::Var {
        let xv = g.input(x.clone());
        let (_, last) = self.gru.forward(g, xv);
        self.head.forward(g, last)
    }
}

/// `|accuracy − 0.5|` of a recurrent classifier trained to separate real
/// (label 1) from synthetic (label 0) windows.
///
/// The larger side is downsampled to the smaller one. Both sides are then
/// split 80/20 with the same index permutation and the classifier is scored
/// on the held-out fifth.
pub fn discriminative_score(
    real: &[Tensor],
    synth: &[Tensor],
    seed: u64,
    settings: &ProbeSettings,
) -> Result<f64> {
    let (_, m) = check_windows(real, synth)?;
    let have = real.len().min(synth.len());
    if have < MIN_DISCRIMINATIVE_WINDOWS {
        return Err(Error::InsufficientData {
            need: MIN_DISCRIMINATIVE_WINDOWS,
            have,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let downsample = |set: &[Tensor], rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        if set.len() > have {
            idx.shuffle(rng);
            idx.truncate(have);
            idx.sort_unstable();
        }
        idx
    };
    let real_idx = downsample(real, &mut rng);
    let synth_idx = downsample(synth, &mut rng);
    let mut order: Vec<usize> = (0..have).collect();
    order.shuffle(&mut rng);
    let cut = ((have as f64) * TRAIN_FRACTION).round() as usize;

    let mut train: Vec<&Tensor> = Vec::with_capacity(2 * cut);
    let mut train_labels = Vec::with_capacity(2 * cut);
    let mut test: Vec<&Tensor> = Vec::with_capacity(2 * (have - cut));
    let mut test_labels = Vec::with_capacity(2 * (have - cut));
    for (k, &o) in order.iter().enumerate() {
        let (set, labels) = if k < cut {
            (&mut train, &mut train_labels)
        } else {
            (&mut test, &mut test_labels)
        };
        set.push(&real[real_idx[o]]);
        labels.push(1.0);
        set.push(&synth[synth_idx[o]]);
        labels.push(0.0);
    }

    let model = {
        let mut model = Classifier::new(m, settings, &mut rng);
        let mut opt = Adam::new(model.store.ids().collect(), settings.lr);
        for _ in 0..settings.epochs {
            for idx in shuffled_batches(train.len(), settings.batch_size, &mut rng) {
                let x = batch_of(&train, &idx);
                let y: Vec<f64> = idx.iter().map(|&i| train_labels[i]).collect();
                let grads = {
                    let mut g = Graph::new(&model.store);
                    let logits = model.logits(&mut g, &x);
                    let loss = g.bce_with_logits(logits, &y);
                    g.backward(loss)
                };
                opt.step(&mut model.store, &grads);
            }
        }
        model
    };

    let all: Vec<usize> = (0..test.len()).collect();
    let mut g = Graph::inference(&model.store);
    let x = batch_of(&test, &all);
    let logits = model.logits(&mut g, &x);
    let correct = g
        .value(logits)
        .data()
        .iter()
        .zip(&test_labels)
        .filter(|(l, y)| (**l > 0.0) == (**y > 0.5))
        .count();
    let accuracy = correct as f64 / test.len() as f64;
    Ok((accuracy - 0.5).abs())
}

struct Predictor {
    store: ParamStore,
    gru: Gru,
    head: Linear,
}

impl Predictor {
    fn new(features: usize, settings: &ProbeSettings, rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        let h = hidden_width(features);
        let c = Component::Probe;
        let gru = Gru::new(&mut store, rng, "predictor.gru", c, features, h, settings.layers);
        let head = Linear::new(&mut store, rng, "predictor.head", c, h, features);
        Predictor { store, gru, head }
    }

    /// Mean absolute one-step-ahead error on a `[B, T, M]` batch.
    fn loss(&self, g: &mut Graph, x: &Tensor) -> crate::graph::Var {
        let (b, t, m) = (x.dim(0), x.dim(1), x.dim(2));
        let mut inputs = Vec::with_capacity(b * (t - 1) * m);
        let mut targets = Vec::with_capacity(b * (t - 1) * m);
        for w in x.data().chunks(t * m) {
            inputs.extend_from_slice(&w[..(t - 1) * m]);
            targets.extend_from_slice(&w[m..]);
        }
        let xv = g.input(Tensor::new(&[b, t - 1, m], inputs));
        let yv = g.input(Tensor::new(&[b, t - 1, m], targets));
        let (states, _) = self.gru.forward(g, xv);
        let pred = self.head.forward(g, states);
        let pred = g.sigmoid(pred);
        g.mae(pred, yv)
    }
}

/// Train-on-synthetic, test-on-real: a recurrent one-step-ahead predictor
/// of all features is fit on `synth` and its mean absolute error on `real`
/// is returned (in the units of the inputs, normally `[0, 1]`).
pub fn predictive_score(
    real: &[Tensor],
    synth: &[Tensor],
    seed: u64,
    settings: &ProbeSettings,
) -> Result<f64> {
    let (t, m) = check_windows(real, synth)?;
    if real.is_empty() || synth.is_empty() {
        return Err(Error::InsufficientData { need: 1, have: 0 });
    }
    if t < 2 {
        return Err(Error::ShapeMismatch("prediction needs windows of length ≥ 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Predictor::new(m, settings, &mut rng);
    let mut opt = Adam::new(model.store.ids().collect(), settings.lr);
    let train: Vec<&Tensor> = synth.iter().collect();
    for _ in 0..settings.epochs {
        for idx in shuffled_batches(train.len(), settings.batch_size, &mut rng) {
            let x = batch_of(&train, &idx);
            let grads = {
                let mut g = Graph::new(&model.store);
                let loss = model.loss(&mut g, &x);
                g.backward(loss)
            };
            opt.step(&mut model.store, &grads);
        }
    }
    let test: Vec<&Tensor> = real.iter().collect();
    let mut total = 0.0;
    for chunk in (0..test.len()).collect::<Vec<_>>().chunks(512) {
        let mut g = Graph::inference(&model.store);
        let x = batch_of(&test, chunk);
        let loss = model.loss(&mut g, &x);
        total += g.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / test.len() as f64)
}

/// Mean and sample standard deviation of repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

impl ScoreSummary {
    pub fn from_runs(runs: Vec<f64>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let std = if runs.len() > 1 {
            (runs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        ScoreSummary { mean, std, runs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub seed: u64,
    pub real_windows: usize,
    pub synth_windows: usize,
    pub discriminative_score: ScoreSummary,
    /// Train on synthetic, test on real.
    pub predictive_score: ScoreSummary,
    /// Train on real, test on real.
    pub predictive_baseline: ScoreSummary,
    /// Unit of the predictive scores.
    pub error_unit: String,
    pub tsne_path: Option<String>,
    pub no_extractor: bool,
    pub no_reconstructor: bool,
}

/// Runs both scores and the baseline for seeds `seed..seed + METRIC_SEEDS`.
/// `real` and `synth` must be normalized windows.
pub fn evaluate(
    dataset: &str,
    real: &[Tensor],
    synth: &[Tensor],
    seed: u64,
    settings: &ProbeSettings,
) -> Result<MetricsReport> {
    let seeds = seed..seed + METRIC_SEEDS;
    let disc = seeds
        .clone()
        .map(|s| discriminative_score(real, synth, s, settings))
        .collect::<Result<Vec<_>>>()?;
    let pred = seeds
        .clone()
        .map(|s| predictive_score(real, synth, s, settings))
        .collect::<Result<Vec<_>>>()?;
    let base = seeds
        .map(|s| predictive_score(real, real, s, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        dataset: dataset.to_string(),
        seed,
        real_windows: real.len(),
        synth_windows: synth.len(),
        discriminative_score: ScoreSummary::from_runs(disc),
        predictive_score: ScoreSummary::from_runs(pred),
        predictive_baseline: ScoreSummary::from_runs(base),
        error_unit: "normalized".into(),
        tsne_path: None,
        no_extractor: false,
        no_reconstructor: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn quick() -> ProbeSettings {
        ProbeSettings {
            epochs: 5,
            ..ProbeSettings::default()
        }
    }

    fn waves(n: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let phase: f64 = rng.random_range(0.0..6.28);
                Tensor::from_fn(&[12, 2], |i| {
                    let (t, j) = (i / 2, i % 2);
                    0.5 + 0.4 * (0.5 * t as f64 + phase + j as f64).sin()
                })
            })
            .collect()
    }

    #[test]
    fn identical_sets_are_indistinguishable() {
        let real = waves(60, 1);
        let s = discriminative_score(&real, &real, 3, &quick()).unwrap();
        assert!(s <= 0.05, "{s}");
    }

    #[test]
    fn too_few_windows() {
        let real = waves(10, 1);
        assert!(matches!(
            discriminative_score(&real, &real, 0, &quick()),
            Err(Error::InsufficientData { need: 20, have: 10 })
        ));
    }

    #[test]
    fn constant_series_are_predictable() {
        let c: Vec<Tensor> = (0..40).map(|_| Tensor::full(&[6, 3], 0.3)).collect();
        let settings = ProbeSettings {
            epochs: 60,
            lr: 1e-2,
            ..ProbeSettings::default()
        };
        let s = predictive_score(&c, &c, 0, &settings).unwrap();
        assert!(s < 0.02, "{s}");
    }

    #[test]
    fn scores_are_seed_deterministic() {
        let real = waves(30, 4);
        let synth = waves(30, 5);
        let a = discriminative_score(&real, &synth, 9, &quick()).unwrap();
        let b = discriminative_score(&real, &synth, 9, &quick()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let a = predictive_score(&real, &synth, 9, &quick()).unwrap();
        let b = predictive_score(&real, &synth, 9, &quick()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn summary_statistics() {
        let s = ScoreSummary::from_runs(vec![1.0, 2.0, 3.0]);
        assert!((s.mean - 2.0).abs() < 1e-12);
        assert!((s.std - 1.0).abs() < 1e-12);
    }
}
