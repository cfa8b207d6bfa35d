//! Exact t-distributed stochastic neighbor embedding into two dimensions.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_TSNE_PER_SIDE: usize = 50;
pub const MAX_TSNE_PER_SIDE: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsneSettings {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
}

impl Default for TsneSettings {
    fn default() -> Self {
        TsneSettings {
            perplexity: 40.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
        }
    }
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row `i` of the conditional affinities, with the Gaussian precision found
/// by bisection so the row's entropy equals `ln(perplexity)`.
fn conditional_row(dist: &[f64], i: usize, target_entropy: f64, row: &mut [f64]) {
    let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
    // Shifting by the nearest distance keeps the exponentials in range.
    let min_d = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    for _ in 0..100 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, &d) in dist.iter().enumerate() {
            let p = if j == i { 0.0 } else { (-(d - min_d) * beta).exp() };
            row[j] = p;
            sum += p;
            weighted += (d - min_d) * p;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        for p in row.iter_mut() {
            *p /= sum;
        }
        let diff = entropy - target_entropy;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
}

/// Embeds the rows of `x` into 2-D; deterministic for a given `seed`.
pub fn tsne(x: &[Vec<f64>], seed: u64, settings: &TsneSettings) -> Vec<[f64; 2]> {
    let n = x.len();
    if n < 2 {
        return vec![[0.0, 0.0]; n];
    }
    let dist = squared_distances(x);
    let perplexity = settings.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        conditional_row(&dist[i * n..(i + 1) * n], i, target, &mut p[i * n..(i + 1) * n]);
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    drop(p);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];

    for iter in 0..settings.iterations {
        let exaggerate = iter < settings.exaggeration_iterations;
        let scale = if exaggerate { settings.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };

        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                total += 2.0 * q;
            }
        }
        for g in grad.iter_mut() {
            *g = [0.0; 2];
        }
        for i in 0..n {
            for j in i + 1..n {
                let q = num[i * n + j];
                let coeff = 4.0 * (scale * sym[i * n + j] - (q / total).max(1e-12)) * q;
                let dx = coeff * (y[i][0] - y[j][0]);
                let dy = coeff * (y[i][1] - y[j][1]);
                grad[i][0] += dx;
                grad[i][1] += dy;
                grad[j][0] -= dx;
                grad[j][1] -= dy;
            }
        }
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign { (gains[i][d] * 0.8f64).max(0.01) } else { gains[i][d] + 0.2 };
                velocity[i][d] =
                    momentum * velocity[i][d] - settings.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += velocity[i][d];
            }
        }
        for d in 0..2 {
            let mean = y.iter().map(|p| p[d]).sum::<f64>() / n as f64;
            for p in y.iter_mut() {
                p[d] -= mean;
            }
        }
    }
    y
}

fn subsample<'a>(windows: &'a [Tensor], rng: &mut ChaCha8Rng) -> Vec<&'a Tensor> {
    let mut idx: Vec<usize> = (0..windows.len()).collect();
    if idx.len() > MAX_TSNE_PER_SIDE {
        idx.shuffle(rng);
        idx.truncate(MAX_TSNE_PER_SIDE);
        idx.sort_unstable();
    }
    idx.into_iter().map(|i| &windows[i]).collect()
}

/// Embeds flattened real and synthetic windows together and writes
/// `x,y,label` rows (label `real` or `synth`). Returns the points and labels
/// in file order.
pub fn tsne_export(
    real: &[Tensor],
    synth: &[Tensor],
    out_path: impl AsRef<Path>,
    seed: u64,
    settings: &TsneSettings,
) -> Result<Vec<([f64; 2], &'static str)>> {
    let have = real.len().min(synth.len());
    if have < MIN_TSNE_PER_SIDE {
        return Err(Error::InsufficientData {
            need: MIN_TSNE_PER_SIDE,
            have,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = subsample(real, &mut rng);
    let s = subsample(synth, &mut rng);
    let width = r[0].len();
    if r.iter().chain(&s).any(|w| w.len() != width) {
        return Err(Error::ShapeMismatch("t-SNE inputs differ in size".into()));
    }
    let rows: Vec<Vec<f64>> = r.iter().chain(&s).map(|w| w.data().to_vec()).collect();
    let labels: Vec<&'static str> = std::iter::repeat_n("real", r.len())
        .chain(std::iter::repeat_n("synth", s.len()))
        .collect();
    let points = tsne(&rows, seed, settings);

    let mut w = csv::Writer::from_path(out_path)?;
    w.write_record(["x", "y", "label"])?;
    for (p, label) in points.iter().zip(&labels) {
        w.write_record([p[0].to_string(), p[1].to_string(), label.to_string()])?;
    }
    w.flush()?;
    Ok(points.into_iter().zip(labels).collect())
}

/// Scatter plot of labelled points: real in red, synthetic in blue.
pub fn write_scatter_png(points: &[([f64; 2], &str)], path: impl AsRef<Path>) -> Result<()> {
    const SIZE: u32 = 800;
    const MARGIN: f64 = 20.0;
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    if !points.is_empty() {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for (p, _) in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let span = |d: usize| (hi[d] - lo[d]).max(1e-12);
        let usable = SIZE as f64 - 2.0 * MARGIN;
        for (p, label) in points {
            let color = if *label == "real" { Rgb([220, 30, 30]) } else { Rgb([30, 60, 220]) };
            let px = MARGIN + (p[0] - lo[0]) / span(0) * usable;
            let py = MARGIN + (hi[1] - p[1]) / span(1) * usable;
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let (x, y) = (px as i64 + dx, py as i64 + dy);
                    if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
                        img.put_pixel(x as u32, y as u32, color);
                    }
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::Format(format!("writing scatter image: {e}")))
}
