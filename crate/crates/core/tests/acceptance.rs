//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `DLGAN_ACCEPTANCE=1,3,7` restricts the run to the listed criteria;
//! criteria left out are reported as SKIP.

mod common;

use std::f64::consts::LN_2;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use dlgan::data::{
    fit_normalizer, load_csv, make_windows, normalize, prepare, stack_windows, write_windows_csv, LoadOptions,
    RawSeries, TimeSeriesWindow,
};
use dlgan::evaluation::{evaluate, MetricsReport, ProbeSettings};
use dlgan::extractor::PatchGrid;
use dlgan::graph::Graph;
use dlgan::latent_gan::{cross_attention_values, moving_average, sample_noise};
use dlgan::params::ParamStore;
use dlgan::sine::make_sine;
use dlgan::tensor::Tensor;
use dlgan::trainer::{synthesize, synthesize_with, update_sets, LossRecord};
use dlgan::{Ablation, Dlgan, Trainer, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_TOLERANCE: f64 = 1e-6;
const ORACLE_INSTANCES: usize = 100;
const SINE_SEED: u64 = 7;
const METRIC_SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            pass: true,
            detail: String::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(&what);
        if !ok {
            self.detail.push_str(" [not met]");
        }
    }
}

// ---- criterion 1: independent oracles ----

fn random_series(rng: &mut ChaCha8Rng) -> RawSeries {
    let rows = rng.random_range(2..30);
    let cols = rng.random_range(1..5);
    let constant_col = rng.random_bool(0.2).then(|| rng.random_range(0..cols));
    let data = (0..rows * cols)
        .map(|i| match constant_col {
            Some(c) if i % cols == c => 3.5,
            _ => rng.random_range(-100.0..100.0),
        })
        .collect();
    let names = (0..cols).map(|j| format!("c{j}")).collect();
    RawSeries::new(Tensor::new(&[rows, cols], data), names, "oracle")
}

fn oracle_minmax(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for c in 0..cols {
        let col: Vec<f64> = (0..rows).map(|r| x[r * cols + c]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for r in 0..rows {
            out[r * cols + c] = if hi > lo { (col[r] - lo) / (hi - lo) } else { 0.5 };
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_oracles() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 6];
    let mut structural_ok = true;

    for _ in 0..ORACLE_INSTANCES {
        // min-max normalization
        let raw = random_series(&mut rng);
        let (rows, cols) = (raw.len(), raw.features());
        let stats = fit_normalizer(&raw);
        let norm = normalize(&raw, &stats).unwrap();
        let expect = oracle_minmax(raw.values.data(), rows, cols);
        worst[0] = worst[0].max(max_abs_diff(norm.values.data(), &expect));

        // windowing
        let window = rng.random_range(2..=rows);
        let stride = rng.random_range(1..4);
        {
            let windows = make_windows(&raw, window, stride).unwrap();
            let mut expected_count = 0;
            let mut start = 0;
            while start + window <= rows {
                let w = &windows[expected_count];
                let expect: Vec<f64> = (start..start + window)
                    .flat_map(|r| (0..cols).map(move |c| (r, c)))
                    .map(|(r, c)| raw.values.data()[r * cols + c])
                    .collect();
                worst[1] = worst[1].max(max_abs_diff(w.values.data(), &expect));
                structural_ok &= w.origin_index == start;
                expected_count += 1;
                start += stride;
            }
            structural_ok &= windows.len() == expected_count;
        }

        // patching of a [T, N] hidden sequence
        let p = rng.random_range(1..5);
        let t = p * rng.random_range(1..6);
        let n = rng.random_range(1..4);
        let h = Tensor::from_fn(&[t, n], |_| rng.random_range(0.0..1.0));
        let grid = PatchGrid::from_hidden(&h, p).unwrap();
        let expect: Vec<f64> = (0..n)
            .flat_map(|d| (0..t / p).flat_map(move |k| (0..p).map(move |j| (d, k, j))))
            .map(|(d, k, j)| h.data()[(k * p + j) * n + d])
            .collect();
        structural_ok &= grid.values.shape() == [n, t / p, p];
        worst[2] = worst[2].max(max_abs_diff(grid.values.data(), &expect));

        // moving average with replicated edges
        let len = rng.random_range(1..20);
        let half = rng.random_range(0..4usize).min((len - 1) / 2);
        let w = 2 * half + 1;
        let d = rng.random_range(1..4);
        let z = Tensor::from_fn(&[len, d], |_| rng.random_range(-2.0..2.0));
        let ma = moving_average(&z, w).unwrap();
        let expect: Vec<f64> = (0..len)
            .flat_map(|i| (0..d).map(move |c| (i, c)))
            .map(|(i, c)| {
                (0..w)
                    .map(|k| {
                        let idx = (i as i64 + k as i64 - half as i64).clamp(0, len as i64 - 1) as usize;
                        z.data()[idx * d + c]
                    })
                    .sum::<f64>()
                    / w as f64
            })
            .collect();
        worst[3] = worst[3].max(max_abs_diff(ma.data(), &expect));

        // softmax cross-attention
        let (pq, pk, e) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..5));
        let q = Tensor::from_fn(&[pq, e], |_| rng.random_range(-3.0..3.0));
        let k = Tensor::from_fn(&[pk, e], |_| rng.random_range(-3.0..3.0));
        let v = Tensor::from_fn(&[pk, e], |_| rng.random_range(-3.0..3.0));
        let scaled = rng.random_bool(0.5);
        let got = cross_attention_values(&q, &k, &v, scaled).unwrap();
        let scale = if scaled { 1.0 / (e as f64).sqrt() } else { 1.0 };
        let mut expect = vec![0.0; pq * e];
        for i in 0..pq {
            let logits: Vec<f64> = (0..pk)
                .map(|j| scale * (0..e).map(|c| q.data()[i * e + c] * k.data()[j * e + c]).sum::<f64>())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = w.iter().sum();
            for c in 0..e {
                expect[i * e + c] = (0..pk).map(|j| w[j] / s * v.data()[j * e + c]).sum();
            }
        }
        worst[4] = worst[4].max(max_abs_diff(got.data(), &expect));

        // mean squared error
        let len = rng.random_range(1..50);
        let a = Tensor::from_fn(&[len], |_| rng.random_range(-5.0..5.0));
        let b = Tensor::from_fn(&[len], |_| rng.random_range(-5.0..5.0));
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
        let mse = g.mse(av, bv);
        let expect: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / len as f64;
        worst[5] = worst[5].max((g.value(mse).item() - expect).abs());
    }

    let names = ["min-max", "windowing", "patching", "moving average", "cross-attention", "mse"];
    for (name, w) in names.iter().zip(worst) {
        out.check(w <= ORACLE_TOLERANCE, format!("{name} max err {w:.1e}"));
    }
    out.check(structural_ok, "window/patch layout".into());
    out
}

// ---- criterion 2 ----

fn criterion_gradients() -> Outcome {
    let mut out = Outcome::new();
    let mut report = |what: &str, r: dlgan::gradcheck::GradCheckReport| {
        out.check(
            r.checked > 0 && r.max_rel_error < GRAD_TOLERANCE,
            format!("{what} rel {:.1e}", r.max_rel_error),
        );
    };
    let full = grad_model(false, false);
    report("L_R^AE", check_autoencoder_loss(&full));
    let worst_latent = [(false, false), (true, false), (false, true), (true, true)]
        .into_iter()
        .map(|(a, b)| check_latent_loss(&grad_model(a, b)))
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    report("L_R^H", worst_latent);
    report("generator GAN", check_generator_gan_loss(&full));
    report("discriminator GAN", check_discriminator_gan_loss(&full));
    out
}

// ---- criterion 3 ----

fn criterion_loss_identities() -> Outcome {
    let mut out = Outcome::new();
    let cfg = small_config();
    let (mut t, windows) = small_trainer(&cfg);
    let (x, z) = batch_and_noise(&t, &windows);
    let [l1, l2] = t.discriminator_terms(&x, &z).unwrap();
    let ld = l1 + l2;
    out.check((ld - 2.0 * LN_2).abs() <= 1e-6, format!("untrained L_D {ld:.9} vs 2 ln 2"));

    t.pretrain_autoencoder(&windows, &mut quiet()).unwrap();
    t.pretrain_latent_path(&windows, &mut quiet()).unwrap();
    for _ in 0..3 {
        t.joint_step(&stack_windows(&windows[..8])).unwrap();
    }
    let terms = t.generator_terms(&x, &z).unwrap();
    let sum = terms.feature_adversarial + terms.sequence_adversarial + terms.supervised;
    let logged = t.joint_step_with_noise(&x, &z, ONLY_GENERATORS).unwrap().generator;
    out.check(
        (logged - sum).abs() <= 1e-6,
        format!("L_G {logged:.6} = three terms {sum:.6}"),
    );
    let [d1, d2] = t.discriminator_terms(&x, &z).unwrap();
    let logged = t.joint_step_with_noise(&x, &z, ONLY_DISCRIMINATORS).unwrap().discriminator;
    out.check(
        (logged - (d1 + d2)).abs() <= 1e-6,
        format!("L_D {logged:.6} = two terms {:.6}", d1 + d2),
    );
    out
}

// ---- criterion 4 ----

fn criterion_phase_isolation() -> Outcome {
    let mut out = Outcome::new();
    let cfg = small_config();
    let (mut t, windows) = small_trainer(&cfg);
    let before = t.model().store.clone();
    t.pretrain_autoencoder(&windows, &mut quiet()).unwrap();
    out.check(
        changed(&before, &t.model().store) == sorted(update_sets::AUTOENCODER),
        "phase 1 updates encoder+decoder only".into(),
    );
    let before = t.model().store.clone();
    t.pretrain_latent_path(&windows, &mut quiet()).unwrap();
    out.check(
        changed(&before, &t.model().store) == sorted(update_sets::LATENT_PATH),
        "phase 2 updates extractor+generator2 only".into(),
    );
    let (x, z) = batch_and_noise(&t, &windows);
    let cases = [
        ("generators", ONLY_GENERATORS, update_sets::GENERATORS),
        ("autoencoder", ONLY_AUTOENCODER, update_sets::AUTOENCODER),
        ("discriminators", ONLY_DISCRIMINATORS, update_sets::DISCRIMINATORS),
    ];
    // The first round moves zero-initialized heads; the second must touch
    // every declared component and nothing else.
    let mut exact = [true; 3];
    for round in 0..2 {
        for (k, (_, which, expected)) in cases.iter().enumerate() {
            let before = t.model().store.clone();
            t.joint_step_with_noise(&x, &z, *which).unwrap();
            let touched = changed(&before, &t.model().store);
            exact[k] &= if round == 0 {
                touched.iter().all(|c| expected.contains(c))
            } else {
                touched == sorted(expected)
            };
        }
    }
    for ((name, _, _), ok) in cases.iter().zip(exact) {
        out.check(ok, format!("joint {name} sub-step"));
    }
    out
}

// ---- criteria 5 and 6: desk-scale reproductions ----

/// Settings for the single-core sine run.
fn sine_config() -> TrainingConfig {
    TrainingConfig {
        batch_size: 32,
        seed: SINE_SEED,
        ..TrainingConfig::default()
    }
}

/// Settings for the stock run; fewer epochs keep it inside an hour.
fn stock_config() -> TrainingConfig {
    TrainingConfig {
        batch_size: 64,
        epochs_autoencoder: 40,
        epochs_latent: 40,
        epochs_joint: 20,
        seed: SINE_SEED,
        ..TrainingConfig::default()
    }
}

struct Run {
    final_ae: f64,
    final_h: f64,
    report: MetricsReport,
    seconds: f64,
}

fn train_and_evaluate(name: &str, cfg: &TrainingConfig, raw: &RawSeries) -> Run {
    let start = Instant::now();
    let (stats, windows) = prepare(raw, cfg.window_len, cfg.stride).unwrap();
    let mut trainer = Trainer::new(cfg, stats, raw.feature_names.clone()).unwrap();
    let mut last = [f64::NAN; 2];
    let mut sink = |r: &LossRecord| {
        match r.phase {
            1 => last[0] = r.ae.unwrap_or(f64::NAN),
            2 => last[1] = r.h.unwrap_or(f64::NAN),
            _ => {}
        }
        if r.epoch % 10 == 9 {
            eprintln!("  [{name} {:>5.0}s] {}", start.elapsed().as_secs_f64(), r.to_json_line());
        }
    };
    trainer.train(&windows, &mut sink).unwrap();
    let real: Vec<Tensor> = windows.iter().map(|w: &TimeSeriesWindow| w.values.clone()).collect();
    let synth = synthesize(&trainer.state, real.len(), METRIC_SEED).unwrap();
    let mut report = evaluate(name, &real, &synth.normalized, METRIC_SEED, &ProbeSettings::default()).unwrap();
    report.no_extractor = cfg.no_extractor;
    report.no_reconstructor = cfg.no_reconstructor;
    eprintln!("  [{name}] {}", serde_json::to_string(&report).unwrap());
    Run {
        final_ae: last[0],
        final_h: last[1],
        report,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn sine_series() -> RawSeries {
    make_sine(dlgan::sine::DEFAULT_LENGTH, dlgan::sine::DEFAULT_FEATURES, SINE_SEED)
}

fn criterion_sine(full: &Run) -> Outcome {
    let mut out = Outcome::new();
    let r = &full.report;
    out.check(full.final_ae < 0.01, format!("stage-1 L_R^AE {:.4} < 0.01", full.final_ae));
    out.check(full.final_h < 0.02, format!("stage-2 L_R^H {:.4} < 0.02", full.final_h));
    let d = &r.discriminative_score;
    out.check(d.mean <= 0.25, format!("discriminative {:.3}±{:.3} ≤ 0.25", d.mean, d.std));
    let gap = (r.predictive_score.mean - r.predictive_baseline.mean).abs();
    out.check(
        gap <= 0.03,
        format!(
            "predictive {:.3} vs real-data baseline {:.3} (gap {gap:.3} ≤ 0.03)",
            r.predictive_score.mean, r.predictive_baseline.mean
        ),
    );
    out.detail.push_str(&format!("; {:.0}s", full.seconds));
    out
}

fn criterion_stock_and_ablations(full_sine: &Run) -> Outcome {
    let mut out = Outcome::new();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/stock_data.csv");
    let raw = load_csv(&path, &LoadOptions::default()).unwrap();
    let stock = train_and_evaluate("stock", &stock_config(), &raw);
    let d = &stock.report.discriminative_score;
    let p = &stock.report.predictive_score;
    out.check(d.mean <= 0.25, format!("stock discriminative {:.3}±{:.3} ≤ 0.25", d.mean, d.std));
    out.check(p.mean <= 0.06, format!("stock predictive {:.3}±{:.3} ≤ 0.06", p.mean, p.std));

    let full = &full_sine.report.discriminative_score;
    let sine = sine_series();
    for ablation in [Ablation::NoExtractor, Ablation::NoReconstructor, Ablation::All] {
        let mut cfg = sine_config();
        cfg.set_ablation(ablation);
        let run = train_and_evaluate(ablation.name(), &cfg, &sine);
        let a = &run.report.discriminative_score;
        out.check(
            full.mean <= a.mean + full.std,
            format!(
                "sine full {:.3}±{:.3} ≤ {} {:.3}±{:.3}",
                full.mean,
                full.std,
                ablation.name(),
                a.mean,
                a.std
            ),
        );
    }
    out
}

// ---- criterion 7 ----

fn criterion_determinism() -> Outcome {
    let mut out = Outcome::new();
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let cfg = small_config();
        let (mut t, windows) = small_trainer(&cfg);
        let mut log = String::new();
        t.train(&windows, &mut |r: &LossRecord| {
            log.push_str(&r.to_json_line());
            log.push('\n');
        })
        .unwrap();
        let ck = dir.path().join(format!("{tag}.dlgan"));
        t.state.save(&ck).unwrap();
        let synth = synthesize(&t.state, 25, 3).unwrap();
        let csv = dir.path().join(format!("{tag}.csv"));
        write_windows_csv(&csv, &t.state.feature_names, &synth.values).unwrap();
        (log, std::fs::read(ck).unwrap(), std::fs::read(csv).unwrap())
    };
    let (la, ca, sa) = run("a");
    let (lb, cb, sb) = run("b");
    out.check(!la.is_empty() && la == lb, "loss logs identical".into());
    out.check(ca == cb, format!("checkpoints identical ({} bytes)", ca.len()));
    out.check(sa == sb, "synthesis CSVs identical".into());
    out
}

// ---- criterion 8 ----

fn random_config(rng: &mut ChaCha8Rng) -> (TrainingConfig, usize) {
    let m = rng.random_range(1..5);
    let p = rng.random_range(1..4);
    let t = (p * rng.random_range(1..5)).max(2);
    let heads = rng.random_range(1..3);
    let generator_heads = rng.random_range(1..3);
    let noise_len = rng.random_range(1..6);
    let trend = [1, 3, 5][rng.random_range(0..3)];
    let cfg = TrainingConfig {
        window_len: t,
        patch_len: p,
        patch_embed: heads * rng.random_range(1..4),
        heads,
        generator_heads,
        trend_window: trend.min(if noise_len % 2 == 1 { noise_len } else { noise_len - 1 }).max(1),
        latent_dim: Some(rng.random_range(1..6)),
        feature_dim: Some(rng.random_range(1..6)),
        noise_len: Some(noise_len),
        noise_dim: Some(rng.random_range(1..4)),
        encoder_layers: rng.random_range(1..3),
        decoder_layers: rng.random_range(1..3),
        summarizer_layers: rng.random_range(1..3),
        generator_layers: rng.random_range(1..3),
        discriminator2_layers: rng.random_range(1..3),
        no_extractor: rng.random_bool(0.3),
        no_reconstructor: rng.random_bool(0.3),
        scale_cross_attention: rng.random_bool(0.5),
        ..TrainingConfig::default()
    };
    (cfg, m)
}

fn shapes_hold(model: &Dlgan, m: usize, seed: u64) -> bool {
    let d = model.dims;
    let b = 3;
    let x = Tensor::from_fn(&[b, d.window, m], |i| ((i * 37 % 101) as f64 + 0.5) / 102.0);
    let h = model.encode_tensor(&x).unwrap();
    let (lz, dz) = model.noise_shape();
    let z = sample_noise(b, lz, dz, &mut ChaCha8Rng::seed_from_u64(seed));
    let in_unit = |t: &Tensor| t.data().iter().all(|&v| v > 0.0 && v < 1.0);
    h.shape() == [b, d.window, d.latent]
        && in_unit(&h)
        && model.decode_tensor(&h).unwrap().shape() == [b, d.window, m]
        && model.extract_tensor(&h).unwrap().shape() == [b, d.feature_vec]
        && model.generate_feature_tensor(&z).unwrap().shape() == [b, d.feature_vec]
        && {
            let out = model.generate_tensor(&z).unwrap();
            out.shape() == [b, d.window, m] && in_unit(&out)
        }
}

fn criterion_ranges() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut built = 0;
    let mut shapes_ok = true;
    let mut synth_ok = true;
    while built < 40 {
        let (cfg, m) = random_config(&mut rng);
        let Ok(cfg) = cfg.resolved(m) else { continue };
        let dims = cfg.dims(m).unwrap();
        let model = Dlgan::new(dims, &mut ChaCha8Rng::seed_from_u64(built));
        shapes_ok &= shapes_hold(&model, m, built);
        let stats = dlgan::data::NormStats {
            min: vec![-2.0; m],
            max: vec![5.0; m],
        };
        let s = synthesize_with(&model, &stats, 5, built).unwrap();
        synth_ok &= s.normalized.len() == 5
            && s.normalized.iter().all(|w| {
                w.shape() == [dims.window, m] && w.data().iter().all(|&v| v > 0.0 && v < 1.0)
            })
            && s.values.iter().flat_map(|w| w.data()).all(|&v| v > -2.0 && v < 5.0);
        built += 1;
    }
    // A trained model as well.
    let cfg = small_config();
    let (mut t, windows) = small_trainer(&cfg);
    t.train(&windows, &mut quiet()).unwrap();
    let s = synthesize(&t.state, 200, 9).unwrap();
    synth_ok &= s
        .normalized
        .iter()
        .all(|w| w.shape() == [cfg.window_len, SMALL_FEATURES] && w.data().iter().all(|&v| v > 0.0 && v < 1.0));
    out.check(shapes_ok, format!("shape contracts on {built} random configs"));
    out.check(synth_ok, "synthetic windows inside (0,1)^(T×M)".into());
    out
}

fn main() -> ExitCode {
    let selected: Option<Vec<u32>> = std::env::var("DLGAN_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let wanted = |k: u32| selected.as_ref().is_none_or(|s| s.contains(&k));

    let titles = [
        "oracle equivalence",
        "gradient correctness",
        "loss identities",
        "phase isolation",
        "desk-scale sine reproduction",
        "stock reproduction and ablation ordering",
        "determinism",
        "range and shape suite",
    ];
    let mut failed = false;
    let mut full_sine: Option<Run> = None;
    for (k, title) in (1u32..).zip(titles) {
        if !wanted(k) {
            println!("SKIP criterion {k} ({title})");
            continue;
        }
        let start = Instant::now();
        let outcome = match k {
            1 => criterion_oracles(),
            2 => criterion_gradients(),
            3 => criterion_loss_identities(),
            4 => criterion_phase_isolation(),
            5 | 6 => {
                let full = full_sine.get_or_insert_with(|| train_and_evaluate("sine", &sine_config(), &sine_series()));
                if k == 5 {
                    criterion_sine(full)
                } else {
                    criterion_stock_and_ablations(full)
                }
            }
            7 => criterion_determinism(),
            _ => criterion_ranges(),
        };
        failed |= !outcome.pass;
        println!(
            "{} criterion {k} ({title}): {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
