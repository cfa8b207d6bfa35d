//! Loss identities, update isolation and reproducibility of the trainer.

use std::f64::consts::LN_2;

mod common;

use common::*;
use dlgan::data::stack_windows;
use dlgan::trainer::{synthesize, update_sets, LossRecord};
use dlgan::{Checkpoint, Trainer};

#[test]
fn untrained_discriminators_give_two_ln_two() {
    let (t, windows) = small_trainer(&small_config());
    let (x, z) = batch_and_noise(&t, &windows);
    let [l1, l2] = t.discriminator_terms(&x, &z).unwrap();
    assert!((l1 - LN_2).abs() < 1e-6, "{l1}");
    assert!((l2 - LN_2).abs() < 1e-6, "{l2}");
    assert!((l1 + l2 - 2.0 * LN_2).abs() < 1e-6);
}

#[test]
fn logged_losses_decompose_into_their_terms() {
    let cfg = small_config();
    let (mut t, windows) = small_trainer(&cfg);
    t.pretrain_autoencoder(&windows, &mut quiet()).unwrap();
    t.pretrain_latent_path(&windows, &mut quiet()).unwrap();
    // A few joint steps move the discriminators off their zero heads.
    for _ in 0..3 {
        t.joint_step(&stack_windows(&windows[..8])).unwrap();
    }
    let (x, z) = batch_and_noise(&t, &windows);
    let terms = t.generator_terms(&x, &z).unwrap();
    let [d1, d2] = t.discriminator_terms(&x, &z).unwrap();
        let logged = t.joint_step_with_noise(&x, &z, ONLY_GENERATORS).unwrap();
    assert!((logged.generator - terms.total()).abs() < 1e-6);
    assert!(
        (terms.total() - (terms.feature_adversarial + terms.sequence_adversarial + terms.supervised)).abs()
            < 1e-12
    );
    let (x, z) = batch_and_noise(&t, &windows);
    let [d1b, d2b] = t.discriminator_terms(&x, &z).unwrap();
        let logged = t.joint_step_with_noise(&x, &z, ONLY_DISCRIMINATORS).unwrap();
    assert!((logged.discriminator - (d1b + d2b)).abs() < 1e-6);
    assert!(d1.is_finite() && d2.is_finite());
}

#[test]
fn pretraining_phases_touch_only_their_components() {
    let cfg = small_config();
    let (mut t, windows) = small_trainer(&cfg);
    let before = t.model().store.clone();
    t.pretrain_autoencoder(&windows, &mut quiet()).unwrap();
    assert_eq!(changed(&before, &t.model().store), sorted(update_sets::AUTOENCODER));

    let before = t.model().store.clone();
    t.pretrain_latent_path(&windows, &mut quiet()).unwrap();
    assert_eq!(changed(&before, &t.model().store), sorted(update_sets::LATENT_PATH));
}

#[test]
fn joint_sub_steps_touch_only_their_components() {
    let cfg = small_config();
    let (mut t, windows) = small_trainer(&cfg);
    t.pretrain_autoencoder(&windows, &mut quiet()).unwrap();
    t.pretrain_latent_path(&windows, &mut quiet()).unwrap();
    let (x, z) = batch_and_noise(&t, &windows);
    let cases = [
        (ONLY_GENERATORS, update_sets::GENERATORS),
        (ONLY_AUTOENCODER, update_sets::AUTOENCODER),
        (ONLY_DISCRIMINATORS, update_sets::DISCRIMINATORS),
    ];
    // Two rounds so that zero-initialized heads no longer block gradients.
    for _ in 0..2 {
        for (which, expected) in cases {
            let before = t.model().store.clone();
            t.joint_step_with_noise(&x, &z, which).unwrap();
            let touched = changed(&before, &t.model().store);
            assert!(!touched.is_empty());
            for c in &touched {
                assert!(expected.contains(c), "{which:?} touched {c:?}");
            }
        }
    }
}

#[test]
fn same_seed_and_data_reproduce_bitwise() {
    let cfg = small_config();
    let run = || {
        let (mut t, windows) = small_trainer(&cfg);
        let mut lines = Vec::new();
        t.train(&windows, &mut |r: &LossRecord| lines.push(r.to_json_line())).unwrap();
        (lines, t.state.to_bytes())
    };
    let (a_log, a_bytes) = run();
    let (b_log, b_bytes) = run();
    assert_eq!(a_log.len(), 6);
    assert_eq!(a_log, b_log);
    assert_eq!(a_bytes, b_bytes);

    let mut other = cfg.clone();
    other.seed += 1;
    let (stats, names, windows) = small_data(&other);
    let mut t = Trainer::new(&other, stats, names).unwrap();
    let mut lines = Vec::new();
    t.train(&windows, &mut |r: &LossRecord| lines.push(r.to_json_line())).unwrap();
    assert_ne!(lines, a_log);
}

#[test]
fn saved_checkpoint_synthesizes_identically() {
    let cfg = small_config();
    let (mut t, windows) = small_trainer(&cfg);
    t.train(&windows, &mut quiet()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.dlgan");
    t.state.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let a = synthesize(&t.state, 37, 4).unwrap();
    let b = synthesize(&loaded, 37, 4).unwrap();
    assert_eq!(a.normalized, b.normalized);
    assert_eq!(a.values, b.values);
    assert_eq!(a.normalized.len(), 37);
    for w in &a.normalized {
        assert_eq!(w.shape(), &[cfg.window_len, SMALL_FEATURES]);
        assert!(w.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
    // Batching does not change individual windows.
    let c = synthesize(&loaded, 300, 4).unwrap();
    assert_eq!(&c.normalized[..37], &a.normalized[..]);
}
