use roiattn_core::checks::tiny_detector_config;
use roiattn_core::config::{DetectionConfig, Variant};
use roiattn_core::scene::{generate_scene, SyntheticScene};
use roiattn_core::train::{train, Sequential, Trainer};

fn scenes(n: usize, base: u64) -> Vec<SyntheticScene> {
    (0..n).map(|i| generate_scene(base + i as u64)).collect()
}

#[test]
fn zero_learning_rate_epoch_leaves_parameters() {
    let mut cfg = tiny_detector_config(Variant::Full);
    cfg.lr = 0.0;
    cfg.warmup_steps = 0;
    let mut trainer = Trainer::new(&cfg).unwrap();
    let before = trainer.store.to_entries();
    let loss = trainer.epoch(&Sequential, &scenes(4, 10), 1).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert_eq!(trainer.steps_taken, 2);
    assert_eq!(trainer.store.to_entries(), before);
}

#[test]
fn nonzero_learning_rate_moves_every_trained_tensor_family() {
    let cfg = tiny_detector_config(Variant::Full);
    let mut trainer = Trainer::new(&cfg).unwrap();
    let before = trainer.store.to_entries();
    trainer.epoch(&Sequential, &scenes(2, 3), 1).unwrap();
    let after = trainer.store.to_entries();
    let moved = before.iter().zip(&after).filter(|(a, b)| a.1 != b.1).count();
    // weight decay alone touches every tensor that is not exactly zero
    assert!(moved * 2 > before.len(), "{moved} of {} tensors changed", before.len());
}

#[test]
fn training_is_reproducible() {
    let cfg = DetectionConfig {
        train_scenes: 4,
        val_scenes: 2,
        epochs: 2,
        warmup_steps: 2,
        seed: 5,
        ..tiny_detector_config(Variant::Full)
    };
    let a = train(&cfg, &Sequential, &mut |_| {}).unwrap();
    let b = train(&cfg, &Sequential, &mut |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.trainer.store.to_entries(), b.trainer.store.to_entries());
    let mut other = cfg.clone();
    other.seed = 6;
    let c = train(&other, &Sequential, &mut |_| {}).unwrap();
    assert_ne!(a.trainer.store.to_entries(), c.trainer.store.to_entries());
}

#[test]
fn detector_overfits_a_handful_of_scenes() {
    let cfg = DetectionConfig {
        warmup_steps: 20,
        lr: 0.01,
        lr_decay_epochs: vec![1],
        ..DetectionConfig::default()
    };
    let data = scenes(8, 900);
    // fixed scenes and fixed proposals, cycled as four batches of two
    let batches: Vec<Vec<(&SyntheticScene, u64)>> = data
        .chunks(2)
        .map(|c| c.iter().map(|s| (s, s.seed ^ 0x5EED)).collect())
        .collect();
    let mut trainer = Trainer::new(&cfg).unwrap();
    let mut losses = Vec::with_capacity(200);
    // one tenfold decay for the last quarter, as in the training schedule
    for it in 0..200 {
        let lr = trainer.lr_for_step(if it < 150 { 1 } else { 2 });
        losses.push(trainer.step(&Sequential, &batches[it % 4], lr).unwrap());
    }
    let first = losses[0];
    let last = losses[196..].iter().sum::<f64>() / 4.0;
    assert!(last * 10.0 <= first, "iteration 1 loss {first:.4}, mean over the last pass {last:.4}");
}
