//! Trainer behavior on the toy corpus: epoch-zero reports, determinism,
//! checkpoint handling, resumability.

mod common;

use dualstream::net::{Model, ModelConfig};
use dualstream::train::{Checkpoint, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk_config(seed: u64) -> ModelConfig {
    ModelConfig {
        input_side: 32,
        seed,
        ..ModelConfig::default()
    }
}

fn small_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::write_smoke_corpus(dir.path(), 32, 4, 1);
    let model = Model::<f32>::init(&desk_config(1)).unwrap();
    let before: Vec<Vec<f32>> = model.named_parameters().iter().map(|(_, t)| t.to_vec()).collect();
    let mut trainer = Trainer::new(model, small_train_config()).unwrap();
    let report = trainer.fit(&manifest, 0, |_| {}).unwrap();
    assert!(report.epochs.is_empty());
    let after: Vec<Vec<f32>> = trainer
        .model
        .named_parameters()
        .iter()
        .map(|(_, t)| t.to_vec())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn one_epoch_updates_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::write_smoke_corpus(dir.path(), 32, 4, 2);
    let model = Model::<f32>::init(&desk_config(2)).unwrap();
    let before: Vec<f32> = model.named_parameters()[0].1.to_vec();
    let mut trainer = Trainer::new(model, small_train_config()).unwrap();
    let report = trainer.fit(&manifest, 1, |_| {}).unwrap();
    assert_eq!(report.epochs.len(), 1);
    let log = &report.epochs[0];
    assert!(log.train_loss.is_finite());
    assert!(log.lr == 2e-4);
    assert!(log.val.is_none());
    let after: Vec<f32> = trainer.model.named_parameters()[0].1.to_vec();
    assert_ne!(before, after);
}

#[test]
fn same_seeds_give_bit_identical_checkpoints_f64() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::write_smoke_corpus(dir.path(), 32, 3, 3);
    let run = || {
        let model = Model::<f64>::init(&desk_config(5)).unwrap();
        let mut trainer = Trainer::new(model, small_train_config()).unwrap();
        trainer.fit(&manifest, 2, |_| {}).unwrap();
        let path = dir.path().join(format!("run_{}.ckpt", rand::random::<u32>()));
        Checkpoint::capture(&trainer.model, &trainer.opt, &trainer.cfg, trainer.epoch)
            .save(&path)
            .unwrap();
        std::fs::read(&path).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_continues_from_checkpoint_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::write_smoke_corpus(dir.path(), 32, 3, 4);
    let cfg = small_train_config();

    let model = Model::<f32>::init(&desk_config(6)).unwrap();
    let mut trainer = Trainer::new(model, cfg.clone()).unwrap();
    trainer.fit(&manifest, 2, |_| {}).unwrap();
    let ckpt = Checkpoint::capture(&trainer.model, &trainer.opt, &trainer.cfg, trainer.epoch);

    let model2 = Model::<f32>::init(&desk_config(6)).unwrap();
    let mut resumed = Trainer::new(model2, cfg).unwrap();
    resumed.resume(&ckpt).unwrap();
    assert_eq!(resumed.epoch, 2);
    assert_eq!(resumed.opt.t, trainer.opt.t);

    // both trainers take the same next step
    let log_a = trainer.run_epoch(&manifest).unwrap();
    let log_b = resumed.run_epoch(&manifest).unwrap();
    assert_eq!(log_a.train_loss, log_b.train_loss);
}

#[test]
fn best_checkpoint_is_retained() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::write_smoke_corpus(dir.path(), 32, 3, 7);
    let model = Model::<f32>::init(&desk_config(7)).unwrap();
    let mut trainer = Trainer::new(model, small_train_config()).unwrap();
    trainer.fit(&manifest, 2, |_| {}).unwrap();
    let best = trainer.best_checkpoint().expect("best checkpoint retained");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = dualstream::Tensor::<f32>::rand_uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng);
    let (restored, _) = best.restore::<f32>().unwrap();
    assert!(restored.forward(&x, false).unwrap().to_vec()[0].is_finite());
}
