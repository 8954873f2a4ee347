mod common;

use common::synthetic_dataset;
use fercnn::data::Dataset;
use fercnn::model::{build_five_layer, LayerSpec, Model, ModelSpec};
use fercnn::train::{evaluate_detailed, load_checkpoint, save_checkpoint, Metrics, Trainer, TrainingConfig};
use fercnn::Error;
use proptest::prelude::*;

fn small_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        batch_size: 16,
        max_epochs: 3,
        seed,
        eval_batch_size: 64,
        ..TrainingConfig::default()
    }
}

fn history_csv(t: &Trainer<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    t.state.write_history_csv(&mut out).unwrap();
    out
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let d = synthetic_dataset(8, 4, 0, 0);
    let splits = fercnn::data::split_by_usage(&d);
    let model = build_five_layer::<f32>(0);
    let cfg = TrainingConfig { max_epochs: 0, ..small_config(0) };
    let (trained, state) = fercnn::train::train(model.clone(), &splits.train, &splits.val, &cfg).unwrap();
    assert_eq!(trained, model);
    assert!(state.history.is_empty());
}

/// Softmax regression is convex, so a small step along the gradient must
/// lower the loss on the same minibatch.
#[test]
fn one_step_descends_on_convex_fixture() {
    let spec = ModelSpec {
        name: "softmax-regression".into(),
        input: ModelSpec::FER_INPUT,
        num_classes: 7,
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { in_features: 2304, out_features: 7 }],
    };
    let d = synthetic_dataset(32, 0, 0, 3);
    let mut model = Model::<f64>::from_seed(spec, 3).unwrap();
    let before = evaluate_detailed(&mut model, &d, 64).unwrap().loss;
    let cfg = TrainingConfig { batch_size: 32, initial_lr: 1e-3, momentum: 0.0, ..TrainingConfig::default() };
    let mut trainer = Trainer::new(model, cfg).unwrap();
    trainer.run_epoch(&d, &d).unwrap();
    let after = trainer.state.history[0].val_loss;
    assert!(after < before, "{after} >= {before}");
}

fn splits(seed: u64) -> (Dataset, Dataset) {
    let s = fercnn::data::split_by_usage(&synthetic_dataset(48, 16, 0, seed));
    (s.train, s.val)
}

#[test]
fn identical_seeds_give_identical_history() {
    let (train, val) = splits(5);
    let run = || {
        let mut t = Trainer::new(build_five_layer::<f32>(5), small_config(5)).unwrap();
        t.fit(&train, &val).unwrap();
        t
    };
    let (a, b) = (run(), run());
    assert_eq!(history_csv(&a), history_csv(&b));
    assert_eq!(a.model, b.model);
    let lrs: Vec<f64> = a.state.history.iter().map(|r| r.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn checkpoint_roundtrip_and_resume() {
    let (train, val) = splits(6);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainingConfig { augment_flip: true, ..small_config(6) };

    let mut straight = Trainer::new(build_five_layer::<f32>(6), cfg.clone()).unwrap();
    straight.run_epoch(&train, &val).unwrap();
    straight.run_epoch(&train, &val).unwrap();

    let mut first = Trainer::new(build_five_layer::<f32>(6), cfg).unwrap();
    first.run_epoch(&train, &val).unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&first, &path).unwrap();
    let mut resumed = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(resumed.model, first.model);
    assert_eq!(resumed.state, first.state);

    let again = dir.path().join("b.ckpt");
    save_checkpoint(&resumed, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    resumed.run_epoch(&train, &val).unwrap();
    assert_eq!(resumed.state.history, straight.state.history);
    assert_eq!(resumed.model, straight.model);
    assert_eq!(history_csv(&resumed), history_csv(&straight));
}

#[test]
fn truncated_checkpoint_names_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    let t = Trainer::new(build_five_layer::<f32>(0), small_config(0)).unwrap();
    save_checkpoint(&t, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    match load_checkpoint::<f32>(&path) {
        Err(Error::Truncated { expected, actual, .. }) => {
            assert_eq!(expected, bytes.len() as u64);
            assert_eq!(actual, bytes.len() as u64 - 1);
        }
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    assert!(matches!(load_checkpoint::<f64>(&dir.path().join("missing")), Err(Error::Io { .. })));
}

proptest! {
    #[test]
    fn accuracy_is_confusion_trace_ratio(pairs in prop::collection::vec((0usize..7, 0usize..7), 1..200)) {
        let (labels, preds): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = Metrics::from_predictions(&labels, &preds).unwrap();
        let trace: u64 = (0..7).map(|k| m.confusion[k][k]).sum();
        let total: u64 = m.confusion.iter().flatten().sum();
        prop_assert_eq!(total, labels.len() as u64);
        prop_assert_eq!(m.accuracy, trace as f64 / total as f64);
    }
}
