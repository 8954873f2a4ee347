mod common;

use common::synthetic_dataset;
use fercnn::layers::{Layer, Mode};
use fercnn::model::{build_baseline, build_five_layer, LayerSpec, Model, ModelSpec};
use fercnn::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// He-initialized logits are not small enough to keep every probability
/// within 0.25 of 1/7 (their spread is roughly 0.5 to 1 in infer mode), so
/// this checks shape and that no class is ruled out at initialization.
#[test]
fn fresh_models_give_proper_distributions() {
    let d = synthetic_dataset(4, 0, 0, 1);
    let (x, _) = d.batch::<f32>(&[0, 1, 2, 3], None);
    for mut model in [build_baseline::<f32>(1), build_five_layer::<f32>(1)] {
        let (logits, _) = model.forward_logits(x.clone(), Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(logits.shape(), &[4, 7]);
        let p = model.predict(x.clone()).unwrap();
        assert_eq!(p.shape(), &[4, 7]);
        for row in p.as_slice().chunks(7) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&v| v > 1e-4 && v < 0.999), "{} {row:?}", model.spec().name);
        }
    }
}

#[test]
fn inference_is_bitwise_repeatable() {
    let d = synthetic_dataset(3, 0, 0, 2);
    let (x, _) = d.batch::<f32>(&[0, 1, 2], None);
    let mut model = build_five_layer::<f32>(2);
    let a = model.predict(x.clone()).unwrap();
    let b = model.predict(x).unwrap();
    assert_eq!(a, b);
}

/// Sets every batch norm's running statistics to the statistics of the
/// batch it sees, so train-mode and infer-mode normalization coincide.
fn pin_running_stats(model: &mut Model<f64>, x: &Tensor<f64>) {
    let mut act = x.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for layer in model.layers_mut() {
        if let Layer::BatchNorm(bn) = layer {
            let s = act.shape().to_vec();
            let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
            for ch in 0..c {
                let vals: Vec<f64> = (0..n)
                    .flat_map(|i| act.as_slice()[(i * c + ch) * hw..(i * c + ch + 1) * hw].to_vec())
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                bn.running_mean.as_mut_slice()[ch] = mean;
                bn.running_var.as_mut_slice()[ch] = var;
            }
        }
        act = layer.forward(act, Mode::Infer, &mut rng).unwrap().0;
    }
}

#[test]
fn train_forward_equals_infer_when_stats_match() {
    let mut spec = ModelSpec::five_layer();
    for l in spec.layers.iter_mut() {
        if let LayerSpec::Dropout { rate } = l {
            *rate = 0.0;
        }
    }
    let mut model = Model::<f64>::from_seed(spec, 9).unwrap();
    let d = synthetic_dataset(3, 0, 0, 9);
    let (x, _) = d.batch::<f64>(&[0, 1, 2], None);
    pin_running_stats(&mut model, &x);
    let infer = model.clone().predict(x.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (train, _) = model.clone().forward(x, Mode::Train, &mut rng).unwrap();
    for (a, b) in infer.as_slice().iter().zip(train.as_slice()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn infer_does_not_touch_running_stats() {
    let d = synthetic_dataset(2, 0, 0, 4);
    let (x, _) = d.batch::<f32>(&[0, 1], None);
    let mut model = build_baseline::<f32>(4);
    let before = model.clone();
    model.predict(x.clone()).unwrap();
    assert_eq!(model, before);
    model.forward(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_ne!(model, before);
}

#[test]
fn wrong_geometry_is_reported_not_panicked() {
    let mut model = build_baseline::<f32>(0);
    let err = model.predict(Tensor::zeros(&[1, 1, 32, 32])).unwrap_err();
    assert!(err.to_string().contains("32"), "{err}");
}
