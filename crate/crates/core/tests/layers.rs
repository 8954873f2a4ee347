mod common;

use common::random_tensor;
use fercnn::layers::{
    softmax_cross_entropy, BatchNorm, Conv2d, Dense, Dropout, Layer, Mode,
};
use fercnn::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn layers_for(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<Layer<f64>> {
    vec![
        Layer::Conv2d(Conv2d::new(random_tensor(&[2, c, 3, 3], rng), random_tensor(&[2], rng), 0.0).unwrap()),
        Layer::BatchNorm(BatchNorm::new(c)),
        Layer::Relu,
        Layer::MaxPool2d,
        Layer::Dropout(Dropout::new(0.3).unwrap()),
        Layer::Flatten,
        Layer::Dense(Dense::new(random_tensor(&[3, c * h * w], rng), random_tensor(&[3], rng)).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_returns_input_shaped_gradient(
        n in 2usize..4, c in 1usize..4, h in 2usize..7, w in 2usize..7, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mut layer in layers_for(c, h, w, &mut rng) {
            let shape = match layer {
                Layer::Dense(_) => vec![n, c * h * w],
                _ => vec![n, c, h, w],
            };
            let x = random_tensor(&shape, &mut rng);
            let (y, cache) = layer.forward(x.clone(), Mode::Train, &mut rng).unwrap();
            let g = random_tensor(y.shape(), &mut rng);
            let grads = layer.backward(&cache, &g).unwrap();
            prop_assert_eq!(grads.input.shape(), x.shape(), "{}", layer.kind());
            prop_assert_eq!(grads.params.len(), layer.params().len());
            for (gp, p) in grads.params.iter().zip(layer.params()) {
                prop_assert_eq!(gp.shape(), p.shape());
            }
        }
    }

    #[test]
    fn dropout_infer_is_exact_identity(rate in 0.0f64..0.95, v in prop::collection::vec(-1e3f64..1e3, 1..64)) {
        let x = Tensor::from_vec(&[v.len()], v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, _) = Dropout::new(rate).unwrap().forward(x.clone(), Mode::Infer, &mut rng);
        prop_assert_eq!(y, x);
    }

    #[test]
    fn relu_passes_gradient_on_positive_inputs(v in prop::collection::vec(1e-6f64..10.0, 1..64)) {
        let x = Tensor::from_vec(&[1, v.len()], v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut relu = Layer::Relu;
        let (y, cache) = relu.forward(x.clone(), Mode::Train, &mut rng).unwrap();
        prop_assert_eq!(&y, &x);
        let g = x.map(|a| a * 3.0 - 1.0);
        prop_assert_eq!(relu.backward(&cache, &g).unwrap().input, g);
    }

    #[test]
    fn cross_entropy_is_non_negative(
        (n, v, labels) in (1usize..5).prop_flat_map(|n| {
            (Just(n), prop::collection::vec(-30.0f64..30.0, n * 7), prop::collection::vec(0usize..7, n))
        })
    ) {
        let out = softmax_cross_entropy(&Tensor::from_vec(&[n, 7], v).unwrap(), &labels).unwrap();
        prop_assert!(out.loss >= 0.0);
        prop_assert!(out.loss.is_finite());
    }
}

#[test]
fn l2_zero_weight_and_zero_lambda() {
    use fercnn::layers::{l2_penalty, L2Term};
    let zero = Tensor::<f64>::zeros(&[3, 3]);
    let mut g = Tensor::full(&[3, 3], 0.5);
    assert_eq!(l2_penalty(&mut [L2Term { weight: &zero, lambda: 0.01, grad: &mut g }]).unwrap(), 0.0);
    assert!(g.as_slice().iter().all(|&v| v == 0.5));
    let w = Tensor::full(&[3, 3], 2.0);
    assert_eq!(l2_penalty(&mut [L2Term { weight: &w, lambda: 0.0, grad: &mut g }]).unwrap(), 0.0);
    assert!(g.as_slice().iter().all(|&v| v == 0.5));
}
