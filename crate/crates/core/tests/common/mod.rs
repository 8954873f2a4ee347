//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fercnn::data::{Dataset, Example, Usage, IMAGE_SIDE};
use fercnn::model::NUM_CLASSES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Path of a real FER-2013 CSV, if the environment provides one.
pub fn fer_csv_from_env() -> Option<PathBuf> {
    std::env::var_os("FER2013_CSV").map(PathBuf::from).filter(|p| p.is_file())
}

/// A 48x48 image whose class is encoded by where a bright 14x14 patch sits,
/// on a noisy background.
pub fn synthetic_pixels(label: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (py, px) = [(4, 4), (4, 30), (17, 17), (30, 4), (30, 30), (4, 17), (30, 17)][label];
    let jy = rng.random_range(0..4usize);
    let jx = rng.random_range(0..4usize);
    let mut out = vec![0u8; IMAGE_SIDE * IMAGE_SIDE];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let inside = (py + jy..py + jy + 14).contains(&y) && (px + jx..px + jx + 14).contains(&x);
            let base: u8 = if inside { 150 } else { 40 };
            out[y * IMAGE_SIDE + x] = base.saturating_add(rng.random_range(0..90));
        }
    }
    out
}

/// Seeded synthetic dataset in file order Training, PublicTest, PrivateTest.
pub fn synthetic_dataset(train: usize, val: usize, test: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(train + val + test);
    let mut row = 0;
    for (usage, n) in [(Usage::Training, train), (Usage::PublicTest, val), (Usage::PrivateTest, test)] {
        for _ in 0..n {
            let label = rng.random_range(0..NUM_CLASSES);
            let pixels = synthetic_pixels(label, &mut rng);
            examples.push(Example::new(label as u8, pixels, usage, row).unwrap());
            row += 1;
        }
    }
    Dataset::new(examples)
}

pub fn write_dataset(d: &Dataset, path: &Path) {
    let f = std::fs::File::create(path).unwrap();
    d.write_csv(std::io::BufWriter::new(f)).unwrap();
}

/// Writes a synthetic FER-format CSV and returns its path.
pub fn synthetic_csv(dir: &Path, train: usize, val: usize, test: usize, seed: u64) -> PathBuf {
    let path = dir.join(format!("synthetic-{seed}.csv"));
    write_dataset(&synthetic_dataset(train, val, test, seed), &path);
    path
}

/// `|a - n| / max(|a|, |n|, 1e-5)`. The floor keeps gradients that are
/// exactly zero (a conv bias feeding batch norm) from turning round-off in
/// the difference quotient, around 1e-10, into a large ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-5);
    (analytic - numeric).abs() / denom
}

use fercnn::layers::{softmax_cross_entropy, Mode};
use fercnn::model::Model;
use fercnn::tensor::Tensor;

/// Direct same-padded convolution: for each example, six nested loops over
/// output channel, row, column, input channel and the two kernel offsets.
pub fn conv2d_direct(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; n * co * h * wd];
    for e in 0..n {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.as_slice()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad;
                                let ix = xx as isize + kx as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.get(&[e, c, iy as usize, ix as usize]).unwrap()
                                    * w.get(&[o, c, ky, kx]).unwrap();
                            }
                        }
                    }
                    out[((e * co + o) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, h, wd], out).unwrap()
}

/// Triple-loop row-major matrix product.
pub fn matmul_naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub const FD_STEP: f64 = 1e-5;

/// Central difference of `f` with respect to `values[i]`.
pub fn central_difference(values: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = values[i];
    values[i] = orig + FD_STEP;
    let up = f(values);
    values[i] = orig - FD_STEP;
    let down = f(values);
    values[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Compares an analytic gradient of `f` at `values` with central
/// differences at every index in `indices`; returns the worst relative error.
pub fn max_fd_error(values: &[f64], analytic: &[f64], indices: &[usize], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut v = values.to_vec();
    indices
        .iter()
        .map(|&i| rel_err(analytic[i], central_difference(&mut v, i, &f)))
        .fold(0.0, f64::max)
}

/// Objective used for the end-to-end check: mean cross-entropy plus L2,
/// with the dropout mask pinned by reseeding. Also returns a fingerprint of
/// every ReLU mask and pooling winner, so callers can tell when a probe
/// crossed a point where the network is not differentiable.
pub fn model_objective(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize], dropout_seed: u64) -> (f64, u64) {
    use fercnn::layers::LayerCache;
    use std::hash::{Hash, Hasher};
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let (logits, caches) = m.forward_logits(x.clone(), Mode::Train, &mut rng).unwrap();
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for c in &caches {
        match c {
            LayerCache::Relu(r) => r.active().hash(&mut h),
            LayerCache::MaxPool2d(p) => p.winners().hash(&mut h),
            _ => {}
        }
    }
    let loss = softmax_cross_entropy(&logits, labels).unwrap().loss + m.l2_penalty(None);
    (loss, h.finish())
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Sampled coordinates skipped because the +-step probes took different
    /// ReLU or pooling branches.
    pub kinks: usize,
    /// Coordinates compared per parameter tensor, then the input.
    pub per_tensor: Vec<(String, usize)>,
}

/// Compares analytic and central-difference gradients on `per_tensor`
/// random coordinates of every parameter tensor and of the input, in
/// train mode.
pub fn model_gradient_check(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize], per_tensor: usize, seed: u64) -> GradCheck {
    let dropout_seed = seed ^ 0x5eed;
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let (logits, caches) = m.forward_logits(x.clone(), Mode::Train, &mut rng).unwrap();
    let out = softmax_cross_entropy(&logits, labels).unwrap();
    let mut grads = model.backward(&caches, out.grad_logits).unwrap();
    model.l2_penalty(Some(&mut grads));

    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheck::default();
    let mut check = |name: String, len: usize, analytic: &[f64], probe: &dyn Fn(usize, f64) -> (f64, u64)| {
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < per_tensor.min(len) && attempts < 32 * per_tensor {
            attempts += 1;
            let i = pick.random_range(0..len);
            let (up, up_branch) = probe(i, FD_STEP);
            let (down, down_branch) = probe(i, -FD_STEP);
            if up_branch != down_branch {
                report.kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * FD_STEP);
            report.max_rel_err = report.max_rel_err.max(rel_err(analytic[i], numeric));
            report.checked += 1;
            accepted += 1;
        }
        report.per_tensor.push((name, accepted));
    };
    for (li, layer) in model.layers().iter().enumerate() {
        for pi in 0..layer.params().len() {
            let len = layer.params()[pi].len();
            check(format!("{li}.{}.{pi}", layer.kind()), len, grads.params[li][pi].as_slice(), &|i, d| {
                let mut probe = model.clone();
                probe.layers_mut()[li].params_mut()[pi].as_mut_slice()[i] += d;
                model_objective(&probe, x, labels, dropout_seed)
            });
        }
    }
    check("input".into(), x.len(), grads.input.as_slice(), &|i, d| {
        let mut probe = x.clone();
        probe.as_mut_slice()[i] += d;
        model_objective(model, &probe, labels, dropout_seed)
    });
    report
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
}

fn all(len: usize) -> Vec<usize> {
    (0..len).collect()
}

/// Conv on a 2x3x6x6 input with four 3x3 filters, objective `sum(y * r)`.
pub fn conv_gradient_error(seed: u64) -> f64 {
    use fercnn::layers::Conv2d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&[2, 3, 6, 6], &mut rng);
    let w = random_tensor(&[4, 3, 3, 3], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    let r = random_tensor(&[2, 4, 6, 6], &mut rng);
    let conv = Conv2d::new(w.clone(), b.clone(), 0.0).unwrap();
    let (_, input) = conv.forward(x.clone()).unwrap();
    let (dx, dw, db) = conv.backward(&input, &r).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        let c = Conv2d::new(w.clone(), b.clone(), 0.0).unwrap();
        weighted_sum(&c.forward(x.clone()).unwrap().0, &r)
    };
    let ex = max_fd_error(x.as_slice(), dx.as_slice(), &all(x.len()), |v| {
        f(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &w, &b)
    });
    let ew = max_fd_error(w.as_slice(), dw.as_slice(), &all(w.len()), |v| {
        f(&x, &Tensor::from_vec(w.shape(), v.to_vec()).unwrap(), &b)
    });
    let eb = max_fd_error(b.as_slice(), db.as_slice(), &all(b.len()), |v| {
        f(&x, &w, &Tensor::from_vec(b.shape(), v.to_vec()).unwrap())
    });
    ex.max(ew).max(eb)
}

/// Dense layer with 4 inputs and 5 outputs on a batch of 3.
pub fn dense_gradient_error(seed: u64) -> f64 {
    use fercnn::layers::Dense;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&[3, 4], &mut rng);
    let w = random_tensor(&[5, 4], &mut rng);
    let b = random_tensor(&[5], &mut rng);
    let r = random_tensor(&[3, 5], &mut rng);
    let dense = Dense::new(w.clone(), b.clone()).unwrap();
    let (_, input) = dense.forward(x.clone()).unwrap();
    let (dx, dw, db) = dense.backward(&input, &r).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        let d = Dense::new(w.clone(), b.clone()).unwrap();
        weighted_sum(&d.forward(x.clone()).unwrap().0, &r)
    };
    let ex = max_fd_error(x.as_slice(), dx.as_slice(), &all(x.len()), |v| {
        f(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &w, &b)
    });
    let ew = max_fd_error(w.as_slice(), dw.as_slice(), &all(w.len()), |v| {
        f(&x, &Tensor::from_vec(w.shape(), v.to_vec()).unwrap(), &b)
    });
    let eb = max_fd_error(b.as_slice(), db.as_slice(), &all(b.len()), |v| {
        f(&x, &w, &Tensor::from_vec(b.shape(), v.to_vec()).unwrap())
    });
    ex.max(ew).max(eb)
}

/// Train-mode batch norm over a 4x3x3x3 batch with non-trivial gamma and beta.
pub fn batchnorm_gradient_error(seed: u64) -> f64 {
    use fercnn::layers::BatchNorm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&[4, 3, 3, 3], &mut rng);
    let r = random_tensor(&[4, 3, 3, 3], &mut rng);
    let mut bn = BatchNorm::<f64>::new(3);
    bn.gamma = random_tensor(&[3], &mut rng).map(|v| v + 1.5);
    bn.beta = random_tensor(&[3], &mut rng);
    let (_, cache) = bn.clone().forward(x.clone(), Mode::Train).unwrap();
    let (dx, dg, db) = bn.backward(&cache, &r).unwrap();
    let f = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
        let mut layer = bn.clone();
        layer.gamma = g.clone();
        layer.beta = b.clone();
        weighted_sum(&layer.forward(x.clone(), Mode::Train).unwrap().0, &r)
    };
    let ex = max_fd_error(x.as_slice(), dx.as_slice(), &all(x.len()), |v| {
        f(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &bn.gamma, &bn.beta)
    });
    let eg = max_fd_error(bn.gamma.as_slice(), dg.as_slice(), &all(3), |v| {
        f(&x, &Tensor::from_vec(&[3], v.to_vec()).unwrap(), &bn.beta)
    });
    let eb = max_fd_error(bn.beta.as_slice(), db.as_slice(), &all(3), |v| {
        f(&x, &bn.gamma, &Tensor::from_vec(&[3], v.to_vec()).unwrap())
    });
    ex.max(eg).max(eb)
}

/// Five-layer model on two synthetic 48x48 examples.
pub fn five_layer_gradient_check(seed: u64, per_tensor: usize) -> GradCheck {
    let model = fercnn::model::build_five_layer::<f64>(seed);
    let d = synthetic_dataset(2, 0, 0, seed);
    let (x, labels) = d.batch::<f64>(&[0, 1], None);
    model_gradient_check(&model, &x, &labels, per_tensor, seed)
}
