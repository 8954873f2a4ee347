//! Layer kernels and their reverse-mode derivatives.
//!
//! Every layer's `forward` returns the output plus a [`LayerCache`] holding
//! what `backward` needs. A cache is only meaningful for the forward call
//! that produced it; feeding a cache from a different layer kind or batch
//! shape is reported as [`Error::StaleCache`].

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward, ReluCache};
pub use batchnorm::{BatchNorm, BatchNormCache, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::{Conv2d, ConvGeometry};
pub use dense::{flatten, Dense};
pub use dropout::{Dropout, DropoutCache};
pub use loss::{l2_penalty, l2_value, softmax, softmax_cross_entropy, L2Term, SoftmaxCrossEntropy};
pub use pool::{maxpool2d_backward, maxpool2d_forward, pooled_dims, MaxPoolCache};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu,
    MaxPool2d,
    Dropout(Dropout),
    Flatten,
    Dense(Dense<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerCache<T> {
    Conv2d { input: Tensor<T> },
    BatchNorm(BatchNormCache<T>),
    Relu(ReluCache),
    MaxPool2d(MaxPoolCache),
    Dropout(DropoutCache<T>),
    Flatten { input_shape: Vec<usize> },
    Dense { input: Tensor<T> },
}

impl<T> LayerCache<T> {
    fn kind(&self) -> &'static str {
        match self {
            LayerCache::Conv2d { .. } => "conv2d",
            LayerCache::BatchNorm(_) => "batchnorm",
            LayerCache::Relu(_) => "relu",
            LayerCache::MaxPool2d(_) => "maxpool2d",
            LayerCache::Dropout(_) => "dropout",
            LayerCache::Flatten { .. } => "flatten",
            LayerCache::Dense { .. } => "dense",
        }
    }
}

/// Gradient of the layer input plus one gradient per trainable parameter,
/// in [`Layer::params`] order.
pub struct LayerGrads<T> {
    pub input: Tensor<T>,
    pub params: Vec<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool2d => "maxpool2d",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        Ok(match self {
            Layer::Conv2d(conv) => {
                let (y, input) = conv.forward(x)?;
                (y, LayerCache::Conv2d { input })
            }
            Layer::BatchNorm(bn) => {
                let (y, c) = bn.forward(x, mode)?;
                (y, LayerCache::BatchNorm(c))
            }
            Layer::Relu => {
                let (y, c) = relu_forward(x);
                (y, LayerCache::Relu(c))
            }
            Layer::MaxPool2d => {
                let (y, c) = maxpool2d_forward(&x)?;
                (y, LayerCache::MaxPool2d(c))
            }
            Layer::Dropout(d) => {
                let (y, c) = d.forward(x, mode, rng);
                (y, LayerCache::Dropout(c))
            }
            Layer::Flatten => {
                let (y, input_shape) = flatten(x)?;
                (y, LayerCache::Flatten { input_shape })
            }
            Layer::Dense(d) => {
                let (y, input) = d.forward(x)?;
                (y, LayerCache::Dense { input })
            }
        })
    }

    pub fn backward(&self, cache: &LayerCache<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
        let mismatch = || {
            Error::StaleCache(format!("{} layer received a {} cache", self.kind(), cache.kind()))
        };
        let (input, params) = match (self, cache) {
            (Layer::Conv2d(conv), LayerCache::Conv2d { input }) => {
                let (dx, dw, db) = conv.backward(input, grad_out)?;
                (dx, vec![dw, db])
            }
            (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) => {
                let (dx, dg, db) = bn.backward(c, grad_out)?;
                (dx, vec![dg, db])
            }
            (Layer::Relu, LayerCache::Relu(c)) => (relu_backward(c, grad_out)?, vec![]),
            (Layer::MaxPool2d, LayerCache::MaxPool2d(c)) => (maxpool2d_backward(c, grad_out)?, vec![]),
            (Layer::Dropout(d), LayerCache::Dropout(c)) => (d.backward(c, grad_out)?, vec![]),
            (Layer::Flatten, LayerCache::Flatten { input_shape }) => {
                if grad_out.len() != input_shape.iter().product::<usize>() {
                    return Err(Error::StaleCache(format!(
                        "flatten grad_out {:?} does not match cached input {input_shape:?}",
                        grad_out.shape()
                    )));
                }
                (grad_out.clone().reshape(input_shape)?, vec![])
            }
            (Layer::Dense(d), LayerCache::Dense { input }) => {
                let (dx, dw, db) = d.backward(input, grad_out)?;
                (dx, vec![dw, db])
            }
            _ => return Err(mismatch()),
        };
        Ok(LayerGrads { input, params })
    }

    /// Trainable parameters.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => vec![],
        }
    }

    /// Every persistent tensor (parameters and running statistics) by name.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &b.gamma),
                ("beta", &b.beta),
                ("running_mean", &b.running_mean),
                ("running_var", &b.running_var),
            ],
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            _ => vec![],
        }
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::BatchNorm(b) => vec![
                ("gamma", &mut b.gamma),
                ("beta", &mut b.beta),
                ("running_mean", &mut b.running_mean),
                ("running_var", &mut b.running_var),
            ],
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            _ => vec![],
        }
    }

    /// L2 coefficient on this layer's weight tensor (`params()[0]`).
    pub fn l2_lambda(&self) -> f64 {
        match self {
            Layer::Conv2d(c) => c.l2_lambda,
            _ => 0.0,
        }
    }
}

/// RNG for code paths that must not sample (inference).
pub(crate) struct NoSampling;

impl rand::RngCore for NoSampling {
    fn next_u32(&mut self) -> u32 {
        unreachable!("inference does not sample")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("inference does not sample")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("inference does not sample")
    }
}

/// Reverse-mode step of one layer.
pub fn layer_backward<T: Scalar>(layer: &Layer<T>, cache: &LayerCache<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
    layer.backward(cache, grad_out)
}

/// Zero-mean Gaussian with He scale `sqrt(2 / fan_in)`. Samples are drawn
/// in `f64` so `f32` and `f64` models built from one seed agree.
pub fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::lit(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("positive extents")
}
