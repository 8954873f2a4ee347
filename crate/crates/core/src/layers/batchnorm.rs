use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-channel batch normalization. Statistics are taken over every axis
/// except the channel axis (`n, h, w` for NCHW, `n` for `[n, features]`).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormCache<T> {
    pub(crate) xhat: Tensor<T>,
    pub(crate) inv_std: Vec<f64>,
    pub(crate) train: bool,
}

/// `(n, c, spatial)` view of a rank-2 or rank-4 tensor.
fn channel_view(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::shape("batchnorm", format!("expected rank 2 or 4 input, got {shape:?}"))),
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (n, c, spatial) = channel_view(x.shape())?;
        if c != self.channels() {
            return Err(Error::shape(
                "batchnorm",
                format!("input has {c} channels, layer normalizes {}", self.channels()),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("batchnorm epsilon must be > 0, got {}", self.epsilon)));
        }
        let train = mode == Mode::Train;
        if train && n < 2 {
            return Err(Error::InvalidArgument(
                "batchnorm in train mode needs a batch of at least 2 examples".into(),
            ));
        }
        let count = (n * spatial) as f64;
        let plane = |i: usize, ch: usize| (i * c + ch) * spatial..(i * c + ch + 1) * spatial;

        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        if train {
            let xs = x.as_slice();
            for ch in 0..c {
                let mut s = 0.0;
                for i in 0..n {
                    s += xs[plane(i, ch)].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                }
                let m = s / count;
                let mut q = 0.0;
                for i in 0..n {
                    q += xs[plane(i, ch)]
                        .iter()
                        .map(|v| {
                            let d = v.to_f64().unwrap() - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = q / count;
            }
            let mom = self.momentum;
            let unbias = count / (count - 1.0);
            for ch in 0..c {
                let rm = &mut self.running_mean.as_mut_slice()[ch];
                *rm = T::lit(mom * rm.to_f64().unwrap() + (1.0 - mom) * mean[ch]);
                let rv = &mut self.running_var.as_mut_slice()[ch];
                *rv = T::lit(mom * rv.to_f64().unwrap() + (1.0 - mom) * var[ch] * unbias);
            }
        } else {
            for ch in 0..c {
                mean[ch] = self.running_mean.as_slice()[ch].to_f64().unwrap();
                var[ch] = self.running_var.as_slice()[ch].to_f64().unwrap();
            }
        }

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut xhat = x;
        let mut y = vec![T::zero(); xhat.len()];
        for i in 0..n {
            for ch in 0..c {
                let (m, s) = (T::lit(mean[ch]), T::lit(inv_std[ch]));
                let (g, b) = (self.gamma.as_slice()[ch], self.beta.as_slice()[ch]);
                let r = plane(i, ch);
                for (xv, yv) in xhat.as_mut_slice()[r.clone()].iter_mut().zip(&mut y[r]) {
                    *xv = (*xv - m) * s;
                    *yv = g * *xv + b;
                }
            }
        }
        let y = Tensor::from_vec(xhat.shape(), y)?;
        Ok((y, BatchNormCache { xhat, inv_std, train }))
    }

    /// Returns `(grad_in, grad_gamma, grad_beta)`. In train mode the
    /// gradient flows through the batch mean and variance.
    pub fn backward(&self, cache: &BatchNormCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        if grad_out.shape() != cache.xhat.shape() {
            return Err(Error::StaleCache(format!(
                "batchnorm grad_out {:?} does not match cached {:?}",
                grad_out.shape(),
                cache.xhat.shape()
            )));
        }
        let (n, c, spatial) = channel_view(grad_out.shape())?;
        let count = (n * spatial) as f64;
        let plane = |i: usize, ch: usize| (i * c + ch) * spatial..(i * c + ch + 1) * spatial;
        let dy = grad_out.as_slice();
        let xh = cache.xhat.as_slice();

        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for i in 0..n {
            for (ch, (sd, sdx)) in sum_dy.iter_mut().zip(sum_dy_xhat.iter_mut()).enumerate() {
                let r = plane(i, ch);
                for (&g, &h) in dy[r.clone()].iter().zip(&xh[r]) {
                    let g = g.to_f64().unwrap();
                    *sd += g;
                    *sdx += g * h.to_f64().unwrap();
                }
            }
        }

        let mut dx = vec![T::zero(); dy.len()];
        for i in 0..n {
            for ch in 0..c {
                let gamma = self.gamma.as_slice()[ch].to_f64().unwrap();
                let k = gamma * cache.inv_std[ch];
                let r = plane(i, ch);
                if cache.train {
                    let (mdy, mdyx) = (sum_dy[ch] / count, sum_dy_xhat[ch] / count);
                    for ((d, &g), &h) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xh[r]) {
                        let v = k * (g.to_f64().unwrap() - mdy - h.to_f64().unwrap() * mdyx);
                        *d = T::lit(v);
                    }
                } else {
                    let kt = T::lit(k);
                    for (d, &g) in dx[r.clone()].iter_mut().zip(&dy[r]) {
                        *d = g * kt;
                    }
                }
            }
        }
        Ok((
            Tensor::from_vec(grad_out.shape(), dx)?,
            Tensor::from_vec(&[c], sum_dy_xhat.into_iter().map(T::lit).collect())?,
            Tensor::from_vec(&[c], sum_dy.into_iter().map(T::lit).collect())?,
        ))
    }
}
