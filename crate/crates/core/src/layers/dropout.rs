use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time,
/// so inference is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    rate: f64,
}

/// Per-element multipliers (`0` or `1 / (1 - rate)`); `None` for identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutCache<T> {
    pub(crate) mask: Option<Vec<T>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        mut x: Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> (Tensor<T>, DropoutCache<T>) {
        if mode == Mode::Infer || self.rate == 0.0 {
            return (x, DropoutCache { mask: None });
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        for (v, &m) in x.as_mut_slice().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        (x, DropoutCache { mask: Some(mask) })
    }

    pub fn backward<T: Scalar>(&self, cache: &DropoutCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(mask) = &cache.mask else {
            return Ok(grad_out.clone());
        };
        if mask.len() != grad_out.len() {
            return Err(Error::StaleCache(format!(
                "dropout grad_out has {} elements, mask has {}",
                grad_out.len(),
                mask.len()
            )));
        }
        let mut dx = grad_out.clone();
        for (d, &m) in dx.as_mut_slice().iter_mut().zip(mask) {
            *d = *d * m;
        }
        Ok(dx)
    }
}
