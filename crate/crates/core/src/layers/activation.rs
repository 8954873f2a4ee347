use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mask of strictly positive inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluCache {
    pub(crate) active: Vec<bool>,
}

impl ReluCache {
    pub fn active(&self) -> &[bool] {
        &self.active
    }
}

pub fn relu_forward<T: Scalar>(mut x: Tensor<T>) -> (Tensor<T>, ReluCache) {
    let mut active = Vec::with_capacity(x.len());
    for v in x.as_mut_slice() {
        let on = *v > T::zero();
        if !on {
            *v = T::zero();
        }
        active.push(on);
    }
    (x, ReluCache { active })
}

pub fn relu_backward<T: Scalar>(cache: &ReluCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != cache.active.len() {
        return Err(Error::StaleCache(format!(
            "relu grad_out has {} elements, cache recorded {}",
            grad_out.len(),
            cache.active.len()
        )));
    }
    let mut dx = grad_out.clone();
    for (d, &on) in dx.as_mut_slice().iter_mut().zip(&cache.active) {
        if !on {
            *d = T::zero();
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tensor_from;

    #[test]
    fn clamps_negatives() {
        let (y, _) = relu_forward(tensor_from(&[3], &[-1.0f64, 0.0, 2.0]).unwrap());
        assert_eq!(y.as_slice(), &[0.0, 0.0, 2.0]);
        let (y, _) = relu_forward(Tensor::full(&[5], -0.1f32));
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
        let x = tensor_from(&[4], &[0.0f32, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(relu_forward(x.clone()).0, x);
    }

    #[test]
    fn positive_region_passes_gradient() {
        let (_, cache) = relu_forward(tensor_from(&[3], &[0.5f64, 1.0, 7.0]).unwrap());
        let g = tensor_from(&[3], &[0.3, -0.2, 0.9]).unwrap();
        assert_eq!(relu_backward(&cache, &g).unwrap(), g);
    }
}
