use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor, Transpose};

/// Fully connected layer, `y = x W^T + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [out, _] = *weight.shape() else {
            return Err(Error::shape("dense", format!("weight must be [out, in], got {:?}", weight.shape())));
        };
        if bias.shape() != [out] {
            return Err(Error::shape("dense", format!("bias {:?} does not match {out} outputs", bias.shape())));
        }
        Ok(Dense { weight, bias })
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Returns the output and the input kept for backward.
    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let [n, inp] = *x.shape() else {
            return Err(Error::shape("dense", format!("input must be [n, in], got {:?}", x.shape())));
        };
        if inp != self.in_features() {
            return Err(Error::shape(
                "dense",
                format!("input width {inp} does not match layer width {}", self.in_features()),
            ));
        }
        let out = self.out_features();
        let mut y = vec![T::zero(); n * out];
        for row in y.chunks_exact_mut(out) {
            row.copy_from_slice(self.bias.as_slice());
        }
        gemm(Transpose::No, Transpose::Yes, n, out, inp, T::one(), x.as_slice(), self.weight.as_slice(), T::one(), &mut y);
        Ok((Tensor::from_vec(&[n, out], y)?, x))
    }

    /// Returns `(grad_in, grad_weight, grad_bias)`.
    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let n = input.shape()[0];
        let (inp, out) = (self.in_features(), self.out_features());
        if grad_out.shape() != [n, out] {
            return Err(Error::StaleCache(format!(
                "dense grad_out {:?} does not match cached output [{n}, {out}]",
                grad_out.shape()
            )));
        }
        let dy = grad_out.as_slice();
        let mut dw = vec![T::zero(); out * inp];
        gemm(Transpose::Yes, Transpose::No, out, inp, n, T::one(), dy, input.as_slice(), T::zero(), &mut dw);
        let mut db = vec![T::zero(); out];
        for row in dy.chunks_exact(out) {
            for (a, &g) in db.iter_mut().zip(row) {
                *a = *a + g;
            }
        }
        let mut dx = vec![T::zero(); n * inp];
        gemm(Transpose::No, Transpose::No, n, inp, out, T::one(), dy, self.weight.as_slice(), T::zero(), &mut dx);
        Ok((
            Tensor::from_vec(&[n, inp], dx)?,
            Tensor::from_vec(&[out, inp], dw)?,
            Tensor::from_vec(&[out], db)?,
        ))
    }
}

/// Collapses every axis after the first: `[n, ...] -> [n, rest]`.
pub fn flatten<T: Scalar>(x: Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let shape = x.shape().to_vec();
    if shape.is_empty() {
        return Err(Error::shape("flatten", "cannot flatten a rank-0 tensor"));
    }
    let rest: usize = shape[1..].iter().product();
    Ok((x.reshape(&[shape[0], rest])?, shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tensor_from;

    #[test]
    fn identity_weights() {
        let d = Dense::new(tensor_from(&[2, 2], &[1.0f64, 0.0, 0.0, 1.0]).unwrap(), Tensor::zeros(&[2])).unwrap();
        let x = tensor_from(&[3, 2], &[1.0, 2.0, -3.0, 4.0, 0.5, 0.25]).unwrap();
        assert_eq!(d.forward(x.clone()).unwrap().0, x);
    }

    #[test]
    fn hand_product() {
        let d = Dense::new(
            tensor_from(&[2, 2], &[1.0f64, 1.0, 0.0, 1.0]).unwrap(),
            tensor_from(&[2], &[1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let (y, _) = d.forward(tensor_from(&[1, 2], &[1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[4.0, 2.0]);
    }

    #[test]
    fn zero_input_gives_bias_rows() {
        let d = Dense::new(Tensor::full(&[3, 4], 0.3f32), tensor_from(&[3], &[1.0, 2.0, 3.0]).unwrap()).unwrap();
        let (y, _) = d.forward(Tensor::zeros(&[2, 4])).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn width_mismatch() {
        let d = Dense::<f32>::zeros(4, 3);
        assert!(matches!(d.forward(Tensor::zeros(&[2, 5])), Err(Error::Shape { .. })));
    }

    #[test]
    fn flatten_keeps_batch_axis() {
        let (y, shape) = flatten(Tensor::<f32>::zeros(&[2, 3, 4, 5])).unwrap();
        assert_eq!(y.shape(), &[2, 60]);
        assert_eq!(shape, vec![2, 3, 4, 5]);
    }
}
