use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor};

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxPoolCache {
    pub(crate) input: Shape4,
    /// Flat input index of each output element's winner.
    pub(crate) winners: Vec<usize>,
}

impl MaxPoolCache {
    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

pub fn pooled_dims(input: Shape4) -> Result<Shape4> {
    if input.h < 2 || input.w < 2 {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial extent {}x{} is too small for a 2x2 window", input.h, input.w),
        ));
    }
    Ok(Shape4 {
        h: input.h / 2,
        w: input.w / 2,
        ..input
    })
}

pub fn maxpool2d_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, MaxPoolCache)> {
    let dims = x.dims4()?;
    let out = pooled_dims(dims)?;
    let xs = x.as_slice();
    let mut y = Vec::with_capacity(out.len());
    let mut winners = Vec::with_capacity(out.len());
    for plane in 0..dims.n * dims.c {
        let base = plane * dims.hw();
        for oy in 0..out.h {
            for ox in 0..out.w {
                let top = base + 2 * oy * dims.w + 2 * ox;
                // row-major window order; strict > keeps the earliest maximum
                let mut best = top;
                for cand in [top + 1, top + dims.w, top + dims.w + 1] {
                    if xs[cand] > xs[best] {
                        best = cand;
                    }
                }
                y.push(xs[best]);
                winners.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&out.to_vec(), y)?,
        MaxPoolCache { input: dims, winners },
    ))
}

pub fn maxpool2d_backward<T: Scalar>(cache: &MaxPoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != cache.winners.len() {
        return Err(Error::StaleCache(format!(
            "maxpool grad_out has {} elements, cache recorded {}",
            grad_out.len(),
            cache.winners.len()
        )));
    }
    let mut dx = vec![T::zero(); cache.input.len()];
    for (&w, &g) in cache.winners.iter().zip(grad_out.as_slice()) {
        dx[w] = dx[w] + g;
    }
    Tensor::from_vec(&cache.input.to_vec(), dx)
}
