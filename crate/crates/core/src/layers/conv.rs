//! Stride-1 "same" convolution lowered to GEMM via im2col.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Shape4, Tensor, Transpose};

/// Weights `[out, in, k, k]`, bias `[out]` and the L2 coefficient applied to
/// the weights (never the bias).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub l2_lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, l2_lambda: f64) -> Result<Self> {
        let conv = Conv2d {
            weight,
            bias,
            l2_lambda,
        };
        conv.validate()?;
        Ok(conv)
    }

    pub fn zeros(geom: ConvGeometry, l2_lambda: f64) -> Result<Self> {
        let k = geom.kernel;
        Conv2d::new(
            Tensor::zeros(&[geom.out_channels, geom.in_channels, k, k]),
            Tensor::zeros(&[geom.out_channels]),
            l2_lambda,
        )
    }

    fn validate(&self) -> Result<()> {
        let [out, _, kh, kw] = *self.weight.shape() else {
            return Err(Error::shape("conv2d", format!("weight must be [out, in, k, k], got {:?}", self.weight.shape())));
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if self.bias.shape() != [out] {
            return Err(Error::shape("conv2d", format!("bias {:?} does not match {out} filters", self.bias.shape())));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("l2 lambda must be >= 0, got {}", self.l2_lambda)));
        }
        Ok(())
    }

    pub fn geometry(&self) -> ConvGeometry {
        let s = self.weight.shape();
        ConvGeometry {
            out_channels: s[0],
            in_channels: s[1],
            kernel: s[2],
        }
    }

    /// Returns the output together with the input, which backward needs.
    pub fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let dims = x.dims4()?;
        let g = self.geometry();
        if dims.c != g.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, layer expects {}", dims.c, g.in_channels),
            ));
        }
        let hw = dims.hw();
        let patch = g.in_channels * g.kernel * g.kernel;
        let mut cols = vec![T::zero(); patch * hw];
        let mut y = vec![T::zero(); dims.n * g.out_channels * hw];
        let xs = x.as_slice();
        let w = self.weight.as_slice();
        let b = self.bias.as_slice();
        for (xe, ye) in xs.chunks_exact(dims.chw()).zip(y.chunks_exact_mut(g.out_channels * hw)) {
            im2col(xe, dims.c, dims.h, dims.w, g.kernel, &mut cols);
            gemm(Transpose::No, Transpose::No, g.out_channels, hw, patch, T::one(), w, &cols, T::zero(), ye);
            for (plane, &bias) in ye.chunks_exact_mut(hw).zip(b) {
                plane.iter_mut().for_each(|v| *v = *v + bias);
            }
        }
        let y = Tensor::from_vec(&[dims.n, g.out_channels, dims.h, dims.w], y)?;
        Ok((y, x))
    }

    /// Gradients with respect to the input, the weights and the bias.
    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let dims = input.dims4()?;
        let g = self.geometry();
        let expected = [dims.n, g.out_channels, dims.h, dims.w];
        if grad_out.shape() != expected {
            return Err(Error::StaleCache(format!(
                "conv2d grad_out {:?} does not match cached output shape {:?}",
                grad_out.shape(),
                expected
            )));
        }
        let hw = dims.hw();
        let patch = g.in_channels * g.kernel * g.kernel;
        let mut cols = vec![T::zero(); patch * hw];
        let mut dcols = vec![T::zero(); patch * hw];
        let mut dw = vec![T::zero(); g.out_channels * patch];
        let mut db = vec![T::zero(); g.out_channels];
        let mut dx = vec![T::zero(); input.len()];
        let w = self.weight.as_slice();

        let per_out = g.out_channels * hw;
        for ((xe, dye), dxe) in input
            .as_slice()
            .chunks_exact(dims.chw())
            .zip(grad_out.as_slice().chunks_exact(per_out))
            .zip(dx.chunks_exact_mut(dims.chw()))
        {
            im2col(xe, dims.c, dims.h, dims.w, g.kernel, &mut cols);
            // dW += dY * cols^T
            gemm(Transpose::No, Transpose::Yes, g.out_channels, patch, hw, T::one(), dye, &cols, T::one(), &mut dw);
            for (acc, plane) in db.iter_mut().zip(dye.chunks_exact(hw)) {
                *acc = plane.iter().fold(*acc, |s, &v| s + v);
            }
            // dcols = W^T * dY
            gemm(Transpose::Yes, Transpose::No, patch, hw, g.out_channels, T::one(), w, dye, T::zero(), &mut dcols);
            col2im(&dcols, dims.c, dims.h, dims.w, g.kernel, dxe);
        }
        Ok((
            Tensor::from_vec(input.shape(), dx)?,
            Tensor::from_vec(self.weight.shape(), dw)?,
            Tensor::from_vec(self.bias.shape(), db)?,
        ))
    }

    pub fn output_dims(&self, input: Shape4) -> Shape4 {
        Shape4 {
            c: self.geometry().out_channels,
            ..input
        }
    }
}

/// Range of output columns whose input column `ox + offset` lies in `0..w`.
fn valid_range(w: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (w as isize - offset).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

/// Unrolls zero-padded `k x k` patches of one `c x h x w` image into a
/// `(c*k*k) x (h*w)` matrix; row `(ci*k + ky)*k + kx` holds the input sample
/// each output pixel sees through that kernel tap.
pub(crate) fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                let (lo, hi) = valid_range(w, dx);
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad;
                    let drow = &mut dst[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let s0 = (lo as isize + dx) as usize;
                    drow[lo..hi].copy_from_slice(&srow[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `dx`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dxo = kx as isize - pad;
                let (lo, hi) = valid_range(w, dxo);
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize || lo == hi {
                        continue;
                    }
                    let s0 = (lo as isize + dxo) as usize;
                    let drow = &mut plane[iy as usize * w + s0..iy as usize * w + s0 + (hi - lo)];
                    for (d, &s) in drow.iter_mut().zip(&src[oy * w + lo..oy * w + hi]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}
