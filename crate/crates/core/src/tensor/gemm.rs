use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// `c = alpha * op(a) * op(b) + beta * c` over row-major buffers, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`. With `Transpose::Yes` the
/// operand is stored as its transpose (`k x m` or `n x k`).
///
/// Single-threaded; the blocking and summation order depend only on the
/// operand sizes, so repeated calls are bit-identical.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    ta: Transpose,
    tb: Transpose,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: lhs buffer too small");
    assert!(b.len() >= k * n, "gemm: rhs buffer too small");
    assert!(c.len() >= m * n, "gemm: output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v = beta * *v);
        return;
    }
    let (rsa, csa) = match ta {
        Transpose::No => (k as isize, 1),
        Transpose::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Transpose::No => (n as isize, 1),
        Transpose::Yes => (1, k as isize),
    };
    // SAFETY: the asserts above bound every strided access to the slices.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of a rank-2 `m x k` tensor with a rank-2 `k x n` tensor.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = match *a.shape() {
        [m, k] => (m, k),
        _ => return Err(Error::shape("matmul", format!("lhs must be rank 2, got {:?}", a.shape()))),
    };
    let (k2, n) = match *b.shape() {
        [k2, n] => (k2, n),
        _ => return Err(Error::shape("matmul", format!("rhs must be rank 2, got {:?}", b.shape()))),
    };
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        Transpose::No,
        Transpose::No,
        m,
        n,
        k,
        T::one(),
        a.as_slice(),
        b.as_slice(),
        T::zero(),
        &mut out,
    );
    Tensor::from_vec(&[m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tensor_from;

    #[test]
    fn identity_and_known_product() {
        let id = tensor_from(&[2, 2], &[1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let a = tensor_from(&[2, 2], &[1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&id, &a).unwrap(), a);
        let b = tensor_from(&[2, 2], &[5.0f64, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().as_slice(), &[19.0, 22.0, 43.0, 50.0]);
        let z = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matmul(&z, &b).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatch_names_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_operands() {
        // a is 2x3, b is 3x2; store both transposed
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0f64, 3.0, 5.0, 2.0, 4.0, 6.0];
        let mut c0 = [0.0; 4];
        let mut c1 = [0.0; 4];
        gemm(Transpose::No, Transpose::No, 2, 2, 3, 1.0, &a, &b, 0.0, &mut c0);
        gemm(Transpose::Yes, Transpose::Yes, 2, 2, 3, 1.0, &at, &bt, 0.0, &mut c1);
        assert_eq!(c0, [22.0, 28.0, 49.0, 64.0]);
        assert_eq!(c0, c1);
        // accumulate
        gemm(Transpose::No, Transpose::Yes, 2, 2, 3, 1.0, &a, &bt, 1.0, &mut c1);
        assert_eq!(c1, [44.0, 56.0, 98.0, 128.0]);
    }
}
