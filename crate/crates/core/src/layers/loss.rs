use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxCrossEntropy<T> {
    /// Mean of `-ln p[label]` over the batch.
    pub loss: f64,
    pub probs: Tensor<T>,
    /// `(probs - onehot) / n`
    pub grad_logits: Tensor<T>,
}

/// Row-wise softmax (max-subtracted), accumulated in `f64`.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = *logits.shape() else {
        return Err(Error::shape("softmax", format!("logits must be [n, classes], got {:?}", logits.shape())));
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.as_slice().chunks_exact(k) {
        let max = row.iter().map(|v| v.to_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64().unwrap() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| T::lit(e / z)));
    }
    Tensor::from_vec(logits.shape(), out)
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<SoftmaxCrossEntropy<T>> {
    let [n, k] = *logits.shape() else {
        return Err(Error::shape("cross-entropy", format!("logits must be [n, classes], got {:?}", logits.shape())));
    };
    if labels.len() != n {
        return Err(Error::shape("cross-entropy", format!("{} labels for {n} rows", labels.len())));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Label { index, label, classes: k });
    }
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(n * k);
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.as_slice().chunks_exact(k).zip(labels) {
        let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = z.ln();
        // -ln softmax computed in log space so saturated rows stay finite
        loss += log_z - (row[label] - max);
        for (j, v) in row.iter().enumerate() {
            let p = ((v - max) - log_z).exp();
            probs.push(T::lit(p));
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.push(T::lit((p - onehot) / n as f64));
        }
    }
    Ok(SoftmaxCrossEntropy {
        loss: loss / n as f64,
        probs: Tensor::from_vec(&[n, k], probs)?,
        grad_logits: Tensor::from_vec(&[n, k], grad)?,
    })
}

/// `lambda * ||w||^2`.
pub fn l2_value<T: Scalar>(weight: &Tensor<T>, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * weight.as_slice().iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>()
}

/// One weight tensor, its coefficient, and the gradient that receives `2 lambda w`.
pub struct L2Term<'a, T> {
    pub weight: &'a Tensor<T>,
    pub lambda: f64,
    pub grad: &'a mut Tensor<T>,
}

/// Sum of `lambda_i * ||W_i||^2`; adds `2 lambda_i W_i` to each gradient.
pub fn l2_penalty<T: Scalar>(terms: &mut [L2Term<'_, T>]) -> Result<f64> {
    let mut total = 0.0;
    for term in terms.iter_mut() {
        if term.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!("l2 lambda must be >= 0, got {}", term.lambda)));
        }
        if term.weight.shape() != term.grad.shape() {
            return Err(Error::shape(
                "l2_penalty",
                format!("weight {:?} vs gradient {:?}", term.weight.shape(), term.grad.shape()),
            ));
        }
        if term.lambda == 0.0 {
            continue;
        }
        total += l2_value(term.weight, term.lambda);
        let k = T::lit(2.0 * term.lambda);
        for (g, &w) in term.grad.as_mut_slice().iter_mut().zip(term.weight.as_slice()) {
            *g = *g + k * w;
        }
    }
    Ok(total)
}
