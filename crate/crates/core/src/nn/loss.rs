use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Row-wise log-softmax, stabilized by subtracting the row max.
pub fn log_softmax(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

pub fn softmax(logits: &Tensor2) -> Tensor2 {
    let mut out = log_softmax(logits);
    out.map_inplace(f64::exp);
    out
}

/// Mean cross-entropy over the batch and its exact gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor2, labels: &[usize]) -> Result<(f64, Tensor2)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("cross_entropy labels", logits.rows(), labels.len()));
    }
    if logits.rows() == 0 {
        return Err(Error::InvalidArgument("cross_entropy on an empty batch".into()));
    }
    let classes = logits.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let n = logits.rows() as f64;
    let logp = log_softmax(logits);
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(logits.rows(), classes);
    for (r, &label) in labels.iter().enumerate() {
        let lp = logp.row(r);
        loss -= lp[label];
        let g = grad.row_mut(r);
        for (gj, lpj) in g.iter_mut().zip(lp) {
            *gj = lpj.exp() / n;
        }
        g[label] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

/// Mean cross-entropy without the gradient, for evaluation.
pub fn cross_entropy_loss(logits: &Tensor2, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("cross_entropy labels", logits.rows(), labels.len()));
    }
    let classes = logits.cols();
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / labels.len().max(1) as f64)
}
