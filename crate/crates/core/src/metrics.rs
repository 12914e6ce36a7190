//! Plasticity diagnostics, accuracy and correlation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Architecture, Mode, ParamSet, Tensor2};

/// Default δ for [`srank`].
pub const SRANK_DELTA: f64 = 0.01;

/// One measurement point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: usize,
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub weight_magnitude: f64,
    pub weight_distance: f64,
    pub zero_grad_ratio: f64,
    pub zero_act_ratio: f64,
    pub srank: usize,
}

/// Σ over entries of the mean squared value within the entry.
pub fn weight_magnitude(params: &ParamSet) -> f64 {
    params
        .tensors()
        .filter(|t| !t.is_empty())
        .map(|t| t.sum_squares() / t.len() as f64)
        .sum()
}

/// Σ over entries of the mean squared difference to `init`.
pub fn weight_distance(params: &ParamSet, init: &ParamSet) -> Result<f64> {
    params.check_compatible(init, "weight_distance")?;
    Ok(params
        .tensors()
        .zip(init.tensors())
        .filter(|(t, _)| !t.is_empty())
        .map(|(t, i)| {
            let sq: f64 = t.values().iter().zip(i.values()).map(|(a, b)| (a - b) * (a - b)).sum();
            sq / t.len() as f64
        })
        .sum())
}

/// Fraction of entries that are exactly 0.0.
pub fn zero_fraction(t: &Tensor2) -> f64 {
    if t.is_empty() {
        return 0.0;
    }
    t.values().iter().filter(|&&v| v == 0.0).count() as f64 / t.len() as f64
}

/// Features Φ and the loss gradient reaching them, from one eval-mode pass.
///
/// `feature_grad` is taken through the backbone's last activation: entries
/// where the producing unit is inactive (Φ == 0) carry no gradient.
#[derive(Debug, Clone)]
pub struct FeatureProbe {
    pub logits: Tensor2,
    pub features: Tensor2,
    pub feature_grad: Tensor2,
}

pub fn feature_probe(arch: &Architecture, params: &ParamSet, stats: &ParamSet, batch: &Tensor2, labels: &[usize]) -> Result<FeatureProbe> {
    if batch.rows() == 0 {
        return Err(Error::InvalidArgument("feature probe on an empty batch".into()));
    }
    let (logits, trace) = arch.forward(params, stats, batch, Mode::Eval)?;
    let (_, dlogits) = cross_entropy(&logits, labels)?;
    let mut feature_grad = arch.feature_gradient(params, &trace, &dlogits)?;
    if arch.head_start() > 1 {
        for (g, &phi) in feature_grad.values_mut().iter_mut().zip(trace.features().values()) {
            if phi == 0.0 {
                *g = 0.0;
            }
        }
    }
    Ok(FeatureProbe {
        features: trace.features().clone(),
        logits,
        feature_grad,
    })
}

/// Share of exactly-zero entries of ∂loss/∂Φ on `batch`.
pub fn zero_grad_ratio(arch: &Architecture, params: &ParamSet, stats: &ParamSet, batch: &Tensor2, labels: &[usize]) -> Result<f64> {
    Ok(zero_fraction(&feature_probe(arch, params, stats, batch, labels)?.feature_grad))
}

/// Share of exactly-zero entries of Φ on `batch`.
pub fn zero_act_ratio(arch: &Architecture, params: &ParamSet, stats: &ParamSet, batch: &Tensor2) -> Result<f64> {
    if batch.rows() == 0 {
        return Err(Error::InvalidArgument("zero_act_ratio on an empty batch".into()));
    }
    let (_, trace) = arch.forward(params, stats, batch, Mode::Eval)?;
    Ok(zero_fraction(trace.features()))
}

/// Singular values in descending order.
pub fn singular_values(m: &Tensor2) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mat = DMatrix::from_row_slice(m.rows(), m.cols(), m.values());
    let mut s: Vec<f64> = mat.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Smallest k whose top-k share of the singular-value mass reaches 1 − δ.
pub fn srank(features: &Tensor2, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("srank delta {delta} outside (0, 1)")));
    }
    if features.is_empty() {
        return Err(Error::InvalidArgument("srank of an empty matrix".into()));
    }
    if !features.is_finite() {
        return Err(Error::Numeric("srank of a non-finite matrix".into()));
    }
    srank_from_singular_values(&singular_values(features), delta)
}

/// [`srank`] for precomputed singular values (any order).
pub fn srank_from_singular_values(sv: &[f64], delta: f64) -> Result<usize> {
    let mut s = sv.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = s.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numeric("srank undefined: no singular mass".into()));
    }
    let target = (1.0 - delta) * total;
    let mut acc = 0.0;
    for (k, v) in s.iter().enumerate() {
        acc += v;
        if acc >= target {
            return Ok(k + 1);
        }
    }
    Ok(s.len())
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(logits: &Tensor2, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("accuracy labels", logits.rows(), labels.len()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &label)| argmax(logits.row(r)) == label)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("pearson undefined for zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpModel, Norm};
    use crate::rng::{stream_rng, Stream};

    fn ps(entries: &[&[f64]]) -> ParamSet {
        let mut p = ParamSet::new();
        for (i, e) in entries.iter().enumerate() {
            p.push(format!("e{i}"), Tensor2::from_vec(1, e.len(), e.to_vec()).unwrap()).unwrap();
        }
        p
    }

    #[test]
    fn magnitude_and_distance() {
        assert_eq!(weight_magnitude(&ps(&[&[1.0, -1.0]])), 1.0);
        assert_eq!(weight_magnitude(&ps(&[&[1.0, -1.0], &[2.0]])), 5.0);
        assert_eq!(weight_magnitude(&ps(&[&[0.0, 0.0]])), 0.0);
        assert_eq!(weight_distance(&ps(&[&[4.0]]), &ps(&[&[1.0]])).unwrap(), 9.0);
        let a = ps(&[&[0.5, 2.0]]);
        assert_eq!(weight_distance(&a, &a).unwrap(), 0.0);
        assert!(weight_distance(&a, &ps(&[&[1.0]])).is_err());
    }

    #[test]
    fn zero_counting() {
        let g = Tensor2::from_rows(&[vec![0.0, 0.0, 1.2, -3.0]]).unwrap();
        assert_eq!(zero_fraction(&g), 0.5);
        let phi = Tensor2::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(zero_fraction(&phi), 0.75);
        assert_eq!(zero_fraction(&Tensor2::filled(2, 2, 0.1)), 0.0);
    }

    #[test]
    fn dead_backbone_is_fully_zero() {
        let mut m = MlpModel::init(&[3, 5, 4, 2], Activation::Relu, Norm::None, 3, &mut stream_rng(0, Stream::Init, 0)).unwrap();
        m.params_mut().get_mut("l2.bias").unwrap().values_mut().fill(-100.0);
        let x = Tensor2::filled(6, 3, 0.5);
        let labels = [0, 1, 0, 1, 0, 1];
        let (arch, params, stats) = (m.arch(), m.params(), m.running_stats());
        assert_eq!(zero_act_ratio(arch, params, stats, &x).unwrap(), 1.0);
        assert_eq!(zero_grad_ratio(arch, params, stats, &x, &labels).unwrap(), 1.0);
    }

    #[test]
    fn srank_examples() {
        let mut eye = Tensor2::zeros(4, 4);
        (0..4).for_each(|i| eye.set(i, i, 1.0));
        assert_eq!(srank(&eye, 0.01).unwrap(), 4);
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0, 4.0, -1.0];
        let outer = Tensor2::from_vec(3, 4, u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect()).unwrap();
        assert_eq!(srank(&outer, 0.01).unwrap(), 1);
        assert!(srank(&Tensor2::zeros(3, 3), 0.01).is_err());
        assert!(srank(&eye, 0.0).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let l = Tensor2::from_rows(&[vec![2.0, 1.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(accuracy(&l, &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&l, &[1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&Tensor2::from_rows(&[vec![1.0, 1.0]]).unwrap(), &[0]).unwrap(), 1.0);
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&xs, &[1.0; 4]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }
}
