use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// What a parameter entry does inside its layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl Role {
    pub fn suffix(self) -> &'static str {
        match self {
            Role::Weight => "weight",
            Role::Bias => "bias",
            Role::NormScale => "norm_scale",
            Role::NormShift => "norm_shift",
            Role::RunningMean => "running_mean",
            Role::RunningVar => "running_var",
        }
    }

    fn from_suffix(s: &str) -> Option<Self> {
        Some(match s {
            "weight" => Role::Weight,
            "bias" => Role::Bias,
            "norm_scale" => Role::NormScale,
            "norm_shift" => Role::NormShift,
            "running_mean" => Role::RunningMean,
            "running_var" => Role::RunningVar,
            _ => return None,
        })
    }
}

/// Entry name convention: `l{layer}.{role}`, layers numbered from 1.
pub fn param_name(layer: usize, role: Role) -> String {
    format!("l{layer}.{}", role.suffix())
}

/// Splits `l3.weight` into `(3, Role::Weight)`.
pub fn parse_param_name(name: &str) -> Option<(usize, Role)> {
    let (layer, role) = name.strip_prefix('l')?.split_once('.')?;
    Some((layer.parse().ok()?, Role::from_suffix(role)?))
}

/// Ordered, named collection of parameter tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<(String, Tensor2)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor2) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor2)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor2> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor2> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn at(&self, index: usize) -> &Tensor2 {
        &self.entries[index].1
    }

    pub fn at_mut(&mut self, index: usize) -> &mut Tensor2 {
        &mut self.entries[index].1
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same names, same order, same shapes.
    pub fn check_compatible(&self, other: &ParamSet, context: &'static str) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(context, format!("{} entries", self.entries.len()), other.entries.len()));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || !ta.same_shape(tb) {
                return Err(Error::shape(
                    context,
                    format!("{na} {:?}", ta.shape()),
                    format!("{nb} {:?}", tb.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor2::zeros(t.rows(), t.cols())))
                .collect(),
        }
    }

    /// Entries whose role is `role`, in order.
    pub fn filter_role(&self, role: Role) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(n, _)| parse_param_name(n).is_some_and(|(_, r)| r == role))
                .cloned()
                .collect(),
        }
    }

    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        self.check_compatible(other, "ParamSet::copy_from")?;
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }

    /// `self ← a·self + b·other`, entrywise.
    pub fn scale_add(&mut self, a: f64, b: f64, other: &ParamSet) -> Result<()> {
        self.check_compatible(other, "ParamSet::scale_add")?;
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            for (d, s) in dst.values_mut().iter_mut().zip(src.values()) {
                *d = a * *d + b * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in &mut self.entries {
            for v in t.values_mut() {
                *v *= factor;
            }
        }
    }

    pub fn fill(&mut self, value: f64) {
        for (_, t) in &mut self.entries {
            t.values_mut().fill(value);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries.iter().map(|(_, t)| t.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.values().iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.check_compatible(other, "ParamSet::max_abs_diff")?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .flat_map(|((_, a), (_, b))| a.values().iter().zip(b.values()))
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())))
    }

    pub fn l2_distance(&self, other: &ParamSet) -> Result<f64> {
        self.check_compatible(other, "ParamSet::l2_distance")?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .flat_map(|((_, a), (_, b))| a.values().iter().zip(b.values()))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt())
    }

    /// All entries concatenated in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.values().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::shape("ParamSet::assign_flat", self.numel(), flat.len()));
        }
        let mut offset = 0;
        for (_, t) in &mut self.entries {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Finds the first entry that contains a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n.as_str())
    }

    /// Bitwise equality of every value (distinguishes `0.0` and `-0.0`).
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.check_compatible(other, "bitwise_eq").is_ok()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((_, a), (_, b))| a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}
