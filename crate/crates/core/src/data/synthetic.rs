//! Seeded synthetic classification task.
//!
//! Each class is a mixture of Gaussian clusters in a small latent space; the
//! latent points are pushed through a fixed random `tanh` warp into the
//! input space and rescaled to [0, 1], optionally with per-example jitter
//! ahead of the squashing. Cluster centers move closer together
//! as `difficulty` rises.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dims: usize,
    pub classes: usize,
    pub difficulty: f64,
    #[serde(default = "default_latent_dims")]
    pub latent_dims: usize,
    #[serde(default = "default_clusters")]
    pub clusters_per_class: usize,
    /// Std of per-example jitter added before the warp, independently per
    /// input dimension.
    #[serde(default)]
    pub input_noise: f64,
}

fn default_latent_dims() -> usize {
    8
}

fn default_clusters() -> usize {
    4
}

impl SyntheticSpec {
    pub fn new(n_train: usize, n_test: usize, dims: usize, classes: usize, difficulty: f64) -> Self {
        Self {
            n_train,
            n_test,
            dims,
            classes,
            difficulty,
            latent_dims: default_latent_dims(),
            clusters_per_class: default_clusters(),
            input_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("dims", self.dims),
            ("classes", self.classes),
            ("latent_dims", self.latent_dims),
            ("clusters_per_class", self.clusters_per_class),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("dataset.{field}"), "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::config("dataset.difficulty", format!("{} outside [0, 1]", self.difficulty)));
        }
        if !(self.input_noise >= 0.0 && self.input_noise.is_finite()) {
            return Err(Error::config("dataset.input_noise", "must be >= 0"));
        }
        Ok(())
    }

    /// Distance scale between cluster centers.
    fn separation(&self) -> f64 {
        6.0 * (1.0 - self.difficulty)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `(train, test)` drawn from the same distribution; both splits have
/// class counts that differ by at most one.
pub fn make_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let k = spec.latent_dims;
    let sep = spec.separation();
    let centers: Vec<Vec<f64>> = (0..spec.classes * spec.clusters_per_class)
        .map(|_| (0..k).map(|_| sep * gaussian(rng)).collect())
        .collect();
    // warp: x = (tanh(A z / s + b) + 1) / 2 with z's spread s normalized out
    let norm = (sep * sep + 1.0).sqrt();
    let gain = 1.5 / (k as f64).sqrt();
    let a: Vec<f64> = (0..spec.dims * k).map(|_| gain * gaussian(rng) / norm).collect();
    let b: Vec<f64> = (0..spec.dims).map(|_| 0.3 * gaussian(rng)).collect();

    let split = |n: usize, rng: &mut R| -> Result<Dataset> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
        labels.shuffle(rng);
        let mut x = Vec::with_capacity(n * spec.dims);
        let mut z = vec![0.0; k];
        for &label in &labels {
            let cluster = label * spec.clusters_per_class + rng.random_range(0..spec.clusters_per_class);
            for (zi, c) in z.iter_mut().zip(&centers[cluster]) {
                *zi = c + gaussian(rng);
            }
            for d in 0..spec.dims {
                let row = &a[d * k..(d + 1) * k];
                let mut pre: f64 = row.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + b[d];
                if spec.input_noise > 0.0 {
                    pre += spec.input_noise * gaussian(rng);
                }
                x.push(0.5 * (pre.tanh() + 1.0));
            }
        }
        Dataset::new(Tensor2::from_vec(n, spec.dims, x)?, labels, spec.classes, None)
    };
    let train = split(spec.n_train, rng)?;
    let test = split(spec.n_test, rng)?;
    Ok((train, test))
}
