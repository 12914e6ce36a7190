//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    build_continual_protocol, build_fresh_protocol, build_warm_start_protocol, BufferPolicy, ProtocolKind, ProtocolSpec,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::interventions::{InterventionKind, InterventionSpec};
use crate::nn::{Activation, AdamWConfig, Architecture, Norm};

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX files named as distributed, inside `dir`.
    Mnist { dir: PathBuf },
    Synthetic {
        n_train: usize,
        n_test: usize,
        dims: usize,
        classes: usize,
        difficulty: f64,
        #[serde(default = "d_latent")]
        latent_dims: usize,
        #[serde(default = "d_clusters")]
        clusters_per_class: usize,
        #[serde(default)]
        input_noise: f64,
        #[serde(default)]
        data_seed: u64,
    },
}

fn d_latent() -> usize {
    8
}
fn d_clusters() -> usize {
    4
}

impl DatasetConfig {
    pub fn synthetic_spec(&self) -> Option<(SyntheticSpec, u64)> {
        match *self {
            DatasetConfig::Synthetic {
                n_train,
                n_test,
                dims,
                classes,
                difficulty,
                latent_dims,
                clusters_per_class,
                input_noise,
                data_seed,
            } => Some((
                SyntheticSpec {
                    n_train,
                    n_test,
                    dims,
                    classes,
                    difficulty,
                    latent_dims,
                    clusters_per_class,
                    input_noise,
                },
                data_seed,
            )),
            DatasetConfig::Mnist { .. } => None,
        }
    }

    pub fn mnist_paths(dir: &Path) -> [PathBuf; 4] {
        MNIST_FILES.map(|f| dir.join(f))
    }

    /// `(input dims, classes)`.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            DatasetConfig::Mnist { .. } => (784, 10),
            DatasetConfig::Synthetic { dims, classes, .. } => (*dims, *classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Hidden layer widths; input and output sizes come from the dataset.
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub norm: Norm,
    /// First head layer (1-based); defaults to the output layer.
    pub head_start: Option<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![100, 100],
            activation: Activation::Relu,
            norm: Norm::None,
            head_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub warmup_ratio: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 256,
            clip_norm: 0.5,
            warmup_ratio: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    pub subset_ratio: f64,
    pub noise_ratio: f64,
    pub base_epochs: usize,
    pub augment: bool,
    pub num_chunks: usize,
    /// Continual only; falls back to `base_epochs`.
    pub epochs_per_phase: Option<usize>,
    /// Continual only; `null` means full access.
    pub buffer: Option<usize>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            kind: ProtocolKind::Fresh,
            subset_ratio: 1.0,
            noise_ratio: 0.0,
            base_epochs: 100,
            augment: false,
            num_chunks: 10,
            epochs_per_phase: None,
            buffer: None,
        }
    }
}

impl ProtocolConfig {
    pub fn build(&self, intervention: InterventionKind) -> Result<ProtocolSpec> {
        let spec = match self.kind {
            ProtocolKind::Fresh => build_fresh_protocol(self.base_epochs, self.augment),
            ProtocolKind::WarmStart => build_warm_start_protocol(self.subset_ratio, self.noise_ratio, self.base_epochs, self.augment),
            ProtocolKind::Continual => build_continual_protocol(
                self.num_chunks,
                self.epochs_per_phase.unwrap_or(self.base_epochs),
                self.buffer.map_or(BufferPolicy::None, BufferPolicy::Limited),
                self.augment,
            ),
        }
        .map_err(|e| Error::config("protocol", e.to_string()))?;
        Ok(match intervention {
            InterventionKind::ShrinkPerturb | InterventionKind::HeadReset => spec.with_boundary_intervention(intervention),
            _ => spec,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub intervention: InterventionSpec,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    /// Leading test examples used for the feature metrics.
    #[serde(default = "d_probe")]
    pub probe_size: usize,
    #[serde(default = "d_out")]
    pub out_dir: PathBuf,
}

fn d_seeds() -> Vec<u64> {
    vec![0]
}
fn d_eval_every() -> usize {
    5
}
fn d_probe() -> usize {
    512
}
fn d_out() -> PathBuf {
    PathBuf::from("runs")
}

fn check(ok: bool, field: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validated()
    }

    /// Range checks, and intervention defaults filled in.
    pub fn validated(mut self) -> Result<Self> {
        let o = &self.optim;
        check(o.lr.is_finite() && o.lr >= 0.0, "optim.lr", format!("{} must be >= 0", o.lr))?;
        check((0.0..1.0).contains(&o.beta1), "optim.beta1", "must be in [0, 1)")?;
        check((0.0..1.0).contains(&o.beta2), "optim.beta2", "must be in [0, 1)")?;
        check(o.eps > 0.0 && o.eps.is_finite(), "optim.eps", "must be > 0")?;
        check(o.weight_decay >= 0.0 && o.weight_decay.is_finite(), "optim.weight_decay", "must be >= 0")?;
        check(o.batch_size >= 1, "optim.batch_size", "must be >= 1")?;
        check(o.clip_norm > 0.0, "optim.clip_norm", "must be > 0")?;
        check((0.0..=1.0).contains(&o.warmup_ratio), "optim.warmup_ratio", "must be in [0, 1]")?;
        check(!self.seeds.is_empty(), "seeds", "need at least one seed")?;
        check(self.eval_every >= 1, "eval_every", "must be >= 1")?;
        check(self.probe_size >= 1, "probe_size", "must be >= 1")?;
        check(self.protocol.base_epochs >= 1, "protocol.base_epochs", "must be >= 1")?;
        if let Some((spec, _)) = self.dataset.synthetic_spec() {
            spec.validate()?;
        }
        self.intervention = self.intervention.validated()?;
        if self.intervention.kind == InterventionKind::HareTortoise {
            let r = self.intervention.param("reset_interval");
            check(
                r.is_infinite() || r.fract() == 0.0,
                "intervention.params.reset_interval",
                "must be a whole number of epochs",
            )?;
        }
        if self.intervention.kind == InterventionKind::Redo {
            check(
                self.intervention.param("redo_every").fract() == 0.0,
                "intervention.params.redo_every",
                "must be a whole number of epochs",
            )?;
        }
        if self.protocol.augment && matches!(self.dataset, DatasetConfig::Synthetic { .. }) {
            return Err(Error::config("protocol.augment", "augmentation needs image data"));
        }
        self.architecture()?;
        self.protocol_spec()?;
        Ok(self)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let (input, classes) = self.dataset.shape();
        let mut widths = vec![input];
        widths.extend(&self.arch.hidden_widths);
        widths.push(classes);
        let layers = widths.len() - 1;
        Architecture::new(&widths, self.arch.activation, self.arch.norm, self.arch.head_start.unwrap_or(layers))
            .map_err(|e| Error::config("arch", e.to_string()))
    }

    pub fn protocol_spec(&self) -> Result<ProtocolSpec> {
        self.protocol.build(self.intervention.kind)
    }

    /// AdamW settings; the L2 baseline supplies its own decay.
    pub fn adamw(&self) -> AdamWConfig {
        let weight_decay = if self.intervention.kind == InterventionKind::L2 {
            self.intervention.param("weight_decay")
        } else {
            self.optim.weight_decay
        };
        AdamWConfig {
            lr: self.optim.lr,
            beta1: self.optim.beta1,
            beta2: self.optim.beta2,
            eps: self.optim.eps,
            weight_decay,
        }
    }

    /// Hash of everything but the seeds and output directory.
    pub fn run_id(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
    RunConfig::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"dataset": {"kind": "synthetic", "n_train": 100, "n_test": 50, "dims": 8, "classes": 3, "difficulty": 0.5}}"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_json_str(MIN).unwrap();
        assert_eq!(c.optim, OptimConfig::default());
        assert_eq!(c.optim.batch_size, 256);
        assert_eq!(c.protocol.base_epochs, 100);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.architecture().unwrap().widths(), &[8, 100, 100, 3]);
    }

    #[test]
    fn hare_tortoise_defaults() {
        let text = MIN.replace("}}", r#"}, "intervention": {"kind": "hare_tortoise"}}"#);
        let c = RunConfig::from_json_str(&text).unwrap();
        assert_eq!(c.intervention.param("momentum"), 0.999);
        assert_eq!(c.intervention.param("reset_interval"), 10.0);
    }

    #[test]
    fn field_level_errors() {
        let neg = MIN.replace("}}", r#"}, "optim": {"lr": -0.1}}"#);
        match RunConfig::from_json_str(&neg).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "optim.lr"),
            e => panic!("{e}"),
        }
        let unknown = MIN.replace("}}", r#"}, "optim": {"learning_rate": 0.1}}"#);
        assert!(RunConfig::from_json_str(&unknown).unwrap_err().to_string().contains("learning_rate"));
        let missing = RunConfig::from_json_str(r#"{"seeds": [1]}"#).unwrap_err().to_string();
        assert!(missing.contains("dataset"), "{missing}");
    }

    #[test]
    fn run_id_ignores_seeds_and_out_dir() {
        let a = RunConfig::from_json_str(MIN).unwrap();
        let mut b = a.clone();
        b.seeds = vec![4, 5];
        b.out_dir = "elsewhere".into();
        assert_eq!(a.run_id(), b.run_id());
        b.optim.lr = 0.01;
        assert_ne!(a.run_id(), b.run_id());
    }
}
