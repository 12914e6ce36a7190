//! Plasticity interventions as training-loop hooks.
//!
//! Three shapes of hook exist:
//! - per-step parameter transforms (the Hare & Tortoise EMA and periodic
//!   hare ← tortoise reset, plain EMA, self-distillation's teacher);
//! - phase-boundary transforms (Shrink & Perturb, Head Reset) and the
//!   periodic ReDo scan;
//! - extra loss terms (Regen, Spectral decoupling, self-distillation KL).
//!
//! L2 is realized as AdamW decoupled weight decay and needs no hook.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{log_softmax, softmax, Activation, MlpModel, ParamSet, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    None,
    HareTortoise,
    Ema,
    SelfDistill,
    ShrinkPerturb,
    HeadReset,
    Redo,
    Regen,
    Spectral,
    L2,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 10] = [
        InterventionKind::None,
        InterventionKind::HareTortoise,
        InterventionKind::Ema,
        InterventionKind::SelfDistill,
        InterventionKind::ShrinkPerturb,
        InterventionKind::HeadReset,
        InterventionKind::Redo,
        InterventionKind::Regen,
        InterventionKind::Spectral,
        InterventionKind::L2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionKind::None => "none",
            InterventionKind::HareTortoise => "hare_tortoise",
            InterventionKind::Ema => "ema",
            InterventionKind::SelfDistill => "self_distill",
            InterventionKind::ShrinkPerturb => "shrink_perturb",
            InterventionKind::HeadReset => "head_reset",
            InterventionKind::Redo => "redo",
            InterventionKind::Regen => "regen",
            InterventionKind::Spectral => "spectral",
            InterventionKind::L2 => "l2",
        }
    }

    /// Kinds that keep a tortoise copy and predict with it.
    pub fn uses_tortoise(self) -> bool {
        matches!(
            self,
            InterventionKind::HareTortoise | InterventionKind::Ema | InterventionKind::SelfDistill
        )
    }

    /// `(name, default, min, max)` for every parameter the kind accepts.
    pub fn param_table(self) -> &'static [(&'static str, f64, f64, f64)] {
        match self {
            InterventionKind::None | InterventionKind::HeadReset => &[],
            InterventionKind::HareTortoise => &[("momentum", 0.999, 0.0, 1.0), ("reset_interval", 10.0, 1.0, f64::INFINITY)],
            InterventionKind::Ema => &[("momentum", 0.999, 0.0, 1.0)],
            InterventionKind::SelfDistill => &[("momentum", 0.999, 0.0, 1.0), ("beta", 1.0, 0.0, f64::INFINITY)],
            InterventionKind::ShrinkPerturb => &[("shrink", 0.8, 0.0, 1.0), ("sigma", 0.0, 0.0, f64::INFINITY)],
            InterventionKind::Redo => &[("tau", 0.1, 0.0, f64::INFINITY), ("redo_every", 5.0, 1.0, f64::INFINITY)],
            InterventionKind::Regen => &[("lambda", 0.01, 0.0, f64::INFINITY)],
            InterventionKind::Spectral => &[("lambda", 0.01, 0.0, f64::INFINITY)],
            InterventionKind::L2 => &[("weight_decay", 0.01, 0.0, f64::INFINITY)],
        }
    }
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InterventionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InterventionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("intervention.kind", format!("unknown kind `{s}`")))
    }
}

/// Which intervention to run and its named real-valued parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for InterventionSpec {
    fn default() -> Self {
        Self::new(InterventionKind::None)
    }
}

impl InterventionSpec {
    /// Spec with every parameter at its default.
    pub fn new(kind: InterventionKind) -> Self {
        let params = kind.param_table().iter().map(|&(n, d, _, _)| (n.to_string(), d)).collect();
        Self { kind, params }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    /// Fills defaults and checks every parameter name and range.
    pub fn validated(mut self) -> Result<Self> {
        let table = self.kind.param_table();
        for (name, value) in &self.params {
            let Some(&(_, _, lo, hi)) = table.iter().find(|(n, ..)| n == name) else {
                return Err(Error::config(
                    format!("intervention.params.{name}"),
                    format!("not a parameter of `{}`", self.kind),
                ));
            };
            if !value.is_finite() && !(value.is_infinite() && hi.is_infinite() && *value > 0.0) {
                return Err(Error::config(format!("intervention.params.{name}"), "must be a number"));
            }
            if *value < lo || *value > hi {
                return Err(Error::config(
                    format!("intervention.params.{name}"),
                    format!("{value} outside [{lo}, {hi}]"),
                ));
            }
        }
        for &(name, default, _, _) in table {
            self.params.entry(name.to_string()).or_insert(default);
        }
        Ok(self)
    }

    /// Parameter value, falling back to the kind's default.
    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or_else(|| {
            self.kind
                .param_table()
                .iter()
                .find(|(n, ..)| *n == name)
                .map(|&(_, d, _, _)| d)
                .unwrap_or(f64::NAN)
        })
    }
}

/// Unit of the Hare & Tortoise reset interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetClock {
    Steps,
    Epochs,
}

/// Tortoise copy (θ_t) plus the reset counter.
#[derive(Debug, Clone)]
pub struct HareTortoiseState {
    pub tortoise: ParamSet,
    /// Running batch-norm statistics, averaged alongside the weights.
    pub tortoise_stats: ParamSet,
    pub momentum: f64,
    /// `None` disables resets (plain EMA teacher).
    pub reset_interval: Option<u64>,
    pub clock: ResetClock,
    counter: u64,
}

impl HareTortoiseState {
    /// Starts the tortoise as an exact copy of the hare.
    pub fn new(hare: &ParamSet, hare_stats: &ParamSet, momentum: f64, reset_interval: Option<u64>, clock: ResetClock) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1]")));
        }
        if reset_interval == Some(0) {
            return Err(Error::InvalidArgument("reset interval must be >= 1".into()));
        }
        Ok(Self {
            tortoise: hare.clone(),
            tortoise_stats: hare_stats.clone(),
            momentum,
            reset_interval,
            clock,
            counter: 0,
        })
    }

    pub fn for_model(model: &MlpModel, momentum: f64, reset_interval: Option<u64>, clock: ResetClock) -> Result<Self> {
        Self::new(model.params(), model.running_stats(), momentum, reset_interval, clock)
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// θ_t ← µ·θ_t + (1 − µ)·θ_h
    pub fn ema_update(&mut self, hare: &ParamSet) -> Result<()> {
        let mu = self.momentum;
        self.tortoise.scale_add(mu, 1.0 - mu, hare)
    }

    pub fn ema_update_stats(&mut self, hare_stats: &ParamSet) -> Result<()> {
        let mu = self.momentum;
        self.tortoise_stats.scale_add(mu, 1.0 - mu, hare_stats)
    }

    fn tick(&mut self) -> bool {
        let fire = self.reset_interval.is_some_and(|r| self.counter.is_multiple_of(r));
        self.counter += 1;
        fire
    }

    /// Advances the counter; when it was a multiple of the interval, copies
    /// θ_t into `hare` exactly. Returns whether the reset fired.
    pub fn maybe_reset(&mut self, hare: &mut ParamSet) -> Result<bool> {
        hare.check_compatible(&self.tortoise, "hare/tortoise")?;
        let fire = self.tick();
        if fire {
            hare.copy_from(&self.tortoise)?;
        }
        Ok(fire)
    }

    /// [`maybe_reset`](Self::maybe_reset) on a model, also restoring its
    /// running statistics.
    pub fn maybe_reset_model(&mut self, model: &mut MlpModel) -> Result<bool> {
        model.params().check_compatible(&self.tortoise, "hare/tortoise")?;
        let fire = self.tick();
        if fire {
            model.load(&self.tortoise, &self.tortoise_stats)?;
        }
        Ok(fire)
    }
}

/// Blends every entry toward its initial value:
/// `λ·init + (1 − λ)·current + ε`, with `ε ~ Normal(0, σ²)`.
pub fn shrink_perturb<R: Rng + ?Sized>(
    params: &mut ParamSet,
    init: &ParamSet,
    lambda_shrink: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<()> {
    params.check_compatible(init, "shrink_perturb")?;
    if !(0.0..=1.0).contains(&lambda_shrink) || sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "shrink {lambda_shrink} must be in [0, 1] and sigma {sigma} >= 0"
        )));
    }
    let noise = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).expect("finite sigma"))
    } else {
        None
    };
    for (cur, ini) in params.tensors_mut().zip(init.tensors()) {
        for (c, &i) in cur.values_mut().iter_mut().zip(ini.values()) {
            let blended = lambda_shrink * i + (1.0 - lambda_shrink) * *c;
            *c = match &noise {
                Some(n) => blended + n.sample(rng),
                // rounding can push the blend one ulp past an endpoint
                None => blended.clamp(c.min(i), c.max(i)),
            };
        }
    }
    Ok(())
}

/// Restores every head parameter (layers `>= head_start`) to its stored
/// initial value; the backbone is untouched.
pub fn head_reset(model: &mut MlpModel) {
    let (arch, params, init) = model.parts_mut();
    for layer in arch.layers().iter().filter(|l| arch.is_head(l.index)) {
        let mut idx = vec![layer.weight_index(), layer.bias_index()];
        if let Some((s, t)) = layer.norm_indices() {
            idx.extend([s, t]);
        }
        for i in idx {
            params.at_mut(i).values_mut().copy_from_slice(init.at(i).values());
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecycleReport {
    pub dormant_count: usize,
    /// `(layer, unit)` of every recycled neuron.
    pub recycled: Vec<(usize, usize)>,
    /// `(param entry, flat index)` of every value the recycle rewrote, for
    /// clearing optimizer moments.
    pub touched: Vec<(usize, usize)>,
}

/// Per-unit dormancy scores of every hidden layer on `batch`: mean |a_i|
/// divided by the layer average of that quantity. A layer whose activations
/// are all zero scores 0 everywhere.
pub fn dormancy_scores(model: &MlpModel, batch: &Tensor2) -> Result<Vec<Vec<f64>>> {
    let (_, trace) = model.forward_eval(batch)?;
    let arch = model.arch();
    let rows = batch.rows() as f64;
    let mut scores = Vec::new();
    for layer in arch.layers().iter().filter(|l| l.hidden) {
        let act = trace.layer_input(layer.index + 1);
        let units = layer.units;
        let mut mean_abs = vec![0.0; units];
        for r in 0..act.rows() {
            let row = act.row(r);
            for (j, m) in mean_abs.iter_mut().enumerate() {
                *m += row[j].abs();
                if arch.activation() == Activation::Crelu {
                    *m += row[units + j].abs();
                }
            }
        }
        mean_abs.iter_mut().for_each(|m| *m /= rows);
        let layer_mean = mean_abs.iter().sum::<f64>() / units as f64;
        scores.push(if layer_mean > 0.0 {
            mean_abs.iter().map(|m| m / layer_mean).collect()
        } else {
            vec![0.0; units]
        });
    }
    Ok(scores)
}

/// ReDo: neurons scoring `<= tau` get their incoming weights redrawn from the
/// initializer (bias and norm affine reset) and their outgoing weights zeroed.
pub fn redo_recycle<R: Rng + ?Sized>(model: &mut MlpModel, eval_batch: &Tensor2, tau: f64, rng: &mut R) -> Result<RecycleReport> {
    if tau < 0.0 {
        return Err(Error::InvalidArgument(format!("tau {tau} must be >= 0")));
    }
    if eval_batch.rows() == 0 {
        return Err(Error::InvalidArgument("ReDo needs a non-empty batch".into()));
    }
    let scores = dormancy_scores(model, eval_batch)?;
    let crelu = model.arch().activation() == Activation::Crelu;
    let (arch, params, _) = model.parts_mut();
    let mut report = RecycleReport::default();
    for (layer, layer_scores) in arch.layers().iter().filter(|l| l.hidden).zip(&scores) {
        let next = arch.layer(layer.index + 1);
        for (unit, &s) in layer_scores.iter().enumerate() {
            if s > tau {
                continue;
            }
            arch.redraw_unit(params, layer, unit, rng);
            let out_rows: Vec<usize> = if crelu { vec![unit, layer.units + unit] } else { vec![unit] };
            let next_w = params.at_mut(next.weight_index());
            for &r in &out_rows {
                next_w.row_mut(r).fill(0.0);
            }
            report.dormant_count += 1;
            report.recycled.push((layer.index, unit));
            for r in 0..layer.in_features {
                report.touched.push((layer.weight_index(), r * layer.units + unit));
            }
            report.touched.push((layer.bias_index(), unit));
            if let Some((s_idx, t_idx)) = layer.norm_indices() {
                report.touched.push((s_idx, unit));
                report.touched.push((t_idx, unit));
            }
            for &r in &out_rows {
                for c in 0..next.units {
                    report.touched.push((next.weight_index(), r * next.units + c));
                }
            }
        }
    }
    Ok(report)
}

/// Base loss plus named extra terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub base_loss: f64,
    pub extra_terms: Vec<(String, f64)>,
    pub total: f64,
}

impl LossTerms {
    pub fn new(base_loss: f64) -> Self {
        Self {
            base_loss,
            extra_terms: Vec::new(),
            total: base_loss,
        }
    }

    pub fn add(&mut self, name: &str, value: f64) {
        self.extra_terms.push((name.to_string(), value));
        self.total += value;
    }
}

/// Regen: `λ · mean over all entries of (θ − θ0)²`.
pub fn regen_loss_term(params: &ParamSet, init: &ParamSet, lambda: f64) -> Result<f64> {
    params.check_compatible(init, "regen")?;
    let n = params.numel().max(1) as f64;
    let sq: f64 = params
        .tensors()
        .zip(init.tensors())
        .flat_map(|(a, b)| a.values().iter().zip(b.values()))
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(lambda * sq / n)
}

/// Adds `∂regen/∂θ = 2λ(θ − θ0)/N` into `grads`.
pub fn add_regen_gradient(grads: &mut ParamSet, params: &ParamSet, init: &ParamSet, lambda: f64) -> Result<()> {
    params.check_compatible(init, "regen")?;
    params.check_compatible(grads, "regen grads")?;
    let coeff = 2.0 * lambda / params.numel().max(1) as f64;
    for ((g, p), i) in grads.tensors_mut().zip(params.tensors()).zip(init.tensors()) {
        for ((gv, pv), iv) in g.values_mut().iter_mut().zip(p.values()).zip(i.values()) {
            *gv += coeff * (pv - iv);
        }
    }
    Ok(())
}

/// Spectral decoupling: `λ · mean over batch and classes of logit²`.
pub fn spectral_loss_term(logits: &Tensor2, lambda: f64) -> f64 {
    lambda * logits.sum_squares() / logits.len().max(1) as f64
}

/// `∂spectral/∂logits = 2λ·z / (B·C)`
pub fn spectral_logit_gradient(logits: &Tensor2, lambda: f64) -> Tensor2 {
    let coeff = 2.0 * lambda / logits.len().max(1) as f64;
    let mut g = logits.clone();
    g.map_inplace(|z| coeff * z);
    g
}

/// `β · mean over the batch of KL(softmax(tortoise) ‖ softmax(hare))`.
pub fn self_distill_loss_term(hare_logits: &Tensor2, tortoise_logits: &Tensor2, beta: f64) -> Result<f64> {
    if !hare_logits.same_shape(tortoise_logits) {
        return Err(Error::shape(
            "self_distill",
            format!("{:?}", tortoise_logits.shape()),
            format!("{:?}", hare_logits.shape()),
        ));
    }
    let lp_h = log_softmax(hare_logits);
    let lp_t = log_softmax(tortoise_logits);
    let mut kl = 0.0;
    for (lh, lt) in lp_h.values().iter().zip(lp_t.values()) {
        let pt = lt.exp();
        if pt > 0.0 {
            kl += pt * (lt - lh);
        }
    }
    Ok(beta * (kl / hare_logits.rows().max(1) as f64).max(0.0))
}

/// Gradient of [`self_distill_loss_term`] w.r.t. the hare logits, with the
/// tortoise side held constant: `β·(p_h − p_t)/B`.
pub fn self_distill_logit_gradient(hare_logits: &Tensor2, tortoise_logits: &Tensor2, beta: f64) -> Result<Tensor2> {
    if !hare_logits.same_shape(tortoise_logits) {
        return Err(Error::shape(
            "self_distill",
            format!("{:?}", tortoise_logits.shape()),
            format!("{:?}", hare_logits.shape()),
        ));
    }
    let coeff = beta / hare_logits.rows().max(1) as f64;
    let mut g = softmax(hare_logits);
    let pt = softmax(tortoise_logits);
    for (gv, t) in g.values_mut().iter_mut().zip(pt.values()) {
        *gv = coeff * (*gv - t);
    }
    Ok(g)
}

/// The parameters evaluation should use.
#[derive(Debug, Clone, Copy)]
pub struct PredictionParams<'a> {
    pub params: &'a ParamSet,
    pub stats: &'a ParamSet,
}

/// Tortoise for the EMA family, the model itself otherwise.
pub fn predict_params<'a>(
    spec: &InterventionSpec,
    model: &'a MlpModel,
    ht_state: Option<&'a HareTortoiseState>,
) -> Result<PredictionParams<'a>> {
    match (spec.kind.uses_tortoise(), ht_state) {
        (true, Some(ht)) => Ok(PredictionParams {
            params: &ht.tortoise,
            stats: &ht.tortoise_stats,
        }),
        (true, None) => Err(Error::InvalidArgument(format!("`{}` needs a tortoise state", spec.kind))),
        (false, None) => Ok(PredictionParams {
            params: model.params(),
            stats: model.running_stats(),
        }),
        (false, Some(_)) => Err(Error::InvalidArgument(format!("`{}` does not keep a tortoise", spec.kind))),
    }
}
