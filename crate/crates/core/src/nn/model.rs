//! Dense MLP with optional batch norm in the backbone and ReLU / CReLU
//! hidden activations.
//!
//! Layers are numbered from 1. Layer `l` maps the features of layer `l-1`
//! through `x·W + b`, then (hidden layers only) batch norm when the layer sits
//! in the backbone, then the activation. Layers `>= head_start` form the head;
//! the features entering the head are the backbone output Φ.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{param_name, ParamSet, Role};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each train-mode forward.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Crelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    None,
    Batchnorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub index: usize,
    pub in_features: usize,
    /// Width of the linear map.
    pub units: usize,
    /// Width after the activation (2 × `units` for CReLU hidden layers).
    pub out_features: usize,
    pub hidden: bool,
    pub normed: bool,
    weight: usize,
    bias: usize,
    norm: Option<(usize, usize)>,
    stats: Option<(usize, usize)>,
}

impl LayerSpec {
    pub fn weight_index(&self) -> usize {
        self.weight
    }

    pub fn bias_index(&self) -> usize {
        self.bias
    }

    /// `(scale, shift)` entry indices when the layer is normalized.
    pub fn norm_indices(&self) -> Option<(usize, usize)> {
        self.norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    widths: Vec<usize>,
    activation: Activation,
    norm: Norm,
    head_start: usize,
    layers: Vec<LayerSpec>,
}

impl Architecture {
    /// `widths` lists input, hidden and output widths as configured. With CReLU
    /// each hidden linear map gets half the configured width, so the feature
    /// count after the activation matches the configured width.
    pub fn new(widths: &[usize], activation: Activation, norm: Norm, head_start: usize) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Architecture(format!(
                "need at least input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Architecture(format!("widths must be positive, got {widths:?}")));
        }
        let num_layers = widths.len() - 1;
        if head_start < 1 || head_start > num_layers {
            return Err(Error::Architecture(format!(
                "head_start {head_start} outside [1, {num_layers}]"
            )));
        }
        let mut layers = Vec::with_capacity(num_layers);
        let mut in_features = widths[0];
        let mut param_idx = 0;
        let mut stat_idx = 0;
        for l in 1..=num_layers {
            let hidden = l < num_layers;
            let units = if hidden && activation == Activation::Crelu {
                (widths[l] / 2).max(1)
            } else {
                widths[l]
            };
            let out_features = if hidden && activation == Activation::Crelu { 2 * units } else { units };
            let normed = hidden && norm == Norm::Batchnorm && l < head_start;
            let weight = param_idx;
            let bias = param_idx + 1;
            param_idx += 2;
            let (norm_idx, stats) = if normed {
                let n = (param_idx, param_idx + 1);
                param_idx += 2;
                let s = (stat_idx, stat_idx + 1);
                stat_idx += 2;
                (Some(n), Some(s))
            } else {
                (None, None)
            };
            layers.push(LayerSpec {
                index: l,
                in_features,
                units,
                out_features,
                hidden,
                normed,
                weight,
                bias,
                norm: norm_idx,
                stats,
            });
            in_features = out_features;
        }
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            norm,
            head_start,
            layers,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn head_start(&self) -> usize {
        self.head_start
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerSpec {
        &self.layers[l - 1]
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_features)
    }

    /// Width of Φ, the features entering the head.
    pub fn feature_dim(&self) -> usize {
        self.layer(self.head_start).in_features
    }

    pub fn is_head(&self, layer: usize) -> bool {
        layer >= self.head_start
    }

    /// Draws fresh parameters: He-normal weights for layers feeding an
    /// activation, LeCun-normal for the output layer, zero biases, unit norm
    /// scales and zero shifts.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut params = ParamSet::new();
        for layer in &self.layers {
            let w = self.draw_weight(layer, rng);
            params.push(param_name(layer.index, Role::Weight), w).expect("unique names");
            params
                .push(param_name(layer.index, Role::Bias), Tensor2::zeros(1, layer.units))
                .expect("unique names");
            if layer.normed {
                params
                    .push(param_name(layer.index, Role::NormScale), Tensor2::filled(1, layer.units, 1.0))
                    .expect("unique names");
                params
                    .push(param_name(layer.index, Role::NormShift), Tensor2::zeros(1, layer.units))
                    .expect("unique names");
            }
        }
        params
    }

    pub fn init_stats(&self) -> ParamSet {
        let mut stats = ParamSet::new();
        for layer in self.layers.iter().filter(|l| l.normed) {
            stats
                .push(param_name(layer.index, Role::RunningMean), Tensor2::zeros(1, layer.units))
                .expect("unique names");
            stats
                .push(param_name(layer.index, Role::RunningVar), Tensor2::filled(1, layer.units, 1.0))
                .expect("unique names");
        }
        stats
    }

    pub(crate) fn weight_std(&self, layer: &LayerSpec) -> f64 {
        let gain = if layer.hidden { 2.0 } else { 1.0 };
        (gain / layer.in_features as f64).sqrt()
    }

    fn draw_weight<R: Rng + ?Sized>(&self, layer: &LayerSpec, rng: &mut R) -> Tensor2 {
        let dist = Normal::new(0.0, self.weight_std(layer)).expect("positive std");
        let values = (0..layer.in_features * layer.units).map(|_| dist.sample(rng)).collect();
        Tensor2::from_vec(layer.in_features, layer.units, values).expect("sized")
    }

    /// Redraws the incoming weights of one unit of `layer` from the initializer.
    pub(crate) fn redraw_unit<R: Rng + ?Sized>(&self, params: &mut ParamSet, layer: &LayerSpec, unit: usize, rng: &mut R) {
        let dist = Normal::new(0.0, self.weight_std(layer)).expect("positive std");
        let w = params.at_mut(layer.weight);
        for r in 0..layer.in_features {
            w.set(r, unit, dist.sample(rng));
        }
        params.at_mut(layer.bias).values_mut()[unit] = 0.0;
        if let Some((scale, shift)) = layer.norm {
            params.at_mut(scale).values_mut()[unit] = 1.0;
            params.at_mut(shift).values_mut()[unit] = 0.0;
        }
    }

    fn check_params(&self, params: &ParamSet, stats: &ParamSet) -> Result<()> {
        let expected = 2 * self.layers.len() + 2 * self.layers.iter().filter(|l| l.normed).count();
        if params.len() != expected {
            return Err(Error::shape("forward params", expected, params.len()));
        }
        for layer in &self.layers {
            let w = params.at(layer.weight);
            if w.shape() != (layer.in_features, layer.units) {
                return Err(Error::shape(
                    "forward weight",
                    format!("{:?}", (layer.in_features, layer.units)),
                    format!("{:?}", w.shape()),
                ));
            }
        }
        let expected_stats = 2 * self.layers.iter().filter(|l| l.normed).count();
        if stats.len() != expected_stats {
            return Err(Error::shape("forward running stats", expected_stats, stats.len()));
        }
        Ok(())
    }

    /// Pure forward pass. In train mode batch norm uses batch statistics (and
    /// records them in the trace); in eval mode it uses `stats`.
    pub fn forward(&self, params: &ParamSet, stats: &ParamSet, batch: &Tensor2, mode: Mode) -> Result<(Tensor2, ForwardTrace)> {
        if batch.rows() == 0 {
            return Err(Error::InvalidArgument("forward on an empty batch".into()));
        }
        if batch.cols() != self.input_dim() {
            return Err(Error::shape("forward input", self.input_dim(), batch.cols()));
        }
        self.check_params(params, stats)?;

        let n = batch.rows();
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &self.layers {
            let mut z = current.matmul(params.at(layer.weight))?;
            z.add_row_inplace(params.at(layer.bias).values());

            let norm = match layer.norm {
                Some((scale_idx, shift_idx)) => {
                    let units = layer.units;
                    let (mean, var) = match mode {
                        Mode::Train => batch_moments(&z),
                        Mode::Eval => {
                            let (m_idx, v_idx) = layer.stats.expect("normed layer has stats");
                            (stats.at(m_idx).values().to_vec(), stats.at(v_idx).values().to_vec())
                        }
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let scale = params.at(scale_idx).values();
                    let shift = params.at(shift_idx).values();
                    let mut x_hat = z;
                    let mut y = Tensor2::zeros(n, units);
                    for r in 0..n {
                        let xr = x_hat.row_mut(r);
                        let yr = y.row_mut(r);
                        for j in 0..units {
                            let h = (xr[j] - mean[j]) * inv_std[j];
                            xr[j] = h;
                            yr[j] = scale[j] * h + shift[j];
                        }
                    }
                    z = y;
                    Some(NormCache {
                        x_hat,
                        inv_std,
                        mean,
                        var,
                    })
                }
                None => None,
            };

            if layer.hidden {
                let act = activate(&z, self.activation);
                traces.push(LayerTrace {
                    input: std::mem::replace(&mut current, act),
                    pre: z,
                    norm,
                });
            } else {
                traces.push(LayerTrace {
                    input: std::mem::replace(&mut current, z),
                    pre: Tensor2::zeros(0, 0),
                    norm,
                });
            }
        }
        Ok((
            current,
            ForwardTrace {
                mode,
                version: 0,
                rows: n,
                head_start: self.head_start,
                layers: traces,
            },
        ))
    }

    /// Reverse-mode pass from `dlogits` down to layer `stop_layer` (inclusive),
    /// accumulating parameter gradients into `grads` when given. Returns the
    /// gradient with respect to the input of `stop_layer`.
    fn backward_to(
        &self,
        params: &ParamSet,
        trace: &ForwardTrace,
        dlogits: &Tensor2,
        stop_layer: usize,
        mut grads: Option<&mut ParamSet>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor2>> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::StaleTrace(format!(
                "trace has {} layers, model has {}",
                trace.layers.len(),
                self.layers.len()
            )));
        }
        if dlogits.shape() != (trace.rows, self.output_dim()) {
            return Err(Error::shape(
                "backward dlogits",
                format!("{:?}", (trace.rows, self.output_dim())),
                format!("{:?}", dlogits.shape()),
            ));
        }
        let n = trace.rows as f64;
        let mut upstream = dlogits.clone();
        for layer in self.layers.iter().rev().take_while(|l| l.index >= stop_layer) {
            let lt = &trace.layers[layer.index - 1];
            let mut dz = if layer.hidden {
                activation_backward(&upstream, &lt.pre, self.activation)
            } else {
                upstream
            };

            if let (Some((scale_idx, shift_idx)), Some(cache)) = (layer.norm, lt.norm.as_ref()) {
                let units = layer.units;
                let scale = params.at(scale_idx).values();
                let mut dscale = vec![0.0; units];
                let mut dshift = vec![0.0; units];
                for r in 0..trace.rows {
                    let dy = dz.row(r);
                    let xh = cache.x_hat.row(r);
                    for j in 0..units {
                        dscale[j] += dy[j] * xh[j];
                        dshift[j] += dy[j];
                    }
                }
                let mut dx = Tensor2::zeros(trace.rows, units);
                match trace.mode {
                    Mode::Train => {
                        // dx = inv_std/N · (N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), with dx̂ = dy·γ
                        let sum_dxh: Vec<f64> = (0..units).map(|j| dshift[j] * scale[j]).collect();
                        let sum_dxh_xh: Vec<f64> = (0..units).map(|j| dscale[j] * scale[j]).collect();
                        for r in 0..trace.rows {
                            let dy = dz.row(r);
                            let xh = cache.x_hat.row(r);
                            let out = dx.row_mut(r);
                            for j in 0..units {
                                let dxh = dy[j] * scale[j];
                                out[j] = cache.inv_std[j] / n * (n * dxh - sum_dxh[j] - xh[j] * sum_dxh_xh[j]);
                            }
                        }
                    }
                    Mode::Eval => {
                        for r in 0..trace.rows {
                            let dy = dz.row(r);
                            let out = dx.row_mut(r);
                            for j in 0..units {
                                out[j] = dy[j] * scale[j] * cache.inv_std[j];
                            }
                        }
                    }
                }
                if let Some(g) = grads.as_deref_mut() {
                    g.at_mut(scale_idx).values_mut().copy_from_slice(&dscale);
                    g.at_mut(shift_idx).values_mut().copy_from_slice(&dshift);
                }
                dz = dx;
            }

            if let Some(g) = grads.as_deref_mut() {
                let dw = lt.input.matmul_tn(&dz)?;
                *g.at_mut(layer.weight) = dw;
                *g.at_mut(layer.bias) = dz.sum_rows();
            }

            if layer.index == stop_layer {
                return Ok(if need_input_grad {
                    Some(dz.matmul_nt(params.at(layer.weight))?)
                } else {
                    None
                });
            }
            upstream = dz.matmul_nt(params.at(layer.weight))?;
        }
        Ok(None)
    }

    /// Exact gradient of the loss with respect to every parameter, given
    /// `dlogits = ∂loss/∂logits`.
    pub fn backward(&self, params: &ParamSet, trace: &ForwardTrace, dlogits: &Tensor2) -> Result<ParamSet> {
        let mut grads = params.zeros_like();
        self.backward_to(params, trace, dlogits, 1, Some(&mut grads), false)?;
        Ok(grads)
    }

    /// `∂loss/∂Φ`: back-propagates through the head only.
    pub fn feature_gradient(&self, params: &ParamSet, trace: &ForwardTrace, dlogits: &Tensor2) -> Result<Tensor2> {
        Ok(self
            .backward_to(params, trace, dlogits, self.head_start, None, true)?
            .expect("input gradient requested"))
    }
}

fn batch_moments(z: &Tensor2) -> (Vec<f64>, Vec<f64>) {
    let n = z.rows() as f64;
    let mut mean = vec![0.0; z.cols()];
    for r in 0..z.rows() {
        for (m, v) in mean.iter_mut().zip(z.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; z.cols()];
    for r in 0..z.rows() {
        for ((s, v), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// ReLU, or CReLU laid out as `[ReLU(z), −ReLU(−z)]` along the feature axis.
pub fn activate(z: &Tensor2, activation: Activation) -> Tensor2 {
    match activation {
        Activation::Relu => {
            let mut a = z.clone();
            a.map_inplace(|v| if v > 0.0 { v } else { 0.0 });
            a
        }
        Activation::Crelu => {
            let units = z.cols();
            let mut a = Tensor2::zeros(z.rows(), 2 * units);
            for r in 0..z.rows() {
                let zr = z.row(r);
                let ar = a.row_mut(r);
                for j in 0..units {
                    let v = zr[j];
                    if v > 0.0 {
                        ar[j] = v;
                    } else if v < 0.0 {
                        ar[units + j] = v;
                    }
                }
            }
            a
        }
    }
}

fn activation_backward(upstream: &Tensor2, pre: &Tensor2, activation: Activation) -> Tensor2 {
    match activation {
        Activation::Relu => {
            let mut dz = upstream.clone();
            for (d, z) in dz.values_mut().iter_mut().zip(pre.values()) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            dz
        }
        Activation::Crelu => {
            let units = pre.cols();
            let mut dz = Tensor2::zeros(pre.rows(), units);
            for r in 0..pre.rows() {
                let zr = pre.row(r);
                let ur = upstream.row(r);
                let out = dz.row_mut(r);
                for j in 0..units {
                    out[j] = if zr[j] > 0.0 {
                        ur[j]
                    } else if zr[j] < 0.0 {
                        ur[units + j]
                    } else {
                        0.0
                    };
                }
            }
            dz
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    x_hat: Tensor2,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    input: Tensor2,
    /// Post-norm, pre-activation values (hidden layers only).
    pre: Tensor2,
    norm: Option<NormCache>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    version: u64,
    rows: usize,
    head_start: usize,
    layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Φ: the final backbone activation, i.e. the input of the first head layer.
    pub fn features(&self) -> &Tensor2 {
        &self.layers[self.head_start - 1].input
    }

    /// Input of layer `l` (the activations of layer `l-1`).
    pub fn layer_input(&self, l: usize) -> &Tensor2 {
        &self.layers[l - 1].input
    }

    /// Post-norm pre-activations of hidden layer `l`.
    pub fn pre_activation(&self, l: usize) -> &Tensor2 {
        &self.layers[l - 1].pre
    }

    /// Batch mean and biased variance used by layer `l`'s norm, if any.
    pub fn norm_moments(&self, l: usize) -> Option<(&[f64], &[f64])> {
        self.layers[l - 1].norm.as_ref().map(|c| (c.mean.as_slice(), c.var.as_slice()))
    }
}

/// Network with its parameters, the frozen initial snapshot, and batch-norm
/// running statistics.
#[derive(Debug, Clone)]
pub struct MlpModel {
    arch: Architecture,
    params: ParamSet,
    init_params: ParamSet,
    stats: ParamSet,
    version: u64,
}

impl MlpModel {
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        norm: Norm,
        head_start: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let arch = Architecture::new(widths, activation, norm, head_start)?;
        Ok(Self::from_arch(arch, rng))
    }

    pub fn from_arch<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let params = arch.init_params(rng);
        let stats = arch.init_stats();
        Self {
            init_params: params.clone(),
            params,
            stats,
            arch,
            version: 0,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access; invalidates outstanding train traces.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.version += 1;
        &mut self.params
    }

    pub fn init_params(&self) -> &ParamSet {
        &self.init_params
    }

    pub fn running_stats(&self) -> &ParamSet {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut ParamSet {
        &mut self.stats
    }

    /// Splits the borrow so callers can mutate parameters while reading the
    /// architecture and initial snapshot.
    pub fn parts_mut(&mut self) -> (&Architecture, &mut ParamSet, &ParamSet) {
        self.version += 1;
        (&self.arch, &mut self.params, &self.init_params)
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    pub fn forward(&mut self, batch: &Tensor2, mode: Mode) -> Result<(Tensor2, ForwardTrace)> {
        match mode {
            Mode::Eval => self.forward_eval(batch),
            Mode::Train => self.forward_train(batch),
        }
    }

    /// Train-mode forward: batch statistics, running stats updated.
    pub fn forward_train(&mut self, batch: &Tensor2) -> Result<(Tensor2, ForwardTrace)> {
        let (logits, mut trace) = self.arch.forward(&self.params, &self.stats, batch, Mode::Train)?;
        trace.version = self.version;
        let rows = batch.rows() as f64;
        let unbias = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
        for layer in self.arch.layers.iter().filter(|l| l.normed) {
            let (m_idx, v_idx) = layer.stats.expect("normed layer has stats");
            let cache = trace.layers[layer.index - 1].norm.as_ref().expect("normed layer cached");
            for (r, m) in self.stats.at_mut(m_idx).values_mut().iter_mut().zip(&cache.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, v) in self.stats.at_mut(v_idx).values_mut().iter_mut().zip(&cache.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * unbias;
            }
        }
        Ok((logits, trace))
    }

    /// Eval-mode forward with the model's own parameters and running stats.
    pub fn forward_eval(&self, batch: &Tensor2) -> Result<(Tensor2, ForwardTrace)> {
        let (logits, mut trace) = self.arch.forward(&self.params, &self.stats, batch, Mode::Eval)?;
        trace.version = self.version;
        Ok((logits, trace))
    }

    pub fn backward(&self, trace: &ForwardTrace, dlogits: &Tensor2) -> Result<ParamSet> {
        if trace.mode != Mode::Train {
            return Err(Error::StaleTrace("backward needs a train-mode trace".into()));
        }
        if trace.version != self.version {
            return Err(Error::StaleTrace(format!(
                "trace taken at parameter version {}, model is at {}",
                trace.version, self.version
            )));
        }
        self.arch.backward(&self.params, trace, dlogits)
    }

    pub fn feature_gradient(&self, trace: &ForwardTrace, dlogits: &Tensor2) -> Result<Tensor2> {
        self.arch.feature_gradient(&self.params, trace, dlogits)
    }

    /// Overwrites parameters and running stats (e.g. loading a tortoise copy).
    pub fn load(&mut self, params: &ParamSet, stats: &ParamSet) -> Result<()> {
        self.params_mut().copy_from(params)?;
        self.stats.copy_from(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn model(widths: &[usize], act: Activation, norm: Norm, head: usize, seed: u64) -> MlpModel {
        MlpModel::init(widths, act, norm, head, &mut stream_rng(seed, Stream::Init, 0)).unwrap()
    }

    #[test]
    fn mnist_shape_head_boundary() {
        let m = model(&[784, 100, 100, 10], Activation::Relu, Norm::Batchnorm, 3, 0);
        let arch = m.arch();
        assert_eq!(arch.num_layers(), 3);
        assert!(!arch.is_head(1) && !arch.is_head(2) && arch.is_head(3));
        assert!(arch.layer(1).normed && arch.layer(2).normed && !arch.layer(3).normed);
        assert_eq!(arch.feature_dim(), 100);
        assert_eq!(m.init_params(), m.params());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = model(&[8, 6, 3], Activation::Relu, Norm::None, 2, 11);
        let b = model(&[8, 6, 3], Activation::Relu, Norm::None, 2, 11);
        let c = model(&[8, 6, 3], Activation::Relu, Norm::None, 2, 12);
        assert!(a.params().bitwise_eq(b.params()));
        assert!(!a.params().bitwise_eq(c.params()));
    }

    #[test]
    fn degenerate_widths_rejected() {
        let mut rng = stream_rng(0, Stream::Init, 0);
        assert!(MlpModel::init(&[4], Activation::Relu, Norm::None, 1, &mut rng).is_err());
        assert!(MlpModel::init(&[4, 0, 2], Activation::Relu, Norm::None, 1, &mut rng).is_err());
        assert!(MlpModel::init(&[4, 3, 2], Activation::Relu, Norm::None, 3, &mut rng).is_err());
    }

    #[test]
    fn relu_and_crelu_definitions() {
        let z = Tensor2::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        assert_eq!(activate(&z, Activation::Relu).values(), &[0.0, 2.0]);
        // [ReLU(z), −ReLU(−z)]: z=-1 → (0, -1), z=2 → (2, 0)
        assert_eq!(activate(&z, Activation::Crelu).values(), &[0.0, 2.0, -1.0, 0.0]);
    }

    #[test]
    fn crelu_doubles_feature_width() {
        let mut m = model(&[5, 8, 6, 3], Activation::Crelu, Norm::None, 3, 1);
        assert_eq!(m.arch().layer(1).units, 4);
        assert_eq!(m.arch().layer(1).out_features, 8);
        let x = Tensor2::filled(2, 5, 0.3);
        let (_, trace) = m.forward_train(&x).unwrap();
        assert_eq!(trace.layer_input(2).cols(), 8);
        assert_eq!(trace.features().cols(), 6);
    }

    #[test]
    fn empty_or_misshaped_batch_rejected() {
        let mut m = model(&[3, 4, 2], Activation::Relu, Norm::None, 2, 0);
        assert!(m.forward_train(&Tensor2::zeros(0, 3)).is_err());
        assert!(m.forward_train(&Tensor2::zeros(2, 4)).is_err());
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut m = model(&[3, 4, 2], Activation::Relu, Norm::None, 2, 0);
        let x = Tensor2::filled(2, 3, 0.5);
        let (logits, trace) = m.forward_train(&x).unwrap();
        let d = Tensor2::zeros(logits.rows(), logits.cols());
        m.params_mut().scale(1.0);
        assert!(matches!(m.backward(&trace, &d), Err(Error::StaleTrace(_))));
        let (_, eval_trace) = m.forward_eval(&x).unwrap();
        assert!(m.backward(&eval_trace, &d).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut m = model(&[3, 4, 4, 2], Activation::Relu, Norm::Batchnorm, 3, 5);
        let x = Tensor2::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.5, 0.4, 1.0], vec![0.9, -0.3, 0.2]]).unwrap();
        let (logits, trace) = m.forward_train(&x).unwrap();
        let g = m.backward(&trace, &Tensor2::zeros(logits.rows(), logits.cols())).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut m = model(&[3, 4, 2], Activation::Relu, Norm::Batchnorm, 2, 5);
        let x = Tensor2::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.5, 0.4, 1.0]]).unwrap();
        m.forward_train(&x).unwrap();
        let stats = m.running_stats().clone();
        let (a, _) = m.forward_eval(&x).unwrap();
        let (b, _) = m.forward_eval(&x).unwrap();
        assert_eq!(a, b);
        assert!(m.running_stats().bitwise_eq(&stats));
    }

    #[test]
    fn running_stats_track_batch_moments() {
        let mut m = model(&[1, 2, 2], Activation::Relu, Norm::Batchnorm, 2, 0);
        let x = Tensor2::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let (_, trace) = m.forward_train(&x).unwrap();
        let (mean, var) = trace.norm_moments(1).unwrap();
        let rm = m.running_stats().get("l1.running_mean").unwrap().values();
        let rv = m.running_stats().get("l1.running_var").unwrap().values();
        for j in 0..2 {
            assert!((rm[j] - 0.1 * mean[j]).abs() < 1e-15);
            // unbiased: biased var × n/(n−1) with n = 2
            assert!((rv[j] - (0.9 + 0.1 * 2.0 * var[j])).abs() < 1e-12);
        }
    }
}
