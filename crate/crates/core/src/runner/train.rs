//! One seeded run of a protocol.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{DatasetConfig, RunConfig};
use crate::data::{augment_batch, load_mnist_idx, make_synthetic, Dataset, ProtocolRealizer};
use crate::error::{Error, Result};
use crate::interventions::{
    add_regen_gradient, head_reset, predict_params, redo_recycle, regen_loss_term, self_distill_logit_gradient,
    self_distill_loss_term, shrink_perturb, spectral_logit_gradient, spectral_loss_term, HareTortoiseState,
    InterventionKind, LossTerms, ResetClock,
};
use crate::metrics::{accuracy, feature_probe, srank, weight_distance, weight_magnitude, zero_fraction, MetricsRecord, SRANK_DELTA};
use crate::nn::{clip_global_norm, cross_entropy, cross_entropy_loss, AdamWState, LrSchedule, MlpModel, Mode, ParamSet, Role, Tensor2};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Epoch,
    Boundary,
    Reset,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Event::Epoch => "epoch",
            Event::Boundary => "boundary",
            Event::Reset => "reset",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub event: Event,
    pub record: MetricsRecord,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_id: String,
    pub seed: u64,
    pub rows: Vec<TrajectoryRow>,
    /// Hare parameters at the end of training.
    pub final_params: ParamSet,
    /// Parameters used for prediction at the end (tortoise for the EMA family).
    pub final_predict_params: ParamSet,
    /// Set when a non-finite loss stopped the run early.
    pub aborted: Option<String>,
}

type DataPair = Arc<(Dataset, Dataset)>;

fn cache() -> &'static Mutex<HashMap<String, DataPair>> {
    static CACHE: OnceLock<Mutex<HashMap<String, DataPair>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// `(train, test)` for a dataset config, memoized per process.
pub fn load_datasets(cfg: &DatasetConfig) -> Result<DataPair> {
    let key = serde_json::to_string(cfg)?;
    if let Some(hit) = cache().lock().expect("dataset cache").get(&key) {
        return Ok(hit.clone());
    }
    let pair = match cfg {
        DatasetConfig::Mnist { dir } => {
            let [ti, tl, vi, vl] = DatasetConfig::mnist_paths(dir);
            (load_mnist_idx(ti, tl)?, load_mnist_idx(vi, vl)?)
        }
        DatasetConfig::Synthetic { .. } => {
            let (spec, data_seed) = cfg.synthetic_spec().expect("synthetic");
            make_synthetic(&spec, &mut stream_rng(data_seed, Stream::Data, 0))?
        }
    };
    let pair = Arc::new(pair);
    cache().lock().expect("dataset cache").insert(key, pair.clone());
    Ok(pair)
}

pub fn run_single(config: &RunConfig, seed: u64) -> Result<RunOutput> {
    let data = load_datasets(&config.dataset)?;
    run_single_with_data(config, seed, &data.0, &data.1)
}

struct Evaluator<'a> {
    test: &'a Dataset,
    probe: Dataset,
}

impl Evaluator<'_> {
    fn measure(
        &self,
        model: &MlpModel,
        ht: Option<&HareTortoiseState>,
        config: &RunConfig,
        train: &Dataset,
        phase: usize,
        epoch: usize,
    ) -> Result<MetricsRecord> {
        let arch = model.arch();
        let pp = predict_params(&config.intervention, model, ht)?;
        let (train_logits, _) = arch.forward(pp.params, pp.stats, train.inputs(), Mode::Eval)?;
        let (test_logits, _) = arch.forward(pp.params, pp.stats, self.test.inputs(), Mode::Eval)?;
        let probe = feature_probe(arch, pp.params, pp.stats, self.probe.inputs(), self.probe.labels())?;
        let weights = pp.params.filter_role(Role::Weight);
        Ok(MetricsRecord {
            phase,
            epoch,
            train_acc: accuracy(&train_logits, train.labels())?,
            test_acc: accuracy(&test_logits, self.test.labels())?,
            train_loss: cross_entropy_loss(&train_logits, train.labels())?,
            test_loss: cross_entropy_loss(&test_logits, self.test.labels())?,
            weight_magnitude: weight_magnitude(&weights),
            weight_distance: weight_distance(&weights, &model.init_params().filter_role(Role::Weight))?,
            zero_grad_ratio: zero_fraction(&probe.feature_grad),
            zero_act_ratio: zero_fraction(&probe.features),
            // all-zero features have no singular mass; reported as 0
            srank: srank(&probe.features, SRANK_DELTA).unwrap_or(0),
        })
    }
}

/// [`run_single`] on already-loaded data.
pub fn run_single_with_data(config: &RunConfig, seed: u64, train: &Dataset, test: &Dataset) -> Result<RunOutput> {
    let arch = config.architecture()?;
    if train.dims() != arch.input_dim() || train.num_classes() != arch.output_dim() {
        return Err(Error::config("dataset", "data shape does not match the architecture"));
    }
    let protocol = config.protocol_spec()?;
    let spec = &config.intervention;
    let kind = spec.kind;
    let mut model = MlpModel::from_arch(arch, &mut stream_rng(seed, Stream::Init, 0));
    let mut opt = AdamWState::new(model.params(), config.adamw());
    let mut ht = if kind.uses_tortoise() {
        let interval = (kind == InterventionKind::HareTortoise)
            .then(|| spec.param("reset_interval"))
            .filter(|r| r.is_finite())
            .map(|r| r as u64);
        Some(HareTortoiseState::for_model(&model, spec.param("momentum"), interval, ResetClock::Epochs)?)
    } else {
        None
    };
    let mut realizer = ProtocolRealizer::new(&protocol, train.len(), seed);
    let eval = Evaluator {
        test,
        probe: test.head(config.probe_size),
    };
    let batch_size = config.optim.batch_size;
    let mut out = RunOutput {
        run_id: config.run_id(),
        seed,
        rows: Vec::new(),
        final_params: ParamSet::new(),
        final_predict_params: ParamSet::new(),
        aborted: None,
    };
    let mut global_epoch = 0usize;

    'phases: for (phase, phase_spec) in protocol.phases.iter().enumerate() {
        let pd = realizer.phase_data(&protocol, phase, train)?;
        let data = &pd.dataset;
        if phase == 0 {
            let rec = eval.measure(&model, ht.as_ref(), config, data, 0, 0)?;
            out.rows.push(TrajectoryRow { event: Event::Epoch, record: rec });
        } else {
            let action = protocol.boundary_actions[phase - 1];
            match action.intervention {
                Some(InterventionKind::ShrinkPerturb) => {
                    let (_, params, init) = model.parts_mut();
                    let mut rng = stream_rng(seed, Stream::Perturb, phase as u32);
                    shrink_perturb(params, init, spec.param("shrink"), spec.param("sigma"), &mut rng)?;
                }
                Some(InterventionKind::HeadReset) => head_reset(&mut model),
                _ => {}
            }
            if action.reset_optimizer {
                opt.reset();
            }
            let rec = eval.measure(&model, ht.as_ref(), config, data, phase, 0)?;
            out.rows.push(TrajectoryRow {
                event: Event::Boundary,
                record: rec,
            });
        }

        let n = data.len();
        let steps_per_epoch = n.div_ceil(batch_size);
        let schedule = LrSchedule::new(config.optim.lr, config.optim.warmup_ratio, phase_spec.epochs * steps_per_epoch);
        let redo_batch = data.head(config.probe_size);
        let mut phase_step = 0usize;
        let mut order: Vec<usize> = (0..n).collect();

        for epoch in 1..=phase_spec.epochs {
            if let Some(state) = ht.as_mut() {
                let counter = state.counter();
                if state.maybe_reset_model(&mut model)? && counter > 0 {
                    let rec = eval.measure(&model, Some(state), config, data, phase, epoch - 1)?;
                    out.rows.push(TrajectoryRow { event: Event::Reset, record: rec });
                }
            }
            let tag = global_epoch as u32;
            order.shuffle(&mut stream_rng(seed, Stream::Shuffle, tag));
            let mut aug_rng = stream_rng(seed, Stream::Augment, tag);
            for (step_in_epoch, chunk) in order.chunks(batch_size).enumerate() {
                let mut x = data.inputs().gather_rows(chunk);
                if phase_spec.augment {
                    x = augment_batch(&x, data.image_shape(), &mut aug_rng)?;
                }
                let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
                let (logits, trace) = model.forward_train(&x)?;
                let (base, mut dlogits) = cross_entropy(&logits, &labels)?;
                let mut terms = LossTerms::new(base);
                match kind {
                    InterventionKind::Spectral => {
                        let lambda = spec.param("lambda");
                        terms.add("spectral", spectral_loss_term(&logits, lambda));
                        add_assign(&mut dlogits, &spectral_logit_gradient(&logits, lambda));
                    }
                    InterventionKind::SelfDistill => {
                        let state = ht.as_ref().expect("self_distill keeps a tortoise");
                        let (teacher, _) = model.arch().forward(&state.tortoise, &state.tortoise_stats, &x, Mode::Train)?;
                        let beta = spec.param("beta");
                        terms.add("distill", self_distill_loss_term(&logits, &teacher, beta)?);
                        add_assign(&mut dlogits, &self_distill_logit_gradient(&logits, &teacher, beta)?);
                    }
                    _ => {}
                }
                let mut grads = model.backward(&trace, &dlogits)?;
                if kind == InterventionKind::Regen {
                    let lambda = spec.param("lambda");
                    terms.add("regen", regen_loss_term(model.params(), model.init_params(), lambda)?);
                    add_regen_gradient(&mut grads, model.params(), model.init_params(), lambda)?;
                }
                if !terms.total.is_finite() {
                    let err = Error::NonFiniteLoss {
                        phase,
                        epoch,
                        step: step_in_epoch,
                    };
                    out.aborted = Some(err.to_string());
                    break 'phases;
                }
                clip_global_norm(&mut grads, config.optim.clip_norm);
                let lr = schedule.lr_at(phase_step);
                if let Err(e) = opt.step(model.params_mut(), &grads, lr) {
                    out.aborted = Some(e.to_string());
                    break 'phases;
                }
                if let Some(state) = ht.as_mut() {
                    state.ema_update(model.params())?;
                    state.ema_update_stats(model.running_stats())?;
                }
                phase_step += 1;
            }
            global_epoch += 1;
            if kind == InterventionKind::Redo && global_epoch.is_multiple_of(spec.param("redo_every") as usize) {
                let mut rng = stream_rng(seed, Stream::Redo, global_epoch as u32);
                let report = redo_recycle(&mut model, redo_batch.inputs(), spec.param("tau"), &mut rng)?;
                opt.clear_moments(&report.touched);
            }
            if epoch % config.eval_every == 0 || epoch == phase_spec.epochs {
                let rec = eval.measure(&model, ht.as_ref(), config, data, phase, epoch)?;
                out.rows.push(TrajectoryRow { event: Event::Epoch, record: rec });
            }
        }
        realizer.finish_phase(&protocol, phase);
    }

    out.final_predict_params = predict_params(spec, &model, ht.as_ref())?.params.clone();
    out.final_params = model.params().clone();
    Ok(out)
}

fn add_assign(a: &mut Tensor2, b: &Tensor2) {
    for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
        *x += y;
    }
}
