//! Phase schedules (fresh, warm-start, continual) and their realization
//! into per-phase training sets.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::transforms::{inject_label_noise_with_indices, sample_subset_indices};
use super::Dataset;
use crate::error::{Error, Result};
use crate::interventions::InterventionKind;
use crate::rng::{stream_rng, Stream};

/// Label noise of the first continual phase; it decays linearly to 0.
pub const CONTINUAL_MAX_NOISE: f64 = 0.5;

/// Sub-index of the subset stream reserved for the continual chunk split.
const CHUNK_SPLIT_SUB: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// One clean phase on the full dataset.
    Fresh,
    WarmStart,
    Continual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferPolicy {
    /// Full access: phase `i` sees chunks `0..=i`.
    None,
    /// Phase `i` sees chunk `i` plus a FIFO buffer of earlier examples.
    Limited(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub subset_ratio: f64,
    pub noise_ratio: f64,
    pub epochs: usize,
    pub augment: bool,
    pub chunk_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryAction {
    pub intervention: Option<InterventionKind>,
    pub reset_optimizer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    pub phases: Vec<PhaseSpec>,
    pub buffer: BufferPolicy,
    /// One entry per boundary, i.e. `phases.len() - 1` of them.
    pub boundary_actions: Vec<BoundaryAction>,
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            ProtocolKind::Fresh => Some(1),
            ProtocolKind::WarmStart => Some(2),
            ProtocolKind::Continual => None,
        };
        if want.is_some_and(|w| w != self.phases.len()) || self.phases.is_empty() {
            return Err(Error::config("protocol", format!("{:?} with {} phases", self.kind, self.phases.len())));
        }
        if self.boundary_actions.len() + 1 != self.phases.len() {
            return Err(Error::config("protocol.boundary_actions", "need one action per boundary"));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.epochs == 0 {
                return Err(Error::config(format!("protocol.phases[{i}].epochs"), "must be >= 1"));
            }
            if !(p.subset_ratio > 0.0 && p.subset_ratio <= 1.0) {
                return Err(Error::config(format!("protocol.phases[{i}].subset_ratio"), "outside (0, 1]"));
            }
            if !(0.0..=1.0).contains(&p.noise_ratio) {
                return Err(Error::config(format!("protocol.phases[{i}].noise_ratio"), "outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Attaches a parameter-space intervention to every boundary.
    pub fn with_boundary_intervention(mut self, kind: InterventionKind) -> Self {
        for a in &mut self.boundary_actions {
            a.intervention = Some(kind);
        }
        self
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    fn num_chunks(&self) -> usize {
        self.phases.iter().filter_map(|p| p.chunk_index).max().map_or(0, |m| m + 1)
    }
}

/// `floor(base / ratio)`, guarded against ratios like 0.1 that are not exact
/// in binary.
pub fn epochs_for_subset(base_epochs: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("subset ratio {ratio} outside (0, 1]")));
    }
    Ok((base_epochs as f64 / ratio + 1e-9).floor() as usize)
}

fn reset_only(boundaries: usize) -> Vec<BoundaryAction> {
    vec![
        BoundaryAction {
            intervention: None,
            reset_optimizer: true
        };
        boundaries
    ]
}

pub fn build_fresh_protocol(base_epochs: usize, augment: bool) -> Result<ProtocolSpec> {
    let p = ProtocolSpec {
        kind: ProtocolKind::Fresh,
        phases: vec![PhaseSpec {
            subset_ratio: 1.0,
            noise_ratio: 0.0,
            epochs: base_epochs,
            augment,
            chunk_index: None,
        }],
        buffer: BufferPolicy::None,
        boundary_actions: Vec::new(),
    };
    p.validate()?;
    Ok(p)
}

/// Noisy subset for `epochs_for_subset` epochs, then the full clean data for
/// `base_epochs`, with an optimizer reset in between.
pub fn build_warm_start_protocol(subset_ratio: f64, noise_ratio: f64, base_epochs: usize, augment: bool) -> Result<ProtocolSpec> {
    let p = ProtocolSpec {
        kind: ProtocolKind::WarmStart,
        phases: vec![
            PhaseSpec {
                subset_ratio,
                noise_ratio,
                epochs: epochs_for_subset(base_epochs, subset_ratio)?,
                augment,
                chunk_index: None,
            },
            PhaseSpec {
                subset_ratio: 1.0,
                noise_ratio: 0.0,
                epochs: base_epochs,
                augment,
                chunk_index: None,
            },
        ],
        buffer: BufferPolicy::None,
        boundary_actions: reset_only(1),
    };
    p.validate()?;
    Ok(p)
}

/// `num_chunks` phases over disjoint chunks, noise decaying linearly from
/// 0.5 to 0.
pub fn build_continual_protocol(num_chunks: usize, epochs_per_phase: usize, buffer: BufferPolicy, augment: bool) -> Result<ProtocolSpec> {
    if num_chunks < 2 {
        return Err(Error::InvalidArgument("continual protocol needs at least 2 chunks".into()));
    }
    let last = (num_chunks - 1) as f64;
    let phases = (0..num_chunks)
        .map(|i| PhaseSpec {
            subset_ratio: 1.0,
            noise_ratio: CONTINUAL_MAX_NOISE * (1.0 - i as f64 / last),
            epochs: epochs_per_phase,
            augment,
            chunk_index: Some(i),
        })
        .collect();
    let p = ProtocolSpec {
        kind: ProtocolKind::Continual,
        phases,
        buffer,
        boundary_actions: reset_only(num_chunks - 1),
    };
    p.validate()?;
    Ok(p)
}

/// FIFO window over dataset indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayBufferView {
    capacity: usize,
    held: VecDeque<usize>,
}

impl ReplayBufferView {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            held: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.held.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held.is_empty()
    }

    /// Oldest first.
    pub fn indices(&self) -> Vec<usize> {
        self.held.iter().copied().collect()
    }

    /// Appends in order, evicting the oldest entries past capacity.
    pub fn update(&mut self, finished: &[usize]) {
        for &i in finished {
            if self.capacity == 0 {
                return;
            }
            if self.held.len() == self.capacity {
                self.held.pop_front();
            }
            self.held.push_back(i);
        }
    }
}

/// Training set of one phase.
#[derive(Debug, Clone)]
pub struct PhaseData {
    pub dataset: Dataset,
    /// Row `k` of `dataset` is row `source_indices[k]` of the full training set.
    pub source_indices: Vec<usize>,
    /// Positions within `dataset` whose labels were redrawn.
    pub noisy_positions: Vec<usize>,
}

/// Per-run cursor that turns a protocol into concrete phase datasets.
#[derive(Debug, Clone)]
pub struct ProtocolRealizer {
    seed: u64,
    chunks: Vec<Vec<usize>>,
    buffer: Option<ReplayBufferView>,
}

impl ProtocolRealizer {
    pub fn new(protocol: &ProtocolSpec, n_train: usize, seed: u64) -> Self {
        let num_chunks = protocol.num_chunks();
        let chunks = if num_chunks > 0 {
            let mut perm: Vec<usize> = (0..n_train).collect();
            perm.shuffle(&mut stream_rng(seed, Stream::Subset, CHUNK_SPLIT_SUB));
            let base = n_train / num_chunks;
            let extra = n_train % num_chunks;
            let mut start = 0;
            (0..num_chunks)
                .map(|c| {
                    let len = base + usize::from(c < extra);
                    let mut chunk = perm[start..start + len].to_vec();
                    start += len;
                    chunk.sort_unstable();
                    chunk
                })
                .collect()
        } else {
            Vec::new()
        };
        let buffer = match protocol.buffer {
            BufferPolicy::Limited(size) => Some(ReplayBufferView::new(size)),
            BufferPolicy::None => None,
        };
        Self { seed, chunks, buffer }
    }

    pub fn chunks(&self) -> &[Vec<usize>] {
        &self.chunks
    }

    pub fn buffer(&self) -> Option<&ReplayBufferView> {
        self.buffer.as_ref()
    }

    /// Training set for `phase`. Subset selection and label noise draw from
    /// separate streams keyed by the phase number.
    pub fn phase_data(&self, protocol: &ProtocolSpec, phase: usize, train: &Dataset) -> Result<PhaseData> {
        let spec = protocol
            .phases
            .get(phase)
            .ok_or_else(|| Error::InvalidArgument(format!("phase {phase} out of range")))?;
        let sub = phase as u32;
        let mut source: Vec<usize> = match spec.chunk_index {
            Some(c) => {
                let chunk = self.chunks.get(c).ok_or_else(|| Error::InvalidArgument(format!("chunk {c} out of range")))?;
                match &self.buffer {
                    None => self.chunks[..=c].concat(),
                    Some(buf) => {
                        let mut s = chunk.clone();
                        s.extend(buf.indices());
                        s
                    }
                }
            }
            None => (0..train.len()).collect(),
        };
        if spec.subset_ratio < 1.0 {
            let keep = sample_subset_indices(source.len(), spec.subset_ratio, &mut stream_rng(self.seed, Stream::Subset, sub))?;
            source = keep.into_iter().map(|k| source[k]).collect();
        }
        let clean = train.select(&source);
        let (dataset, noisy_positions) =
            inject_label_noise_with_indices(&clean, spec.noise_ratio, &mut stream_rng(self.seed, Stream::Noise, sub))?;
        Ok(PhaseData {
            dataset,
            source_indices: source,
            noisy_positions,
        })
    }

    /// Feeds the finished phase's chunk into the replay buffer.
    pub fn finish_phase(&mut self, protocol: &ProtocolSpec, phase: usize) {
        if let (Some(buf), Some(c)) = (self.buffer.as_mut(), protocol.phases.get(phase).and_then(|p| p.chunk_index)) {
            if let Some(chunk) = self.chunks.get(c) {
                buf.update(chunk);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor2;

    fn toy(n: usize) -> Dataset {
        let x = Tensor2::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(x, (0..n).map(|i| i % 10).collect(), 10, None).unwrap()
    }

    #[test]
    fn epoch_scaling() {
        assert_eq!(epochs_for_subset(100, 0.1).unwrap(), 1000);
        assert_eq!(epochs_for_subset(100, 0.2).unwrap(), 500);
        assert_eq!(epochs_for_subset(100, 0.4).unwrap(), 250);
        assert_eq!(epochs_for_subset(100, 0.6).unwrap(), 166);
        assert_eq!(epochs_for_subset(100, 0.8).unwrap(), 125);
        assert_eq!(epochs_for_subset(100, 1.0).unwrap(), 100);
    }

    #[test]
    fn warm_start_shape() {
        let p = build_warm_start_protocol(0.1, 0.5, 100, false).unwrap();
        let got: Vec<_> = p.phases.iter().map(|s| (s.subset_ratio, s.noise_ratio, s.epochs)).collect();
        assert_eq!(got, vec![(0.1, 0.5, 1000), (1.0, 0.0, 100)]);
        assert!(p.boundary_actions[0].reset_optimizer);
        let d = build_warm_start_protocol(1.0, 0.0, 100, false).unwrap();
        assert_eq!(d.phases[0], d.phases[1]);
    }

    #[test]
    fn continual_noise_schedule() {
        let p = build_continual_protocol(10, 5, BufferPolicy::None, false).unwrap();
        let noise: Vec<f64> = p.phases.iter().map(|s| s.noise_ratio).collect();
        assert_eq!(noise[0], 0.5);
        assert!((noise[1] - 0.5 * 8.0 / 9.0).abs() < 1e-15);
        assert!((noise[8] - 0.5 / 9.0).abs() < 1e-15);
        assert_eq!(noise[9], 0.0);
        assert_eq!(p.boundary_actions.len(), 9);
        assert!(build_continual_protocol(1, 5, BufferPolicy::None, false).is_err());
    }

    #[test]
    fn continual_full_access_accumulates() {
        let train = toy(1003);
        let p = build_continual_protocol(10, 1, BufferPolicy::None, false).unwrap();
        let r = ProtocolRealizer::new(&p, train.len(), 3);
        let mut all: Vec<usize> = r.chunks().concat();
        all.sort_unstable();
        assert_eq!(all, (0..1003).collect::<Vec<_>>());
        let last = r.phase_data(&p, 9, &train).unwrap();
        assert_eq!(last.dataset.len(), 1003);
        assert_eq!(r.phase_data(&p, 0, &train).unwrap().dataset.len(), r.chunks()[0].len());
    }

    #[test]
    fn continual_limited_access_uses_buffer() {
        let train = toy(2000);
        let p = build_continual_protocol(10, 1, BufferPolicy::Limited(300), false).unwrap();
        let mut r = ProtocolRealizer::new(&p, train.len(), 3);
        for phase in 0..10 {
            let d = r.phase_data(&p, phase, &train).unwrap();
            assert!(d.dataset.len() <= 200 + 300);
            assert_eq!(d.dataset.len(), 200 + (200 * phase).min(300));
            r.finish_phase(&p, phase);
        }
    }

    #[test]
    fn buffer_fifo() {
        let mut b = ReplayBufferView::new(5000);
        b.update(&(0..6000).collect::<Vec<_>>());
        assert_eq!(b.indices(), (1000..6000).collect::<Vec<_>>());
        let mut small = ReplayBufferView::new(10);
        small.update(&[4, 2, 7]);
        assert_eq!(small.indices(), vec![4, 2, 7]);
    }

    #[test]
    fn warm_start_phase_two_is_full_and_clean() {
        let train = toy(500);
        let p = build_warm_start_protocol(0.1, 0.5, 1, false).unwrap();
        let r = ProtocolRealizer::new(&p, train.len(), 9);
        let first = r.phase_data(&p, 0, &train).unwrap();
        assert_eq!(first.dataset.len(), 50);
        assert_eq!(first.noisy_positions.len(), 25);
        let second = r.phase_data(&p, 1, &train).unwrap();
        assert_eq!(second.dataset, train);
    }
}
