//! Checks shared by the focused test files and the acceptance harness.
#![allow(dead_code)]

use plab_core::data::{Dataset, ProtocolRealizer};
use plab_core::interventions::*;
use plab_core::metrics;
use plab_core::nn::*;
use plab_core::rng::{stream_rng, Stream};
use plab_core::rl::{env_step, Episode, GridWorld, NUM_ACTIONS};
use plab_core::runner::RunConfig;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor2 {
    let v = (0..rows * cols).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    Tensor2::from_vec(rows, cols, v).unwrap()
}

/// Relative agreement with an absolute floor for gradients that are
/// numerically zero.
pub fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= rel * analytic.abs().max(numeric.abs()) || err <= 1e-9
}

// ---------------------------------------------------------------------------
// finite differences

pub struct Instance {
    pub arch: Architecture,
    pub params: ParamSet,
    pub init: ParamSet,
    pub stats: ParamSet,
    pub x: Tensor2,
    pub labels: Vec<usize>,
    pub teacher: Tensor2,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let d = r.random_range(2..6);
    let hidden = r.random_range(1..3);
    let mut widths = vec![d];
    widths.extend((0..hidden).map(|_| r.random_range(2..7)));
    let classes = r.random_range(2..5);
    widths.push(classes);
    let act = if r.random_bool(0.5) { Activation::Relu } else { Activation::Crelu };
    let norm = if r.random_bool(0.5) { Norm::Batchnorm } else { Norm::None };
    let head_start = r.random_range(1..=hidden + 1);
    let arch = Architecture::new(&widths, act, norm, head_start).unwrap();
    let mut params = arch.init_params(&mut r);
    // move norm scale/shift and biases off their trivial init values
    for (name, t) in params.iter_mut() {
        if !name.ends_with("weight") {
            for v in t.values_mut() {
                *v += 0.3 * r.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let init = arch.init_params(&mut r);
    let stats = arch.init_stats();
    let batch = r.random_range(3..7);
    let x = gaussian(&mut r, batch, d);
    let labels = (0..batch).map(|_| r.random_range(0..classes)).collect();
    let teacher = gaussian(&mut r, batch, classes);
    Instance {
        arch,
        params,
        init,
        stats,
        x,
        labels,
        teacher,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    CrossEntropy,
    Regen,
    Spectral,
    Distill,
}

pub const TERMS: [Term; 4] = [Term::CrossEntropy, Term::Regen, Term::Spectral, Term::Distill];

const LAMBDA: f64 = 0.37;

fn loss_of(inst: &Instance, params: &ParamSet, term: Term) -> f64 {
    let (logits, _) = inst.arch.forward(params, &inst.stats, &inst.x, Mode::Train).unwrap();
    match term {
        Term::CrossEntropy => cross_entropy(&logits, &inst.labels).unwrap().0,
        Term::Regen => regen_loss_term(params, &inst.init, LAMBDA).unwrap(),
        Term::Spectral => spectral_loss_term(&logits, LAMBDA),
        Term::Distill => self_distill_loss_term(&logits, &inst.teacher, LAMBDA).unwrap(),
    }
}

fn analytic(inst: &Instance, term: Term) -> ParamSet {
    let (logits, trace) = inst.arch.forward(&inst.params, &inst.stats, &inst.x, Mode::Train).unwrap();
    let dlogits = match term {
        Term::CrossEntropy => cross_entropy(&logits, &inst.labels).unwrap().1,
        Term::Regen => Tensor2::zeros(logits.rows(), logits.cols()),
        Term::Spectral => spectral_logit_gradient(&logits, LAMBDA),
        Term::Distill => self_distill_logit_gradient(&logits, &inst.teacher, LAMBDA).unwrap(),
    };
    let mut g = inst.arch.backward(&inst.params, &trace, &dlogits).unwrap();
    if term == Term::Regen {
        add_regen_gradient(&mut g, &inst.params, &inst.init, LAMBDA).unwrap();
    }
    g
}

/// Central differences on every parameter entry; returns the number of
/// entries compared or the first disagreement.
pub fn finite_difference_check(inst: &Instance, term: Term, rel: f64) -> Result<usize, String> {
    let g = analytic(inst, term);
    let h = 1e-5;
    let mut checked = 0;
    for k in 0..inst.params.len() {
        for j in 0..inst.params.at(k).len() {
            let mut p = inst.params.clone();
            let base = p.at(k).values()[j];
            p.at_mut(k).values_mut()[j] = base + h;
            let up = loss_of(inst, &p, term);
            p.at_mut(k).values_mut()[j] = base - h;
            let down = loss_of(inst, &p, term);
            let numeric = (up - down) / (2.0 * h);
            let a = g.at(k).values()[j];
            if !close(a, numeric, rel) {
                let name = inst.params.names().nth(k).unwrap().to_string();
                return Err(format!("{term:?} {name}[{j}]: analytic {a:e} vs numeric {numeric:e}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// `instances` random architectures per loss term.
pub fn gradient_suite(instances: u64, rel: f64) -> Result<usize, String> {
    let mut total = 0;
    for term in TERMS {
        for i in 0..instances {
            let inst = random_instance(1000 + i);
            total += finite_difference_check(&inst, term, rel).map_err(|e| format!("instance {i}: {e}"))?;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// srank oracle

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Singular values from the eigenvalues of the smaller Gram matrix.
pub fn oracle_singular_values(m: &Tensor2) -> Vec<f64> {
    let (r, c) = m.shape();
    let small = r.min(c);
    let mut gram = vec![vec![0.0; small]; small];
    for i in 0..small {
        for j in 0..small {
            gram[i][j] = if c <= r {
                (0..r).map(|k| m.get(k, i) * m.get(k, j)).sum()
            } else {
                (0..c).map(|k| m.get(i, k) * m.get(j, k)).sum()
            };
        }
    }
    let mut sv: Vec<f64> = jacobi_eigenvalues(gram).into_iter().map(|e| e.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn oracle_srank(sv: &[f64], delta: f64) -> usize {
    let total: f64 = sv.iter().sum();
    let mut acc = 0.0;
    for (k, s) in sv.iter().enumerate() {
        acc += s;
        if acc >= (1.0 - delta) * total {
            return k + 1;
        }
    }
    sv.len()
}

/// Gaussian, low-rank and column-scaled matrices up to 64×64.
pub fn random_matrix(seed: u64) -> Tensor2 {
    let mut r = rng(seed);
    let rows = r.random_range(1..=64);
    let cols = r.random_range(1..=64);
    match seed % 3 {
        0 => gaussian(&mut r, rows, cols),
        1 => {
            let k = r.random_range(1..=rows.min(cols));
            gaussian(&mut r, rows, k).matmul(&gaussian(&mut r, k, cols)).unwrap()
        }
        _ => {
            let mut m = gaussian(&mut r, rows, cols);
            let scales: Vec<f64> = (0..cols).map(|j| 0.5f64.powi(j as i32 % 12)).collect();
            for i in 0..rows {
                for (j, s) in scales.iter().enumerate() {
                    m.set(i, j, m.get(i, j) * s);
                }
            }
            m
        }
    }
}

/// Returns how many matrices were compared or the first mismatch. A case
/// whose cumulative mass sits within 1e-9 of the threshold is ambiguous in
/// floating point and must still agree to within one.
pub fn srank_suite(n: u64) -> Result<usize, String> {
    for i in 0..n {
        let m = random_matrix(i);
        let ours = metrics::srank(&m, metrics::SRANK_DELTA).map_err(|e| e.to_string())?;
        let sv = oracle_singular_values(&m);
        let want = oracle_srank(&sv, metrics::SRANK_DELTA);
        let svd = metrics::singular_values(&m);
        let top = sv[0];
        for (a, b) in svd.iter().zip(&sv) {
            if (a - b).abs() > 1e-6 * top {
                return Err(format!("matrix {i} {:?}: singular value {a} vs oracle {b}", m.shape()));
            }
        }
        if ours != want {
            return Err(format!("matrix {i} {:?}: srank {ours} vs oracle {want}", m.shape()));
        }
    }
    Ok(n as usize)
}

// ---------------------------------------------------------------------------
// EMA / reset algebra

pub fn random_params(seed: u64) -> ParamSet {
    let arch = Architecture::new(&[4, 6, 3], Activation::Relu, Norm::Batchnorm, 2).unwrap();
    let mut p = arch.init_params(&mut rng(seed));
    for t in p.tensors_mut() {
        for v in t.values_mut() {
            *v += 0.1;
        }
    }
    p
}

pub fn ema_algebra_suite(cases: u64) -> Result<(), String> {
    let empty = ParamSet::new();
    for c in 0..cases {
        let hare0 = random_params(2 * c);
        let other = random_params(2 * c + 1);
        // µ = 1: tortoise never moves
        let mut s = HareTortoiseState::new(&other, &empty, 1.0, None, ResetClock::Steps).map_err(|e| e.to_string())?;
        s.ema_update(&hare0).unwrap();
        if !s.tortoise.bitwise_eq(&other) {
            return Err("µ=1 moved the tortoise".into());
        }
        // µ = 0: tortoise becomes the hare
        let mut s = HareTortoiseState::new(&other, &empty, 0.0, None, ResetClock::Steps).unwrap();
        s.ema_update(&hare0).unwrap();
        if !s.tortoise.bitwise_eq(&hare0) {
            return Err("µ=0 did not copy the hare".into());
        }
        // drift bound: ‖θt' − θh‖ ≤ µ‖θt − θh‖
        for mu in [0.5, 0.9, 0.999] {
            let mut s = HareTortoiseState::new(&other, &empty, mu, None, ResetClock::Steps).unwrap();
            let before = s.tortoise.l2_distance(&hare0).unwrap();
            s.ema_update(&hare0).unwrap();
            let after = s.tortoise.l2_distance(&hare0).unwrap();
            if after > mu * before * (1.0 + 1e-12) + 1e-15 {
                return Err(format!("drift bound broken at µ={mu}: {after} > {mu}·{before}"));
            }
        }
        // post-reset equality, on the schedule
        let mut hare = hare0.clone();
        let mut s = HareTortoiseState::new(&other, &empty, 0.9, Some(3), ResetClock::Steps).unwrap();
        for step in 0..9u64 {
            for t in hare.tensors_mut() {
                for v in t.values_mut() {
                    *v += 0.01 * (step as f64 + 1.0);
                }
            }
            s.ema_update(&hare).unwrap();
            let fired = s.maybe_reset(&mut hare).unwrap();
            if fired != (step % 3 == 0) {
                return Err(format!("reset fired={fired} at call {step}"));
            }
            if fired && (!hare.bitwise_eq(&s.tortoise) || hare.max_abs_diff(&s.tortoise).unwrap() != 0.0) {
                return Err("hare differs from tortoise right after a reset".into());
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// plain training loop (no interventions)

/// Final parameters of a straightforward loop over the protocol's phases
/// for `kind = none`, without any metric evaluation.
pub fn plain_loop_params(config: &RunConfig, seed: u64, train: &Dataset) -> ParamSet {
    let arch = config.architecture().unwrap();
    let protocol = config.protocol_spec().unwrap();
    let mut model = MlpModel::from_arch(arch, &mut stream_rng(seed, Stream::Init, 0));
    let mut opt = AdamWState::new(model.params(), config.adamw());
    let mut realizer = ProtocolRealizer::new(&protocol, train.len(), seed);
    let bs = config.optim.batch_size;
    let mut global_epoch = 0u32;
    for (phase, spec) in protocol.phases.iter().enumerate() {
        if phase > 0 {
            opt.reset();
        }
        let data = realizer.phase_data(&protocol, phase, train).unwrap().dataset;
        let steps = data.len().div_ceil(bs);
        let schedule = LrSchedule::new(config.optim.lr, config.optim.warmup_ratio, spec.epochs * steps);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0;
        for _ in 0..spec.epochs {
            order.shuffle(&mut stream_rng(seed, Stream::Shuffle, global_epoch));
            for chunk in order.chunks(bs) {
                let x = data.inputs().gather_rows(chunk);
                let y: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
                let (logits, trace) = model.forward_train(&x).unwrap();
                let (_, dl) = cross_entropy(&logits, &y).unwrap();
                let mut g = model.backward(&trace, &dl).unwrap();
                clip_global_norm(&mut g, config.optim.clip_norm);
                opt.step(model.params_mut(), &g, schedule.lr_at(step)).unwrap();
                step += 1;
            }
            global_epoch += 1;
        }
        realizer.finish_phase(&protocol, phase);
    }
    model.params().clone()
}

pub fn tiny_config(protocol: &str, norm: &str) -> RunConfig {
    RunConfig::from_json_str(&format!(
        r#"{{"dataset": {{"kind": "synthetic", "n_train": 120, "n_test": 60, "dims": 6, "classes": 3, "difficulty": 0.4}},
            "arch": {{"hidden_widths": [12, 8], "norm": "{norm}"}},
            "optim": {{"batch_size": 32}},
            "protocol": {protocol},
            "seeds": [0], "eval_every": 1, "probe_size": 32}}"#
    ))
    .unwrap()
}

// ---------------------------------------------------------------------------
// gridworld oracle

/// Optimal Q-table by value iteration on the exact dynamics.
pub fn value_iteration(world: &GridWorld, gamma: f64) -> Vec<[f64; NUM_ACTIONS]> {
    let n = world.num_states();
    let mut q = vec![[0.0; NUM_ACTIONS]; n];
    for _ in 0..10_000 {
        let mut delta: f64 = 0.0;
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        for s in 0..n {
            if world.cell(s) == world.goal || world.walls.contains(&world.cell(s)) {
                continue;
            }
            for a in 0..NUM_ACTIONS {
                let (next, r, terminal) = env_step(world, world.goal, s, a);
                let target = if terminal { r } else { r + gamma * v[next] };
                delta = delta.max((target - q[s][a]).abs());
                q[s][a] = target;
            }
        }
        if delta < 1e-13 {
            break;
        }
    }
    q
}

pub fn optimal_actions(row: &[f64; NUM_ACTIONS]) -> Vec<usize> {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..NUM_ACTIONS).filter(|&a| row[a] >= best - 1e-9).collect()
}

pub fn oracle_return(world: &GridWorld, q: &[[f64; NUM_ACTIONS]]) -> f64 {
    let mut ep = Episode::new(world, world.goal);
    let mut total = 0.0;
    loop {
        let a = optimal_actions(&q[ep.state()])[0];
        let (_, r, _, done) = ep.step(a);
        total += r;
        if done {
            return total;
        }
    }
}
