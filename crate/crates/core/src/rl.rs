//! Gridworld Q-learning with an EMA target network.
//!
//! The online network is the hare and the target network the tortoise: the
//! target tracks the online weights by EMA, and every `reset_interval`
//! gradient steps the online weights are overwritten with the target's.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interventions::{head_reset, shrink_perturb, HareTortoiseState, ResetClock};
use crate::metrics::argmax;
use crate::nn::{clip_global_norm, Activation, AdamWConfig, AdamWState, Architecture, MlpModel, Mode, Norm, ParamSet, Tensor2};
use crate::rng::{stream_rng, Stream};

pub type Cell = (usize, usize);

pub const NUM_ACTIONS: usize = 4;

/// Row/column offsets of up, right, down, left.
const MOVES: [(isize, isize); NUM_ACTIONS] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relocation {
    pub episode: usize,
    pub goal: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorld {
    pub size: usize,
    pub start: Cell,
    pub goal: Cell,
    pub walls: BTreeSet<Cell>,
    pub step_penalty: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
    /// Moves the goal once, at the start of the given episode.
    pub relocation: Option<Relocation>,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self {
            size: 5,
            start: (0, 0),
            goal: (4, 4),
            walls: BTreeSet::new(),
            step_penalty: -0.01,
            goal_reward: 1.0,
            max_steps: 50,
            relocation: None,
        }
    }
}

impl GridWorld {
    pub fn validate(&self) -> Result<()> {
        let inside = |c: Cell| c.0 < self.size && c.1 < self.size;
        if self.size == 0 || !inside(self.start) || !inside(self.goal) {
            return Err(Error::config("rl.world", "start and goal must lie inside the grid"));
        }
        if self.start == self.goal {
            return Err(Error::config("rl.world", "start and goal must differ"));
        }
        if self.walls.contains(&self.start) || self.walls.contains(&self.goal) {
            return Err(Error::config("rl.world", "start or goal is a wall"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("rl.world.max_steps", "must be >= 1"));
        }
        if !self.step_penalty.is_finite() || !self.goal_reward.is_finite() {
            return Err(Error::config("rl.world", "rewards must be finite"));
        }
        if self.shortest_path(self.goal).is_none() {
            return Err(Error::config("rl.world", "goal unreachable from start"));
        }
        if let Some(r) = &self.relocation {
            if !inside(r.goal) || self.walls.contains(&r.goal) || r.goal == self.start || self.shortest_path(r.goal).is_none() {
                return Err(Error::config("rl.world.relocation", "relocated goal must be a reachable open cell"));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.size * self.size
    }

    pub fn state_index(&self, c: Cell) -> usize {
        c.0 * self.size + c.1
    }

    pub fn cell(&self, s: usize) -> Cell {
        (s / self.size, s % self.size)
    }

    /// Deterministic move; walls and edges leave the agent in place.
    pub fn next_cell(&self, c: Cell, action: usize) -> Cell {
        let (dr, dc) = MOVES[action];
        let (r, col) = (c.0 as isize + dr, c.1 as isize + dc);
        if r < 0 || col < 0 || r as usize >= self.size || col as usize >= self.size {
            return c;
        }
        let n = (r as usize, col as usize);
        if self.walls.contains(&n) {
            c
        } else {
            n
        }
    }

    /// BFS step count from start to `goal`.
    pub fn shortest_path(&self, goal: Cell) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.num_states()];
        let mut q = VecDeque::from([self.start]);
        dist[self.state_index(self.start)] = 0;
        while let Some(c) = q.pop_front() {
            if c == goal {
                return Some(dist[self.state_index(c)]);
            }
            for a in 0..NUM_ACTIONS {
                let n = self.next_cell(c, a);
                if dist[self.state_index(n)] == usize::MAX {
                    dist[self.state_index(n)] = dist[self.state_index(c)] + 1;
                    q.push_back(n);
                }
            }
        }
        None
    }

    /// Return of a shortest path to `goal`: penalties on every step but the
    /// last, which pays the goal reward.
    pub fn optimal_return(&self, goal: Cell) -> Option<f64> {
        let len = self.shortest_path(goal)?;
        (len <= self.max_steps).then_some(self.goal_reward + (len as f64 - 1.0) * self.step_penalty)
    }
}

/// One-hot row for `state`.
pub fn encode_state(world: &GridWorld, state: usize) -> Vec<f64> {
    let mut v = vec![0.0; world.num_states()];
    v[state] = 1.0;
    v
}

/// `(next_state, reward, reached_goal)` for one move.
pub fn env_step(world: &GridWorld, goal: Cell, state: usize, action: usize) -> (usize, f64, bool) {
    let next = world.next_cell(world.cell(state), action);
    if next == goal {
        (world.state_index(next), world.goal_reward, true)
    } else {
        (world.state_index(next), world.step_penalty, false)
    }
}

/// Episode wrapper adding the step limit.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    world: &'a GridWorld,
    goal: Cell,
    state: usize,
    steps: usize,
}

impl<'a> Episode<'a> {
    pub fn new(world: &'a GridWorld, goal: Cell) -> Self {
        Self {
            world,
            goal,
            state: world.state_index(world.start),
            steps: 0,
        }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// `(next_state, reward, terminal, done)`: `terminal` marks the goal,
    /// `done` also covers running out of steps.
    pub fn step(&mut self, action: usize) -> (usize, f64, bool, bool) {
        let (next, reward, terminal) = env_step(self.world, self.goal, self.state, action);
        self.state = next;
        self.steps += 1;
        (next, reward, terminal, terminal || self.steps >= self.world.max_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    /// True only at the goal; running out of steps still bootstraps.
    pub done: bool,
}

fn one_hot_batch(world: &GridWorld, states: impl Iterator<Item = usize>) -> Tensor2 {
    let n = world.num_states();
    let states: Vec<usize> = states.collect();
    let mut t = Tensor2::zeros(states.len(), n);
    for (r, s) in states.into_iter().enumerate() {
        t.set(r, s, 1.0);
    }
    t
}

/// `y = r` for terminal transitions, else `r + γ·max_a Q_target(s', a)`.
pub fn td_targets(world: &GridWorld, batch: &[Transition], arch: &Architecture, target: &ParamSet, stats: &ParamSet, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("td_targets on an empty batch".into()));
    }
    let x = one_hot_batch(world, batch.iter().map(|t| t.next_state));
    let (q, _) = arch.forward(target, stats, &x, Mode::Eval)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                t.reward
            } else {
                let best = q.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                t.reward + gamma * best
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlMethod {
    /// Online ← target every `reset_interval` steps.
    HareTortoise,
    /// Plain EMA-target learner.
    NoReset,
    /// Online head ← its initial values every `reset_interval` steps.
    HeadReset,
    /// Online ← λ·init + (1 − λ)·online every `reset_interval` steps.
    ShrinkPerturb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub method: RlMethod,
    pub hidden_widths: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub momentum: f64,
    /// Gradient steps between resets; `null` never resets.
    pub reset_interval: Option<u64>,
    /// Extra head resets layered on top of `method` (fires before the
    /// online ← target check when both land on the same step).
    pub head_reset_interval: Option<u64>,
    pub shrink: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Share of the episodes over which ε decays linearly.
    pub eps_fraction: f64,
    pub clip_norm: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            method: RlMethod::HareTortoise,
            hidden_widths: vec![64, 64],
            lr: 1e-3,
            gamma: 0.99,
            batch_size: 32,
            replay_capacity: 10_000,
            momentum: 0.995,
            reset_interval: Some(200),
            head_reset_interval: None,
            shrink: 0.8,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.3,
            clip_norm: 10.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(format!("rl.agent.{f}"), m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must be in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("batch_size", "must be >= 1 and fit in the replay buffer");
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("momentum", "must be in [0, 1]");
        }
        if self.reset_interval == Some(0) || self.head_reset_interval == Some(0) {
            return bad("reset_interval", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.shrink) {
            return bad("shrink", "must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_fraction) {
            return bad("eps_start", "exploration settings must be in [0, 1]");
        }
        if self.clip_norm <= 0.0 {
            return bad("clip_norm", "must be > 0");
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize, episodes: usize) -> f64 {
        let decay = (self.eps_fraction * episodes as f64).max(1.0);
        let t = (episode as f64 / decay).min(1.0);
        self.eps_start + t * (self.eps_end - self.eps_start)
    }
}

/// Online network, EMA target, replay and optimizer.
pub struct Agent {
    pub online: MlpModel,
    pub target: HareTortoiseState,
    pub opt: AdamWState,
    pub replay: VecDeque<Transition>,
    pub config: AgentConfig,
    grad_steps: u64,
}

/// What happened during one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateEvents {
    pub loss: f64,
    pub head_reset: bool,
    pub shrink_perturb: bool,
    pub reset: bool,
}

impl Agent {
    pub fn new(world: &GridWorld, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![world.num_states()];
        widths.extend(&config.hidden_widths);
        widths.push(NUM_ACTIONS);
        let head = widths.len() - 1;
        let online = MlpModel::init(&widths, Activation::Relu, Norm::None, head, &mut stream_rng(seed, Stream::Init, 0))?;
        let interval = match config.method {
            RlMethod::HareTortoise => config.reset_interval,
            _ => None,
        };
        let target = HareTortoiseState::for_model(&online, config.momentum, interval, ResetClock::Steps)?;
        let opt = AdamWState::new(
            online.params(),
            AdamWConfig {
                lr: config.lr,
                ..AdamWConfig::default()
            },
        );
        Ok(Self {
            online,
            target,
            opt,
            replay: VecDeque::with_capacity(config.replay_capacity),
            config,
            grad_steps: 0,
        })
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn remember(&mut self, t: Transition) {
        if self.replay.len() == self.config.replay_capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(t);
    }

    pub fn q_values(&self, world: &GridWorld, state: usize) -> Result<Vec<f64>> {
        let x = Tensor2::from_vec(1, world.num_states(), encode_state(world, state))?;
        Ok(self.online.forward_eval(&x)?.0.row(0).to_vec())
    }

    pub fn greedy_action(&self, world: &GridWorld, state: usize) -> Result<usize> {
        Ok(argmax(&self.q_values(world, state)?))
    }

    /// L2 distance between online and target weights.
    pub fn param_dist(&self) -> f64 {
        self.online.params().l2_distance(&self.target.tortoise).unwrap_or(f64::NAN)
    }

    /// Gradient step on the mean squared TD error, target EMA, then the
    /// periodic resets (head reset before online ← target).
    pub fn update(&mut self, world: &GridWorld, batch: &[Transition]) -> Result<UpdateEvents> {
        let arch = self.online.arch().clone();
        let y = td_targets(world, batch, &arch, &self.target.tortoise, &self.target.tortoise_stats, self.config.gamma)?;
        let x = one_hot_batch(world, batch.iter().map(|t| t.state));
        let (q, trace) = self.online.forward_train(&x)?;
        let n = batch.len() as f64;
        let mut dq = Tensor2::zeros(q.rows(), q.cols());
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let err = q.get(i, t.action) - y[i];
            loss += err * err / n;
            dq.set(i, t.action, 2.0 * err / n);
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                phase: 0,
                epoch: 0,
                step: self.grad_steps as usize,
            });
        }
        let mut grads = self.online.backward(&trace, &dq)?;
        clip_global_norm(&mut grads, self.config.clip_norm);
        self.opt.step(self.online.params_mut(), &grads, self.config.lr)?;
        self.target.ema_update(self.online.params())?;
        self.grad_steps += 1;

        let mut ev = UpdateEvents {
            loss,
            ..Default::default()
        };
        let fires = |every: Option<u64>, step: u64| every.is_some_and(|r| step.is_multiple_of(r));
        if fires(self.config.head_reset_interval, self.grad_steps)
            || (self.config.method == RlMethod::HeadReset && fires(self.config.reset_interval, self.grad_steps))
        {
            head_reset(&mut self.online);
            ev.head_reset = true;
        }
        if self.config.method == RlMethod::ShrinkPerturb && fires(self.config.reset_interval, self.grad_steps) {
            let (_, params, init) = self.online.parts_mut();
            shrink_perturb(params, init, self.config.shrink, 0.0, &mut stream_rng(0, Stream::Perturb, 0))?;
            ev.shrink_perturb = true;
        }
        ev.reset = self.target.maybe_reset_model(&mut self.online)?;
        Ok(ev)
    }
}

/// Per-episode results plus every reset event.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    /// Greedy return after the episode; `None` on event rows.
    pub ret: Option<f64>,
    pub param_dist: f64,
    pub event: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct AgentTrace {
    /// Return of a greedy rollout after each training episode.
    pub greedy_returns: Vec<f64>,
    /// Return of each ε-greedy training episode.
    pub train_returns: Vec<f64>,
    pub rows: Vec<TraceRow>,
}

impl AgentTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,return,param_dist,event\n");
        for r in &self.rows {
            let ret = r.ret.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", r.episode, ret, r.param_dist, r.event).unwrap();
        }
        out
    }

    /// Episodes from `from` until the greedy return first reaches
    /// `threshold`; `None` if it never does.
    pub fn episodes_to_reach(&self, from: usize, threshold: f64) -> Option<usize> {
        self.greedy_returns[from.min(self.greedy_returns.len())..]
            .iter()
            .position(|&r| r >= threshold)
    }
}

/// Undiscounted return of the greedy policy, capped at `max_steps`.
pub fn greedy_return(agent: &Agent, world: &GridWorld, goal: Cell) -> Result<f64> {
    let mut ep = Episode::new(world, goal);
    let mut total = 0.0;
    loop {
        let a = agent.greedy_action(world, ep.state())?;
        let (_, r, _, done) = ep.step(a);
        total += r;
        if done {
            return Ok(total);
        }
    }
}

/// Seeded ε-greedy training loop with one update per environment step once
/// the replay holds a full batch.
pub fn train_agent(world: &GridWorld, config: &AgentConfig, episodes: usize, seed: u64) -> Result<AgentTrace> {
    Ok(train_agent_keep(world, config, episodes, seed)?.0)
}

/// [`train_agent`], also handing back the trained agent.
pub fn train_agent_keep(world: &GridWorld, config: &AgentConfig, episodes: usize, seed: u64) -> Result<(AgentTrace, Agent)> {
    world.validate()?;
    let mut agent = Agent::new(world, config.clone(), seed)?;
    let mut explore = stream_rng(seed, Stream::Explore, 0);
    let mut replay_rng = stream_rng(seed, Stream::Replay, 0);
    let mut trace = AgentTrace::default();
    let mut goal = world.goal;
    for episode in 0..episodes {
        if let Some(r) = world.relocation.as_ref().filter(|r| r.episode == episode) {
            goal = r.goal;
            trace.rows.push(TraceRow {
                episode,
                ret: None,
                param_dist: agent.param_dist(),
                event: "relocate",
            });
        }
        let eps = config.epsilon(episode, episodes);
        let mut ep = Episode::new(world, goal);
        let mut ret = 0.0;
        loop {
            let s = ep.state();
            let a = if explore.random_bool(eps) {
                explore.random_range(0..NUM_ACTIONS)
            } else {
                agent.greedy_action(world, s)?
            };
            let (next, r, terminal, done) = ep.step(a);
            ret += r;
            agent.remember(Transition {
                state: s,
                action: a,
                reward: r,
                next_state: next,
                done: terminal,
            });
            if agent.replay.len() >= config.batch_size {
                let idx = index::sample(&mut replay_rng, agent.replay.len(), config.batch_size);
                let batch: Vec<Transition> = idx.iter().map(|i| agent.replay[i]).collect();
                let ev = agent.update(world, &batch)?;
                for (fired, name) in [(ev.head_reset, "head_reset"), (ev.shrink_perturb, "shrink_perturb"), (ev.reset, "reset")] {
                    if fired {
                        trace.rows.push(TraceRow {
                            episode,
                            ret: None,
                            param_dist: agent.param_dist(),
                            event: name,
                        });
                    }
                }
            }
            if done {
                break;
            }
        }
        let g = greedy_return(&agent, world, goal)?;
        trace.train_returns.push(ret);
        trace.greedy_returns.push(g);
        trace.rows.push(TraceRow {
            episode,
            ret: Some(g),
            param_dist: agent.param_dist(),
            event: "episode",
        });
    }
    Ok((trace, agent))
}

/// The `rl` section of a config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlRunConfig {
    pub world: GridWorld,
    pub agent: AgentConfig,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for RlRunConfig {
    fn default() -> Self {
        Self {
            world: GridWorld::default(),
            agent: AgentConfig::default(),
            episodes: 500,
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RlDocument {
    rl: Option<RlRunConfig>,
}

impl RlRunConfig {
    /// Reads `{"rl": {...}}`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: RlDocument = serde_json::from_str(text).map_err(|e| Error::config("rl", e.to_string()))?;
        let cfg = doc.rl.ok_or_else(|| Error::config("rl", "missing `rl` section"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.agent.validate()?;
        if self.episodes == 0 {
            return Err(Error::config("rl.episodes", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("rl.seeds", "need at least one seed"));
        }
        Ok(())
    }

    /// Hash of everything but seeds and output directory.
    pub fn run_id(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_rl_config(path: impl AsRef<Path>) -> Result<RlRunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
    RlRunConfig::from_json_str(&text)
}

/// Trains every seed on its own thread; results in seed order.
pub fn run_rl(cfg: &RlRunConfig) -> Result<Vec<(u64, AgentTrace)>> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|&s| train_agent(&cfg.world, &cfg.agent, cfg.episodes, s).map(|t| (s, t)))
        .collect()
}

/// Writes `rl_{run_id}_seed{seed}.csv` files and returns their paths.
pub fn write_rl_traces(cfg: &RlRunConfig, dir: &Path, traces: &[(u64, AgentTrace)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let id = cfg.run_id();
    traces
        .iter()
        .map(|(seed, t)| {
            let p = dir.join(format!("rl_{id}_seed{seed}.csv"));
            std::fs::write(&p, t.to_csv())?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dynamics() {
        let mut w = GridWorld::default();
        w.walls.insert((0, 1));
        let s = w.state_index((0, 0));
        assert_eq!(env_step(&w, w.goal, s, 1), (s, -0.01, false));
        assert_eq!(env_step(&w, w.goal, s, 0), (s, -0.01, false));
        let near = w.state_index((4, 3));
        assert_eq!(env_step(&w, w.goal, near, 1), (w.state_index((4, 4)), 1.0, true));
        let tiny = GridWorld {
            max_steps: 2,
            ..GridWorld::default()
        };
        let mut ep = Episode::new(&tiny, tiny.goal);
        assert!(!ep.step(0).3);
        let (_, r, terminal, done) = ep.step(0);
        assert!(done && !terminal);
        assert_eq!(r, -0.01);
    }

    #[test]
    fn validation() {
        assert!(GridWorld::default().validate().is_ok());
        let same = GridWorld {
            goal: (0, 0),
            ..GridWorld::default()
        };
        assert!(same.validate().is_err());
        let mut blocked = GridWorld::default();
        blocked.walls.extend([(3, 4), (4, 3)]);
        assert!(blocked.validate().is_err());
    }

    #[test]
    fn shortest_path_return() {
        let w = GridWorld::default();
        assert_eq!(w.shortest_path(w.goal), Some(8));
        assert!((w.optimal_return(w.goal).unwrap() - 0.93).abs() < 1e-12);
    }

    #[test]
    fn td_target_cases() {
        let w = GridWorld::default();
        let arch = Architecture::new(&[25, 4], Activation::Relu, Norm::None, 1).unwrap();
        let mut target = arch.init_params(&mut stream_rng(0, Stream::Init, 0));
        target.fill(0.0);
        // bias 2 on every action makes max Q' = 2
        target.get_mut("l1.bias").unwrap().values_mut().fill(2.0);
        let stats = arch.init_stats();
        let t = |reward, done| Transition {
            state: 0,
            action: 0,
            reward,
            next_state: 1,
            done,
        };
        let y = td_targets(&w, &[t(1.0, true), t(0.0, false)], &arch, &target, &stats, 0.99).unwrap();
        assert_eq!(y[0], 1.0);
        assert!((y[1] - 1.98).abs() < 1e-12);
        let y0 = td_targets(&w, &[t(-0.5, false)], &arch, &target, &stats, 0.0).unwrap();
        assert_eq!(y0, vec![-0.5]);
        assert!(td_targets(&w, &[], &arch, &target, &stats, 0.9).is_err());
    }

    #[test]
    fn reset_makes_online_equal_target() {
        let w = GridWorld::default();
        let cfg = AgentConfig {
            reset_interval: Some(3),
            ..AgentConfig::default()
        };
        let mut agent = Agent::new(&w, cfg, 1).unwrap();
        let batch: Vec<Transition> = (0..32)
            .map(|i| Transition {
                state: i % 25,
                action: i % 4,
                reward: -0.01,
                next_state: (i + 1) % 25,
                done: false,
            })
            .collect();
        for _ in 0..9 {
            let ev = agent.update(&w, &batch).unwrap();
            assert_eq!(ev.reset, agent.grad_steps() % 3 == 1);
            if ev.reset {
                assert_eq!(agent.param_dist(), 0.0);
            }
        }
    }

    #[test]
    fn rl_section_parsing() {
        let c = RlRunConfig::from_json_str(r#"{"rl": {"episodes": 20, "agent": {"method": "no_reset"}}}"#).unwrap();
        assert_eq!(c.agent.method, RlMethod::NoReset);
        assert_eq!(c.world.size, 5);
        assert!(RlRunConfig::from_json_str(r#"{"dataset": {}}"#).is_err());
        assert!(RlRunConfig::from_json_str(r#"{"rl": {"agent": {"lr": -1}}}"#).is_err());
        assert!(RlRunConfig::from_json_str(r#"{"rl": {"agent": {"bogus": 1}}}"#).is_err());
    }

    #[test]
    fn csv_has_reset_rows_at_zero_distance() {
        let cfg = AgentConfig {
            reset_interval: Some(50),
            ..AgentConfig::default()
        };
        let t = train_agent(&GridWorld::default(), &cfg, 10, 3).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("episode,return,param_dist,event\n"));
        let resets: Vec<&TraceRow> = t.rows.iter().filter(|r| r.event == "reset").collect();
        assert!(!resets.is_empty());
        assert!(resets.iter().all(|r| r.param_dist == 0.0 && r.ret.is_none()));
        assert_eq!(t.greedy_returns.len(), 10);
    }

    #[test]
    fn epsilon_schedule() {
        let c = AgentConfig::default();
        assert_eq!(c.epsilon(0, 100), 1.0);
        assert!((c.epsilon(15, 100) - 0.525).abs() < 1e-12);
        assert!((c.epsilon(30, 100) - 0.05).abs() < 1e-12);
        assert!((c.epsilon(99, 100) - 0.05).abs() < 1e-12);
    }
}
