//! Grid sweeps over config fields.

use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use super::config::RunConfig;
use super::report::{summarize, summary_csv, write_trajectory, CsvRow, SummaryRow};
use super::train::{run_single, RunOutput};
use crate::error::{Error, Result};

/// Short names accepted in place of full dotted paths.
pub const GRID_ALIASES: [(&str, &str); 12] = [
    ("subset", "protocol.subset_ratio"),
    ("noise", "protocol.noise_ratio"),
    ("momentum", "intervention.params.momentum"),
    ("reset_interval", "intervention.params.reset_interval"),
    ("beta1", "optim.beta1"),
    ("beta2", "optim.beta2"),
    ("eps", "optim.eps"),
    ("lr", "optim.lr"),
    ("weight_decay", "optim.weight_decay"),
    ("batch_size", "optim.batch_size"),
    ("intervention", "intervention.kind"),
    ("epochs", "protocol.base_epochs"),
];

pub fn resolve_alias(key: &str) -> &str {
    GRID_ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, p)| p)
}

/// Parses `key=v1,v2,...`; values are JSON where possible, else strings.
/// A right-hand side that is itself a JSON array is taken as the value list,
/// so `seeds=[[0,1],[2]]` works.
pub fn parse_grid_arg(arg: &str) -> Result<(String, Vec<Value>)> {
    let (key, values) = arg
        .split_once('=')
        .ok_or_else(|| Error::config("grid", format!("`{arg}` is not key=v1,v2,...")))?;
    if let Ok(Value::Array(list)) = serde_json::from_str::<Value>(values) {
        if !list.is_empty() {
            return Ok((resolve_alias(key.trim()).to_string(), list));
        }
    }
    let values: Vec<Value> = values
        .split(',')
        .filter(|v| !v.is_empty())
        .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
        .collect();
    if values.is_empty() {
        return Err(Error::config("grid", format!("`{key}` has no values")));
    }
    Ok((resolve_alias(key.trim()).to_string(), values))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        // free-form maps accept new keys
        let open_map = i > 0 && parts[i - 1] == "params";
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(path, format!("`{part}` is not inside an object")))?;
        if !obj.contains_key(*part) {
            if last && open_map {
                obj.insert(part.to_string(), Value::Null);
            } else {
                return Err(Error::config(path, "no such config field"));
            }
        }
        let next = obj.get_mut(*part).expect("present");
        if last {
            *next = value;
            return Ok(());
        }
        cur = next;
    }
    unreachable!("non-empty path")
}

/// One point of the grid.
pub type Assignment = Vec<(String, Value)>;

/// Cartesian product of the grid applied to `base`, validated up front.
pub fn expand_grid(base: &RunConfig, grid: &[(String, Vec<Value>)]) -> Result<Vec<(Assignment, RunConfig)>> {
    let mut points: Vec<Assignment> = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    let base_value = serde_json::to_value(base)?;
    points
        .into_iter()
        .map(|assignment| {
            let mut v = base_value.clone();
            for (k, val) in &assignment {
                set_path(&mut v, k, val.clone())?;
            }
            let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::config("grid", e.to_string()))?;
            Ok((assignment, cfg.validated()?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub assignment: Assignment,
    pub config: RunConfig,
    pub run_id: String,
    /// One per seed, in config order.
    pub outputs: Vec<RunOutput>,
    pub summary: SummaryRow,
}

impl RunResult {
    pub fn trajectories(&self) -> Vec<Vec<CsvRow>> {
        self.outputs.iter().map(RunOutput::csv_rows).collect()
    }
}

pub fn assignment_label(a: &Assignment) -> String {
    if a.is_empty() {
        return "base".into();
    }
    a.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// Runs every (configuration, seed) pair on a pool of `workers` threads.
pub fn run_sweep(base: &RunConfig, grid: &[(String, Vec<Value>)], workers: usize) -> Result<Vec<RunResult>> {
    let configs = expand_grid(base, grid)?;
    let jobs: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, (_, c))| c.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let results: Vec<Result<RunOutput>> = pool.install(|| jobs.par_iter().map(|&(i, s)| run_single(&configs[i].1, s)).collect());
    let mut outputs: Vec<Vec<RunOutput>> = vec![Vec::new(); configs.len()];
    for (&(i, _), r) in jobs.iter().zip(results) {
        outputs[i].push(r?);
    }
    Ok(configs
        .into_iter()
        .zip(outputs)
        .map(|((assignment, config), outputs)| {
            let trajectories: Vec<Vec<CsvRow>> = outputs.iter().map(RunOutput::csv_rows).collect();
            let summary = summarize(&trajectories).into_iter().next().unwrap_or_else(|| SummaryRow {
                run_id: config.run_id(),
                n_seeds: 0,
                single_seed: false,
                stats: Vec::new(),
            });
            RunResult {
                run_id: config.run_id(),
                assignment,
                config,
                outputs,
                summary,
            }
        })
        .collect())
}

/// Writes trajectories, per-config JSON and `summary.csv` under `dir`.
pub fn write_results(dir: &Path, results: &[RunResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in results {
        for o in &r.outputs {
            write_trajectory(dir, o)?;
        }
        std::fs::write(dir.join(format!("{}.config.json", r.run_id)), serde_json::to_string_pretty(&r.config)?)?;
    }
    let rows: Vec<SummaryRow> = results.iter().map(|r| r.summary.clone()).collect();
    std::fs::write(dir.join("summary.csv"), summary_csv(&rows))?;
    Ok(())
}
