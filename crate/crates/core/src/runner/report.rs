//! Trajectory CSV files and the per-configuration summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{Event, RunOutput};
use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: &str =
    "run_id,seed,phase,epoch,event,train_acc,test_acc,train_loss,test_loss,weight_mag,weight_dist,zero_grad,zero_act,srank";

/// One line of a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub seed: u64,
    pub phase: usize,
    pub epoch: usize,
    pub event: Event,
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub weight_mag: f64,
    pub weight_dist: f64,
    pub zero_grad: f64,
    pub zero_act: f64,
    pub srank: usize,
}

impl RunOutput {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.rows
            .iter()
            .map(|r| {
                let m = &r.record;
                CsvRow {
                    run_id: self.run_id.clone(),
                    seed: self.seed,
                    phase: m.phase,
                    epoch: m.epoch,
                    event: r.event,
                    train_acc: m.train_acc,
                    test_acc: m.test_acc,
                    train_loss: m.train_loss,
                    test_loss: m.test_loss,
                    weight_mag: m.weight_magnitude,
                    weight_dist: m.weight_distance,
                    zero_grad: m.zero_grad_ratio,
                    zero_act: m.zero_act_ratio,
                    srank: m.srank,
                }
            })
            .collect()
    }

    /// The trajectory as CSV text.
    pub fn to_csv_string(&self) -> Result<String> {
        rows_to_csv(&self.csv_rows())
    }

    pub fn file_name(&self) -> String {
        trajectory_file_name(&self.run_id, self.seed)
    }
}

pub fn trajectory_file_name(run_id: &str, seed: u64) -> String {
    format!("{run_id}_seed{seed}.csv")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numeric(format!("csv: {e}"))
}

pub fn rows_to_csv(rows: &[CsvRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?).expect("utf8");
    Ok(format!("{TRAJECTORY_HEADER}\n{body}"))
}

pub fn write_trajectory(dir: &Path, output: &RunOutput) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(output.file_name());
    std::fs::write(&path, output.to_csv_string()?)?;
    Ok(path)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or_default();
    if header != TRAJECTORY_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "not a trajectory CSV (header mismatch)".into(),
        });
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

const SUMMARY_METRICS: [&str; 9] = [
    "train_acc",
    "test_acc",
    "train_loss",
    "test_loss",
    "weight_mag",
    "weight_dist",
    "zero_grad",
    "zero_act",
    "srank",
];

fn metric_values(r: &CsvRow) -> [f64; 9] {
    [
        r.train_acc,
        r.test_acc,
        r.train_loss,
        r.test_loss,
        r.weight_mag,
        r.weight_dist,
        r.zero_grad,
        r.zero_act,
        r.srank as f64,
    ]
}

/// Final-row statistics of one configuration across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run_id: String,
    pub n_seeds: usize,
    pub single_seed: bool,
    /// `(mean, sample std)` per metric, in `SUMMARY_METRICS` order.
    pub stats: Vec<(f64, f64)>,
}

impl SummaryRow {
    pub fn metric(&self, name: &str) -> Option<(f64, f64)> {
        SUMMARY_METRICS.iter().position(|m| *m == name).map(|i| self.stats[i])
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups trajectories by run id and summarizes each seed's last row.
pub fn summarize(trajectories: &[Vec<CsvRow>]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, BTreeMap<u64, &CsvRow>> = BTreeMap::new();
    for t in trajectories {
        if let Some(last) = t.last() {
            groups.entry(&last.run_id).or_default().insert(last.seed, last);
        }
    }
    groups
        .into_iter()
        .map(|(run_id, seeds)| {
            let finals: Vec<[f64; 9]> = seeds.values().map(|r| metric_values(r)).collect();
            let stats = (0..SUMMARY_METRICS.len())
                .map(|i| mean_std(&finals.iter().map(|v| v[i]).collect::<Vec<_>>()))
                .collect();
            SummaryRow {
                run_id: run_id.to_string(),
                n_seeds: seeds.len(),
                single_seed: seeds.len() == 1,
                stats,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("run_id,n_seeds,single_seed");
    for m in SUMMARY_METRICS {
        write!(out, ",{m}_mean,{m}_std").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{}", r.run_id, r.n_seeds, r.single_seed).unwrap();
        for (m, s) in &r.stats {
            write!(out, ",{m},{s}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Plain-text table of final accuracies.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!("{:<18} {:>5} {:>20} {:>20}\n", "run_id", "seeds", "train_acc", "test_acc");
    for r in rows {
        let (tm, ts) = r.stats[0];
        let (vm, vs) = r.stats[1];
        let flag = if r.single_seed { " (single seed)" } else { "" };
        writeln!(
            out,
            "{:<18} {:>5} {:>20} {:>20}{flag}",
            r.run_id,
            r.n_seeds,
            format!("{tm:.4}±{ts:.4}"),
            format!("{vm:.4}±{vs:.4}")
        )
        .unwrap();
    }
    out
}

/// Reads every trajectory CSV in `dir`, sorted by file name.
pub fn read_dir_trajectories(dir: &Path) -> Result<Vec<Vec<CsvRow>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.file_name().is_some_and(|n| n != "summary.csv"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        match read_trajectory(&p) {
            Ok(rows) => out.push(rows),
            Err(Error::Parse { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
