//! Seeded runs, grid sweeps and result files.

mod config;
mod report;
mod sweep;
mod train;

pub use config::{parse_config, ArchConfig, DatasetConfig, OptimConfig, ProtocolConfig, RunConfig, MNIST_FILES};
pub use report::{
    mean_std, read_dir_trajectories, read_trajectory, rows_to_csv, summarize, summary_csv, summary_table,
    trajectory_file_name, write_trajectory, CsvRow, SummaryRow, TRAJECTORY_HEADER,
};
pub use sweep::{
    assignment_label, expand_grid, parse_grid_arg, resolve_alias, run_sweep, write_results, Assignment, RunResult,
    GRID_ALIASES,
};
pub use train::{load_datasets, run_single, run_single_with_data, Event, RunOutput, TrajectoryRow};
