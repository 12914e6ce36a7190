//! Runs a config (plus optional grid args) and prints the summary table.
//! Usage: sweep_once <config.json> [key=v1,v2 ...]

use std::time::Instant;

use plab_core::runner::{assignment_label, parse_config, parse_grid_arg, run_sweep};

fn main() {
    let mut args = std::env::args().skip(1);
    let cfg = parse_config(args.next().expect("config path")).unwrap();
    let grid: Vec<_> = args.map(|a| parse_grid_arg(&a).unwrap()).collect();
    let t = Instant::now();
    for r in run_sweep(&cfg, &grid, 1).unwrap() {
        let (tr, trs) = r.summary.metric("train_acc").unwrap();
        let (te, tes) = r.summary.metric("test_acc").unwrap();
        let per_seed: Vec<String> = r
            .outputs
            .iter()
            .map(|o| format!("{:.4}", o.rows.last().unwrap().record.test_acc))
            .collect();
        println!("{:<50} train {tr:.4}±{trs:.4} test {te:.4}±{tes:.4} [{}]", assignment_label(&r.assignment), per_seed.join(" "));
    }
    eprintln!("elapsed {:.1}s", t.elapsed().as_secs_f64());
}
