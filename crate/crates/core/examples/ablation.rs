//! Eviction-policy ablation: min/max over both memories plus the FIFO
//! baseline, several seeds, several IPCs. Writes the raw and summary CSVs.
//!
//! `cargo run --release --example ablation -- [seeds] [out_dir]`

use std::fs::File;
use std::path::PathBuf;

use divdistill::memory::EvictionPolicy;
use divdistill::pipeline::DistillConfig;
use divdistill::synthbench::{
    min_max_grid, run_ablation, summarize_ablation, write_ablation_csv, write_ablation_summary_csv, Experiment,
};

fn main() -> divdistill::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-runs/ablation".into()));
    std::fs::create_dir_all(&out)?;
    let seeds: Vec<u64> = (0..n).collect();
    let jobs = std::thread::available_parallelism().map_or(1, |p| p.get());

    let exp = Experiment::new(DistillConfig::default())?;
    let mut grid = min_max_grid();
    grid.push((EvictionPolicy::Oldest, EvictionPolicy::Oldest));
    let rows = run_ablation(&exp, &grid, &[10, 20, 50], &seeds, jobs)?;
    write_ablation_csv(&rows, File::create(out.join("ablation.csv"))?)?;
    let cells = summarize_ablation(&rows);
    write_ablation_summary_csv(&cells, File::create(out.join("ablation_summary.csv"))?)?;

    println!("{:<8} {:<8} {:>4} {:>17} {:>9}", "real", "gen", "ipc", "accuracy", "coverage");
    for c in &cells {
        println!(
            "{:<8} {:<8} {:>4} {:>8.4} +- {:.4} {:>9.4}",
            c.policy_real.as_str(),
            c.policy_gen.as_str(),
            c.ipc,
            c.accuracy_mean,
            c.accuracy_std,
            c.coverage_mean
        );
    }
    println!("CSVs in {}", out.display());
    Ok(())
}
