//! Hyperparameter sweeps with the min/mean/max-over-seeds protocol.
//!
//! `cargo run --release --example sweep -- [lambda_real|lambda_gen|capacity] [v1,v2,...] [seeds]`

use std::fs::File;

use divdistill::pipeline::DistillConfig;
use divdistill::synthbench::{run_sweep, summarize_sweep, write_sweep_summary_csv, Experiment, SweepParam};

fn main() -> divdistill::Result<()> {
    let mut args = std::env::args().skip(1);
    let param: SweepParam = args.next().unwrap_or_else(|| "lambda_gen".into()).parse()?;
    let values: Vec<f64> = match args.next() {
        Some(list) => list
            .split(',')
            .map(|v| v.trim().parse().map_err(|e| divdistill::Error::Config(format!("bad value `{v}`: {e}"))))
            .collect::<divdistill::Result<_>>()?,
        None => match param {
            SweepParam::Capacity => vec![16.0, 32.0, 64.0, 128.0],
            _ => vec![0.002, 0.004, 0.008, 0.016],
        },
    };
    let n: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let seeds: Vec<u64> = (0..n).collect();
    let jobs = std::thread::available_parallelism().map_or(1, |p| p.get());

    let exp = Experiment::new(DistillConfig::default())?;
    let rows = run_sweep(&exp, param, &values, &seeds, jobs)?;
    let points = summarize_sweep(&rows);
    let out = std::path::Path::new("target/example-runs");
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("sweep_{}.csv", param.name()));
    write_sweep_summary_csv(param, &points, File::create(&path)?)?;

    println!("{:>10} {:>9} {:>9} {:>9} {:>9}", param.name(), "min", "mean", "max", "coverage");
    for p in &points {
        println!(
            "{:>10} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            p.value, p.accuracy_min, p.accuracy_mean, p.accuracy_max, p.coverage_mean
        );
    }
    println!("summary in {}", path.display());
    Ok(())
}
