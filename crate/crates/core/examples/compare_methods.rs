//! Headline comparison on the default GMM benchmark: the memory-guided
//! method against diffusion-only fine-tuning, FIFO memories and the
//! selection baselines, with the full-data classifier as the ceiling.
//!
//! `cargo run --release --example compare_methods -- [seeds] [jobs]`

use std::time::Instant;

use divdistill::pipeline::DistillConfig;
use divdistill::synthbench::{compare_methods, mean_std, Experiment, Method};

fn main() -> divdistill::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let jobs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let seeds: Vec<u64> = (0..seeds).collect();
    let ipcs = [10, 50];
    let methods = [
        Method::Full,
        Method::DiffusionOnly,
        Method::Fifo,
        Method::Random,
        Method::KCenter,
        Method::Herding,
        Method::FullData,
    ];

    let start = Instant::now();
    let exp = Experiment::new(DistillConfig::default())?;
    let results = compare_methods(&exp, &methods, &seeds, &ipcs, jobs);
    println!("{:<15} {:>4} {:>9} {:>9} {:>9}", "method", "ipc", "accuracy", "coverage", "nn_dist");
    for m in methods {
        for ipc in ipcs {
            let ok: Vec<_> = results
                .iter()
                .filter(|r| r.method == m && r.ipc == ipc)
                .filter_map(|r| r.report.as_ref().ok())
                .collect();
            let acc = mean_std(&ok.iter().map(|r| r.top1_accuracy).collect::<Vec<_>>());
            let cov = mean_std(&ok.iter().map(|r| r.mode_coverage).collect::<Vec<_>>());
            let nn = mean_std(&ok.iter().map(|r| r.mean_nn_distance).collect::<Vec<_>>());
            println!("{:<15} {:>4} {:>9.4} {:>9.4} {:>9.4}", m.name(), ipc, acc.0, cov.0, nn.0);
        }
    }
    for r in results.iter().filter(|r| r.method != Method::FullData && r.ipc == 10) {
        if let Ok(rep) = &r.report {
            println!("  seed {} {:<15} cov {:.4} acc {:.4}", r.seed, r.method.name(), rep.mode_coverage, rep.top1_accuracy);
        }
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
