//! Coreset-selection baselines (random, k-center, herding) on the default
//! benchmark, with the exact expected coverage of random selection.
//!
//! `cargo run --example baselines -- [ipc]`

use divdistill::numerics::{RngStream, StreamPurpose};
use divdistill::pipeline::DistillConfig;
use divdistill::synthbench::{
    benchmark_for, evaluate, herding, k_center_greedy, mean_std, mode_coverage, random_subset,
    random_subset_expected_coverage,
};

fn main() -> divdistill::Result<()> {
    let ipc: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let cfg = DistillConfig::default();
    let (gmm, bench) = benchmark_for(&cfg)?;

    let mut rng = RngStream::for_purpose(0, StreamPurpose::Sampling);
    let draws: Vec<f64> = (0..200)
        .map(|_| mode_coverage(&random_subset(&bench.train, ipc, &mut rng), &gmm))
        .collect();
    let (m, sd) = mean_std(&draws);
    println!(
        "random coverage over 200 draws: {m:.4} +- {:.4} (exact expectation {:.4})",
        sd / (draws.len() as f64).sqrt(),
        random_subset_expected_coverage(&bench.train, &gmm, ipc)
    );

    let sets = [
        ("random", random_subset(&bench.train, ipc, &mut rng)),
        ("k_center", k_center_greedy(&bench.train, ipc)),
        ("herding", herding(&bench.train, ipc)),
        ("full_data", bench.train.clone()),
    ];
    for (name, set) in sets {
        let r = evaluate(&set, &bench.test, &gmm, 0)?;
        println!(
            "{name:<9} |set| {:>5}: accuracy {:.4}, coverage {:.4}, nn distance {:.4}",
            set.len(),
            r.top1_accuracy,
            r.mode_coverage,
            r.mean_nn_distance
        );
    }
    Ok(())
}
