//! Bounded memories under the three eviction policies, and the two memory
//! loss terms evaluated against them.
//!
//! `cargo run --example memory_eviction`

use divdistill::memory::{EvictionPolicy, Extreme, MemorySet};
use divdistill::numerics::Latent;
use divdistill::objectives::{combined_loss, gen_loss, real_loss, LossWeights};

fn lat(x: f64, y: f64) -> Latent {
    Latent::new(vec![x, y]).expect("finite")
}

fn main() -> divdistill::Result<()> {
    // Four points bunched near the x axis and two outliers.
    let stream = [
        lat(1.0, 0.0),
        lat(1.0, 0.1),
        lat(0.0, 1.0),
        lat(1.0, -0.1),
        lat(-1.0, 0.2),
        lat(0.9, 0.05),
    ];
    for policy in [
        EvictionPolicy::MaxSimilaritySum,
        EvictionPolicy::MinSimilaritySum,
        EvictionPolicy::Oldest,
    ] {
        let mut m = MemorySet::new(3, policy)?;
        for z in &stream {
            m.enqueue(z.clone())?;
        }
        let kept: Vec<String> = m
            .entries()
            .map(|(i, z)| format!("#{i} ({:.2}, {:.2})", z[0], z[1]))
            .collect();
        println!("{:<7} keeps {}", policy.as_str(), kept.join("  "));
    }

    let mut m = MemorySet::new(8, EvictionPolicy::MaxSimilaritySum)?;
    for z in [lat(1.0, 0.0), lat(0.8, 0.6), lat(0.0, 1.0)] {
        m.push(z)?;
    }
    println!("similarity sums (self included): {:?}", m.similarity_sums());

    let z_hat = lat(0.6, 0.8);
    let (i, s) = m.extreme_similarity(&z_hat, Extreme::Max).expect("nonempty");
    println!("most similar stored latent to z_hat: #{i} with cosine {s:.3}");
    let r = real_loss(&z_hat, &m);
    let g = gen_loss(&z_hat, &m);
    let b = combined_loss(0.25, r.value, g.value, LossWeights::default());
    println!(
        "real term {:.4} (pulls toward #{}), gen term {:.4} (pushes from #{}), total {:.5}",
        r.value,
        r.selected.expect("nonempty"),
        g.value,
        g.selected.expect("nonempty"),
        b.total
    );
    Ok(())
}
