//! Run-and-check oracles for pretraining and sampling on datasets whose
//! statistics are known in closed form.

use divdistill::dataset::Labeled;
use divdistill::diffusion::{sample, ConditioningVector};
use divdistill::numerics::{gaussian_draw, Latent, RngStream};
use divdistill::pipeline::{pretrain, DistillConfig};

const MEAN: [f64; 2] = [1.0, -0.5];
const STD: f64 = 0.5;

fn single_gaussian(n: usize, seed: u64) -> Vec<Labeled> {
    let mut rng = RngStream::new(seed, 0);
    (0..n)
        .map(|_| {
            let e = gaussian_draw(&mut rng, 2);
            Labeled::new(0, Latent::new(vec![MEAN[0] + STD * e[0], MEAN[1] + STD * e[1]]).unwrap())
        })
        .collect()
}

fn block_means(xs: &[f64], block: usize) -> Vec<f64> {
    xs.chunks_exact(block).map(|c| c.iter().sum::<f64>() / block as f64).collect()
}

#[test]
fn pretraining_loss_decreases_in_moving_average() {
    let cfg = DistillConfig {
        pretrain_epochs: 10,
        pretrain_batch_size: 64,
        ..Default::default()
    };
    let data = single_gaussian(2000, 1);
    let pre = pretrain(&cfg, &data).unwrap();
    assert!(pre.step_losses.iter().all(|l| l.is_finite()));
    assert!(pre.step_losses.last().unwrap() < &pre.step_losses[0]);
    // Past the transient the per-step loss is dominated by timestep noise, so
    // monotonicity is checked up to the first block within 10% of the plateau.
    let blocks = block_means(&pre.step_losses, 20);
    let tail = &blocks[blocks.len() - 5..];
    let plateau = tail.iter().sum::<f64>() / tail.len() as f64;
    let end = blocks.iter().position(|b| *b <= 1.1 * plateau).expect("loss reaches its plateau");
    assert!(end >= 2, "no transient to check: {blocks:?}");
    for w in blocks[..=end].windows(2) {
        assert!(w[1] < w[0], "20-step means not decreasing: {blocks:?}");
    }
    assert!(blocks[0] > 2.0 * plateau);
}

#[test]
fn pretraining_is_deterministic() {
    let cfg = DistillConfig {
        pretrain_epochs: 2,
        hidden_width: 16,
        ..Default::default()
    };
    let data = single_gaussian(300, 2);
    let a = pretrain(&cfg, &data).unwrap();
    let b = pretrain(&cfg, &data).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.step_losses, b.step_losses);
    let c = pretrain(&cfg.with_run_seed(9), &data).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn samples_match_single_gaussian_mean() {
    let data = single_gaussian(2000, 3);
    let cfg = DistillConfig {
        pretrain_epochs: 200,
        ..Default::default()
    };
    let pre = pretrain(&cfg, &data).unwrap();
    let sched = cfg.schedule().unwrap();
    let c = ConditioningVector::new(0, 1).unwrap();
    let mut rng = RngStream::new(4, 0);
    let n = 500;
    let draws: Vec<Latent> = (0..n)
        .map(|_| sample(&pre.params, &sched, &c, 50, &mut rng).unwrap())
        .collect();
    for k in 0..2 {
        let data_mean = data.iter().map(|p| p.latent[k]).sum::<f64>() / data.len() as f64;
        let m = draws.iter().map(|z| z[k]).sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        eprintln!("coord {k}: sample mean {m:.4}, data mean {data_mean:.4}, se {se:.4}, sample std {:.4}", var.sqrt());
        assert!((m - data_mean).abs() <= 3.0 * se, "coord {k}: {m} vs {data_mean} (se {se})");
    }
}
