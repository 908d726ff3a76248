//! The toy latent diffusion model on its own: forward noising, the one-step
//! clean estimate, pretraining on one Gaussian, and deterministic sampling.
//!
//! `cargo run --example diffusion_toy`

use divdistill::dataset::Labeled;
use divdistill::diffusion::{forward_noise, predict_z0, sample, sampling_timesteps, ConditioningVector};
use divdistill::numerics::{gaussian_draw, Latent, RngStream};
use divdistill::pipeline::{pretrain, DistillConfig};

fn main() -> divdistill::Result<()> {
    let cfg = DistillConfig {
        pretrain_epochs: 100,
        ..Default::default()
    };
    let sched = cfg.schedule()?;
    for t in [1, 250, 500, 1000] {
        println!("alpha_bar({t:>4}) = {:.6}", sched.alpha_bar(t)?);
    }

    let z0 = Latent::new(vec![1.5, -0.5])?;
    let eps = Latent::new(vec![0.3, 0.9])?;
    let zt = forward_noise(&z0, 400, &eps, &sched)?;
    let back = predict_z0(&zt, 400, &eps, &sched)?;
    println!("z0 {:?} -> z_400 {:?} -> recovered {:?}", z0.as_slice(), zt.as_slice(), back.as_slice());

    let mut rng = RngStream::new(1, 0);
    let data: Vec<Labeled> = (0..2000)
        .map(|_| {
            let e = gaussian_draw(&mut rng, 2);
            Labeled::new(0, Latent::new(vec![2.0 + 0.4 * e[0], -1.0 + 0.4 * e[1]]).expect("finite"))
        })
        .collect();
    let pre = pretrain(&cfg, &data)?;
    let first = &pre.step_losses[..50];
    let last = &pre.step_losses[pre.step_losses.len() - 50..];
    println!(
        "pretraining loss: first 50 steps {:.3}, last 50 steps {:.3}",
        first.iter().sum::<f64>() / 50.0,
        last.iter().sum::<f64>() / 50.0
    );

    println!("sampling timesteps (8 steps): {:?}", sampling_timesteps(1000, 8)?);
    let c = ConditioningVector::new(0, 1)?;
    let mut rng = RngStream::new(2, 0);
    let draws: Vec<Latent> = (0..500)
        .map(|_| sample(&pre.params, &sched, &c, cfg.sampling_steps, &mut rng))
        .collect::<divdistill::Result<_>>()?;
    for k in 0..2 {
        let m = draws.iter().map(|z| z[k]).sum::<f64>() / 500.0;
        let sd = (draws.iter().map(|z| (z[k] - m).powi(2)).sum::<f64>() / 499.0).sqrt();
        println!("coordinate {k}: sample mean {m:.3}, std {sd:.3}");
    }
    Ok(())
}
