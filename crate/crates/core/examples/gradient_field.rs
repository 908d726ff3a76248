//! Denoising-direction fields of a diffusion-only model and of the
//! memory-guided model, side by side, with their distilled sets overlaid.
//!
//! `cargo run --example gradient_field -- [class] [t]`

use std::fs::File;
use std::path::Path;

use divdistill::pipeline::{distill, generate_distilled, DistillConfig};
use divdistill::synthbench::{gradient_field, write_field_csv, write_field_svg, Experiment, GridBounds, Method, Overlay};

fn main() -> divdistill::Result<()> {
    let mut args = std::env::args().skip(1);
    let class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let t: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let out = Path::new("target/example-runs/gradient_field");
    std::fs::create_dir_all(out)?;

    let exp = Experiment::new(DistillConfig::default())?;
    let bounds = GridBounds::square(3.0, 25);
    let sched = exp.base.schedule()?;
    let real: Vec<_> = exp.bench.train.iter().filter(|p| p.class == class).take(300).cloned().collect();
    for method in [Method::DiffusionOnly, Method::Full] {
        let cfg = method.config(&exp.base).expect("generative method");
        let pre = exp.pretrained(&cfg)?;
        let run = distill(&pre, &cfg, &exp.bench.train)?;
        let field = gradient_field(&run.params, &sched, &bounds, t, class)?;
        let set: Vec<_> = generate_distilled(&run.params, &cfg)?
            .into_iter()
            .filter(|p| p.class == class)
            .collect();
        let name = method.name();
        write_field_csv(&field, File::create(out.join(format!("{name}.csv")))?)?;
        let overlays = [
            Overlay { points: &real, color: "#9ab", radius: 1.5 },
            Overlay { points: &set, color: "#c33", radius: 4.0 },
        ];
        write_field_svg(&field, &bounds, &overlays, File::create(out.join(format!("{name}.svg")))?)?;
        println!("{name}: {} arrows, {} distilled points -> {}/{name}.svg", field.len(), set.len(), out.display());
    }
    Ok(())
}
