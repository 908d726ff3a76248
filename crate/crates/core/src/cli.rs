//! Command-line front end. Every verb reads a config file (optional), applies
//! `key=value` overrides, and writes only under `--out`.
//!
//! Exit status: 0 on success, 2 for usage and config errors, 1 for runtime
//! failures. Failures print one line, `error[<category>]: <message>`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::dataset;
use crate::error::{Error, Result};
use crate::memory::EvictionPolicy;
use crate::pipeline::{
    distill, generate_distilled, load_params, pretrain, save_params, DistillConfig, CONFIG_KEYS,
};
use crate::synthbench::{
    self, gradient_field, min_max_grid, run_ablation, run_sweep, summarize_ablation, summarize_sweep,
    write_ablation_csv, write_ablation_summary_csv, write_field_csv, write_field_svg, write_sweep_csv,
    write_sweep_summary_csv, Experiment, GridBounds, Overlay, SweepParam,
};

pub const RESOLVED_CONFIG: &str = "config.resolved.cfg";

#[derive(Parser, Debug)]
#[command(name = "divdistill", version, about = "Memory-guided generative dataset distillation on a toy diffusion model")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Debug)]
struct Common {
    /// Run config file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing non-empty output directory
    #[arg(long)]
    force: bool,
    /// Config overrides, applied after the file
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Train the base denoiser on the benchmark with the pure diffusion loss
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune with the memory terms and generate the distilled set
    Distill {
        #[command(flatten)]
        common: Common,
        /// Start from these parameters instead of pretraining
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Generate `ipc` samples per class from saved parameters
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
    },
    /// Score a distilled set on the benchmark test split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        distilled: PathBuf,
    },
    /// Eviction-policy ablation: min/max over both memories plus oldest/oldest
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "10,20,50")]
        ipcs: Vec<usize>,
        /// Worker threads
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Sweep lambda_real, lambda_gen or capacity
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Worker threads
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Arrow field of the one-step denoising direction (2-D latents only)
    PlotField {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        class: usize,
        #[arg(long, default_value_t = 20)]
        t: usize,
        /// Points per axis
        #[arg(long, default_value_t = 21)]
        grid: usize,
        /// Half-width of the square plotted region
        #[arg(long, default_value_t = 3.0)]
        bounds: f64,
        /// Overlay this labeled CSV on the plot
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
}

impl Verb {
    fn common(&self) -> &Common {
        match self {
            Verb::Pretrain { common }
            | Verb::Distill { common, .. }
            | Verb::Generate { common, .. }
            | Verb::Eval { common, .. }
            | Verb::Ablate { common, .. }
            | Verb::Sweep { common, .. }
            | Verb::PlotField { common, .. } => common,
        }
    }
}

/// Help epilogue listing every config key with its default.
pub fn config_keys_help() -> String {
    let width = CONFIG_KEYS.iter().map(|k| k.key.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (default; note):\n");
    for k in CONFIG_KEYS {
        s.push_str(&format!("  {:<width$}  {:<8} {}\n", k.key, k.default, k.note));
    }
    s
}

fn command() -> clap::Command {
    let help = config_keys_help();
    let mut cmd = Cli::command().after_help(help.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        let h = help.clone();
        cmd = cmd.mut_subcommand(name, move |s| s.after_help(h));
    }
    cmd
}

/// Parses `args` (program name first), runs the verb, and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    eprint!("{e}");
                    2
                }
                _ => {
                    let msg = e.to_string();
                    let line = msg
                        .lines()
                        .find(|l| !l.trim().is_empty())
                        .unwrap_or("bad arguments")
                        .trim_start_matches("error: ");
                    eprintln!("error[usage]: {line}");
                    2
                }
            };
        }
    };
    match dispatch(&cli.verb) {
        Ok(()) => 0,
        Err(e) => {
            let one_line = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {one_line}", e.category());
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn resolve_config(common: &Common) -> Result<DistillConfig> {
    let mut cfg = match &common.config {
        Some(path) => DistillConfig::load(path)?,
        None => DistillConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(common: &Common) -> Result<&Path> {
    let out = common.out.as_path();
    if out.exists() {
        if !out.is_dir() {
            return Err(Error::config(format!("--out {} exists and is not a directory", out.display())));
        }
        let nonempty = fs::read_dir(out)?.next().is_some();
        if nonempty && !common.force {
            return Err(Error::config(format!(
                "{} already holds a run; pass --force to overwrite",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out)?;
    Ok(out)
}

fn create(path: PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn dispatch(verb: &Verb) -> Result<()> {
    let common = verb.common();
    let cfg = resolve_config(common)?;
    let out = prepare_out(common)?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.to_text())?;
    match verb {
        Verb::Pretrain { .. } => {
            let (_, bench) = synthbench::benchmark_for(&cfg)?;
            let pre = pretrain(&cfg, &bench.train)?;
            save_params(&pre.params, &out.join("params.bin"))?;
            let mut w = create(out.join("pretrain_log.csv"))?;
            writeln!(w, "step,loss")?;
            for (i, l) in pre.step_losses.iter().enumerate() {
                writeln!(w, "{i},{l:?}")?;
            }
            w.flush()?;
            println!(
                "pretrained {} steps, final loss {:.5}",
                pre.step_losses.len(),
                pre.step_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Verb::Distill { pretrained, .. } => {
            let (_, bench) = synthbench::benchmark_for(&cfg)?;
            let base = match pretrained {
                Some(p) => load_params(p)?,
                None => pretrain(&cfg, &bench.train)?.params,
            };
            let run = distill(&base, &cfg, &bench.train)?;
            run.write_to(out)?;
            println!("distilled {} samples into {}", run.distilled.len(), out.display());
        }
        Verb::Generate { params, .. } => {
            let params = load_params(params)?;
            let set = generate_distilled(&params, &cfg)?;
            dataset::write_csv(&set, create(out.join("distilled.csv"))?)?;
            println!("generated {} samples", set.len());
        }
        Verb::Eval { distilled, .. } => {
            let set = dataset::read_csv(BufReader::new(File::open(distilled)?))?;
            let exp = Experiment::new(cfg.clone())?;
            let report = exp.evaluate_set(&set, cfg.seed_sampling)?;
            let reference = exp.evaluate_set(&exp.bench.train, cfg.seed_sampling)?;
            let mut w = csv::Writer::from_writer(create(out.join("eval.csv"))?);
            w.write_record(["set", "size", "top1_accuracy", "mode_coverage", "mean_nn_distance"])?;
            for (name, n, r) in [
                ("distilled", set.len(), report),
                ("full_data", exp.bench.train.len(), reference),
            ] {
                w.write_record([
                    name.to_string(),
                    n.to_string(),
                    format!("{:?}", r.top1_accuracy),
                    format!("{:?}", r.mode_coverage),
                    format!("{:?}", r.mean_nn_distance),
                ])?;
            }
            w.flush()?;
            println!(
                "accuracy {:.4} (full data {:.4}), coverage {:.4}, nn distance {:.4}",
                report.top1_accuracy, reference.top1_accuracy, report.mode_coverage, report.mean_nn_distance
            );
        }
        Verb::Ablate { seeds, ipcs, jobs, .. } => {
            let exp = Experiment::new(cfg)?;
            let mut grid = min_max_grid();
            grid.push((EvictionPolicy::Oldest, EvictionPolicy::Oldest));
            let rows = run_ablation(&exp, &grid, ipcs, seeds, *jobs)?;
            write_ablation_csv(&rows, create(out.join("ablation.csv"))?)?;
            let cells = summarize_ablation(&rows);
            write_ablation_summary_csv(&cells, create(out.join("ablation_summary.csv"))?)?;
            for c in &cells {
                println!(
                    "{}/{} ipc {}: accuracy {:.4} +- {:.4}, coverage {:.4} ({} runs)",
                    c.policy_real, c.policy_gen, c.ipc, c.accuracy_mean, c.accuracy_std, c.coverage_mean, c.runs
                );
            }
        }
        Verb::Sweep {
            param,
            values,
            seeds,
            jobs,
            ..
        } => {
            let param: SweepParam = param.parse()?;
            let exp = Experiment::new(cfg)?;
            let rows = run_sweep(&exp, param, values, seeds, *jobs)?;
            write_sweep_csv(&rows, create(out.join("sweep.csv"))?)?;
            let points = summarize_sweep(&rows);
            write_sweep_summary_csv(param, &points, create(out.join("sweep_summary.csv"))?)?;
            for p in &points {
                println!(
                    "{} = {}: accuracy min {:.4} mean {:.4} max {:.4}",
                    param.name(),
                    p.value,
                    p.accuracy_min,
                    p.accuracy_mean,
                    p.accuracy_max
                );
            }
        }
        Verb::PlotField {
            params,
            class,
            t,
            grid,
            bounds,
            overlay,
            ..
        } => {
            let params = load_params(params)?;
            let sched = cfg.schedule()?;
            let gb = GridBounds::square(*bounds, *grid);
            let arrows = gradient_field(&params, &sched, &gb, *t, *class)?;
            write_field_csv(&arrows, create(out.join("field.csv"))?)?;
            let points = match overlay {
                Some(p) => dataset::read_csv(BufReader::new(File::open(p)?))?,
                None => Vec::new(),
            };
            let overlays = [Overlay {
                points: &points,
                color: "#c33",
                radius: 3.0,
            }];
            write_field_svg(&arrows, &gb, &overlays, create(out.join("field.svg"))?)?;
            println!("wrote {} arrows", arrows.len());
        }
    }
    Ok(())
}
