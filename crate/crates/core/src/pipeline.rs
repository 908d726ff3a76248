//! End-to-end distillation: pretraining, memory-guided fine-tuning and
//! generation of the distilled set, plus the run config and artifact formats.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::{self, Labeled};
use crate::diffusion::{
    loss_gradient, mean_breakdown, sample, ConditioningVector, DenoiserArch, DenoiserParams,
    TrainingExample, VarianceSchedule,
};
use crate::error::{Error, Result};
use crate::memory::{EvictionPolicy, MemoryBank};
use crate::numerics::{gaussian_draw, AdamWConfig, OptimizerState, RngStream, StreamPurpose};
use crate::objectives::{LossBreakdown, LossWeights};
use crate::synthbench::BenchSettings;

/// Every knob of a run. `Default` gives the reference settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda: LossWeights,
    pub capacity_real: usize,
    pub capacity_gen: usize,
    pub sampling_steps: usize,
    pub ipc: usize,
    pub seed_data: u64,
    pub seed_init: u64,
    pub seed_noise: u64,
    pub seed_sampling: u64,
    pub policy_real: EvictionPolicy,
    pub policy_gen: EvictionPolicy,
    pub per_class_memory: bool,
    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_learning_rate: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub bench: BenchSettings,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            epochs: 8,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            lambda: LossWeights::default(),
            capacity_real: 64,
            capacity_gen: 64,
            sampling_steps: 50,
            ipc: 10,
            seed_data: 0,
            seed_init: 0,
            seed_noise: 0,
            seed_sampling: 0,
            policy_real: EvictionPolicy::MaxSimilaritySum,
            policy_gen: EvictionPolicy::MaxSimilaritySum,
            per_class_memory: true,
            pretrain_epochs: 200,
            pretrain_batch_size: 64,
            pretrain_learning_rate: 1e-3,
            hidden_width: 64,
            hidden_layers: 2,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            bench: BenchSettings::default(),
        }
    }
}

/// Documentation for one config key: name, default, provenance note.
#[derive(Debug, Clone, Copy)]
pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub note: &'static str,
}

macro_rules! key {
    ($k:literal, $d:literal, $n:literal) => {
        KeyDoc { key: $k, default: $d, note: $n }
    };
}

/// All recognized keys, in the order the resolved config file lists them.
pub const CONFIG_KEYS: &[KeyDoc] = &[
    key!("epochs", "8", "fine-tuning epochs (reference setting)"),
    key!("batch_size", "8", "fine-tuning mini-batch size (reference setting)"),
    key!("learning_rate", "0.001", "AdamW learning rate (reference setting)"),
    key!("weight_decay", "0", "AdamW decoupled weight decay"),
    key!("lambda_real", "0.002", "weight of the representativeness term (reference setting)"),
    key!("lambda_gen", "0.008", "weight of the diversity term (reference setting)"),
    key!("capacity_real", "64", "real-memory capacity (reference setting)"),
    key!("capacity_gen", "64", "generated-memory capacity (reference setting)"),
    key!("sampling_steps", "50", "denoising steps when generating (reference setting)"),
    key!("ipc", "10", "distilled samples per class"),
    key!("seed_data", "0", "benchmark draw seed"),
    key!("seed_init", "0", "parameter initialization seed"),
    key!("seed_noise", "0", "training timestep, noise and shuffle seed"),
    key!("seed_sampling", "0", "generation noise seed"),
    key!("policy_real", "max", "real-memory eviction: max, min or oldest"),
    key!("policy_gen", "max", "generated-memory eviction: max, min or oldest"),
    key!("per_class_memory", "true", "one memory pair per class instead of a shared pair"),
    key!("pretrain_epochs", "200", "pure-diffusion pretraining epochs (toy-scale choice)"),
    key!("pretrain_batch_size", "64", "pretraining mini-batch size (toy-scale choice)"),
    key!("pretrain_learning_rate", "0.001", "pretraining learning rate"),
    key!("hidden_width", "64", "denoiser hidden width (toy-scale choice)"),
    key!("hidden_layers", "2", "denoiser hidden layer count (toy-scale choice)"),
    key!("timesteps", "1000", "diffusion training steps T"),
    key!("beta_start", "0.0001", "first beta of the linear schedule"),
    key!("beta_end", "0.02", "last beta of the linear schedule"),
    key!("bench_classes", "4", "benchmark class count"),
    key!("bench_samples_per_class", "2000", "benchmark points drawn per class"),
    key!("bench_std", "0.25", "isotropic std of every mixture component"),
    key!("bench_radius", "2", "distance of component means from the origin"),
    key!("bench_rare_weight", "0.05", "weight of each class's rare component"),
    key!("bench_test_fraction", "0.2", "held-out fraction per class"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl DistillConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "lambda_real" => self.lambda.lambda_real = parse(key, value)?,
            "lambda_gen" => self.lambda.lambda_gen = parse(key, value)?,
            "capacity_real" => self.capacity_real = parse(key, value)?,
            "capacity_gen" => self.capacity_gen = parse(key, value)?,
            "sampling_steps" => self.sampling_steps = parse(key, value)?,
            "ipc" => self.ipc = parse(key, value)?,
            "seed_data" => self.seed_data = parse(key, value)?,
            "seed_init" => self.seed_init = parse(key, value)?,
            "seed_noise" => self.seed_noise = parse(key, value)?,
            "seed_sampling" => self.seed_sampling = parse(key, value)?,
            "policy_real" => self.policy_real = value.parse()?,
            "policy_gen" => self.policy_gen = value.parse()?,
            "per_class_memory" => self.per_class_memory = parse_bool(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "pretrain_batch_size" => self.pretrain_batch_size = parse(key, value)?,
            "pretrain_learning_rate" => self.pretrain_learning_rate = parse(key, value)?,
            "hidden_width" => self.hidden_width = parse(key, value)?,
            "hidden_layers" => self.hidden_layers = parse(key, value)?,
            "timesteps" => self.timesteps = parse(key, value)?,
            "beta_start" => self.beta_start = parse(key, value)?,
            "beta_end" => self.beta_end = parse(key, value)?,
            "bench_classes" => self.bench.classes = parse(key, value)?,
            "bench_samples_per_class" => self.bench.samples_per_class = parse(key, value)?,
            "bench_std" => self.bench.std = parse(key, value)?,
            "bench_radius" => self.bench.radius = parse(key, value)?,
            "bench_rare_weight" => self.bench.rare_weight = parse(key, value)?,
            "bench_test_fraction" => self.bench.test_fraction = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        // `{:?}` on floats keeps the exact value, so resolved files reproduce runs.
        Ok(match key {
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => format!("{:?}", self.learning_rate),
            "weight_decay" => format!("{:?}", self.weight_decay),
            "lambda_real" => format!("{:?}", self.lambda.lambda_real),
            "lambda_gen" => format!("{:?}", self.lambda.lambda_gen),
            "capacity_real" => self.capacity_real.to_string(),
            "capacity_gen" => self.capacity_gen.to_string(),
            "sampling_steps" => self.sampling_steps.to_string(),
            "ipc" => self.ipc.to_string(),
            "seed_data" => self.seed_data.to_string(),
            "seed_init" => self.seed_init.to_string(),
            "seed_noise" => self.seed_noise.to_string(),
            "seed_sampling" => self.seed_sampling.to_string(),
            "policy_real" => self.policy_real.to_string(),
            "policy_gen" => self.policy_gen.to_string(),
            "per_class_memory" => self.per_class_memory.to_string(),
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "pretrain_batch_size" => self.pretrain_batch_size.to_string(),
            "pretrain_learning_rate" => format!("{:?}", self.pretrain_learning_rate),
            "hidden_width" => self.hidden_width.to_string(),
            "hidden_layers" => self.hidden_layers.to_string(),
            "timesteps" => self.timesteps.to_string(),
            "beta_start" => format!("{:?}", self.beta_start),
            "beta_end" => format!("{:?}", self.beta_end),
            "bench_classes" => self.bench.classes.to_string(),
            "bench_samples_per_class" => self.bench.samples_per_class.to_string(),
            "bench_std" => format!("{:?}", self.bench.std),
            "bench_radius" => format!("{:?}", self.bench.radius),
            "bench_rare_weight" => format!("{:?}", self.bench.rare_weight),
            "bench_test_fraction" => format!("{:?}", self.bench.test_fraction),
            _ => return Err(Error::config(format!("unknown config key `{key}`"))),
        })
    }

    /// Applies `key=value` (or `key = value`) overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = DistillConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for doc in CONFIG_KEYS {
            let _ = writeln!(out, "{} = {}", doc.key, self.get(doc.key).expect("documented key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("capacity_real", self.capacity_real),
            ("capacity_gen", self.capacity_gen),
            ("sampling_steps", self.sampling_steps),
            ("ipc", self.ipc),
            ("pretrain_batch_size", self.pretrain_batch_size),
            ("hidden_width", self.hidden_width),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        LossWeights::new(self.lambda.lambda_real, self.lambda.lambda_gen)?;
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("pretrain_learning_rate", self.pretrain_learning_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be > 0")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        if self.sampling_steps > self.timesteps {
            return Err(Error::config("sampling_steps cannot exceed timesteps"));
        }
        VarianceSchedule::linear(self.timesteps, self.beta_start, self.beta_end)?;
        self.bench.validate()?;
        Ok(())
    }

    /// The same config with the init, noise and sampling seeds set to `seed`.
    /// The benchmark seed is left alone so repeated runs share one dataset.
    pub fn with_run_seed(&self, seed: u64) -> Self {
        DistillConfig {
            seed_init: seed,
            seed_noise: seed,
            seed_sampling: seed,
            ..self.clone()
        }
    }

    pub fn schedule(&self) -> Result<VarianceSchedule> {
        VarianceSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }

    pub fn arch(&self, latent_dim: usize, num_classes: usize) -> DenoiserArch {
        DenoiserArch {
            latent_dim,
            num_classes,
            hidden: vec![self.hidden_width; self.hidden_layers],
            timesteps: self.timesteps,
        }
    }

    /// Settings that pretraining depends on; runs sharing this key can share a pretrained model.
    pub fn pretrain_key(&self) -> String {
        [
            "seed_init",
            "seed_noise",
            "seed_data",
            "pretrain_epochs",
            "pretrain_batch_size",
            "pretrain_learning_rate",
            "weight_decay",
            "hidden_width",
            "hidden_layers",
            "timesteps",
            "beta_start",
            "beta_end",
            "bench_classes",
            "bench_samples_per_class",
            "bench_std",
            "bench_radius",
            "bench_rare_weight",
            "bench_test_fraction",
        ]
        .iter()
        .map(|k| format!("{k}={}", self.get(k).expect("known key")))
        .collect::<Vec<_>>()
        .join(";")
    }
}

fn check_dataset(data: &[Labeled]) -> Result<(usize, usize)> {
    let first = data
        .first()
        .ok_or_else(|| Error::config("training set is empty"))?;
    let dim = first.latent.dim();
    let k = dataset::num_classes(data);
    let mut seen = vec![false; k];
    for p in data {
        if p.latent.dim() != dim {
            return Err(Error::config("training latents have mixed dimensions"));
        }
        seen[p.class] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::config(format!("class {c} has no training samples")));
    }
    Ok((dim, k))
}

/// Draws `(t, eps)` for each selected sample.
fn noised_batch(
    data: &[Labeled],
    idx: &[usize],
    timesteps: usize,
    t_rng: &mut RngStream,
    eps_rng: &mut RngStream,
) -> Vec<TrainingExample> {
    idx.iter()
        .map(|&i| TrainingExample {
            z0: data[i].latent.clone(),
            class: data[i].class,
            t: t_rng.int_inclusive(1, timesteps),
            eps: gaussian_draw(eps_rng, data[i].latent.dim()),
        })
        .collect()
}

/// Output of [`pretrain`].
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub params: DenoiserParams,
    /// Batch-mean diffusion loss after each optimizer step.
    pub step_losses: Vec<f64>,
}

/// Trains a freshly initialized denoiser with the pure diffusion loss.
/// Zero pretraining epochs returns the initialization.
pub fn pretrain(config: &DistillConfig, data: &[Labeled]) -> Result<Pretrained> {
    config.validate()?;
    let (dim, k) = check_dataset(data)?;
    let sched = config.schedule()?;
    let mut params = DenoiserParams::init(
        config.arch(dim, k),
        &mut RngStream::for_purpose(config.seed_init, StreamPurpose::Init),
    )?;
    let mut opt = OptimizerState::new(
        params.params().len(),
        AdamWConfig {
            learning_rate: config.pretrain_learning_rate,
            weight_decay: config.weight_decay,
            ..Default::default()
        },
    );
    let mut shuffle = RngStream::for_purpose(config.seed_noise, StreamPurpose::Shuffle).substream(0);
    let mut t_rng = RngStream::for_purpose(config.seed_noise, StreamPurpose::Timestep).substream(0);
    let mut eps_rng = RngStream::for_purpose(config.seed_noise, StreamPurpose::Noise).substream(0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step_losses = Vec::new();
    for epoch in 0..config.pretrain_epochs {
        opt.set_epoch(epoch);
        shuffle.shuffle(&mut order);
        for chunk in order.chunks(config.pretrain_batch_size) {
            let batch = noised_batch(data, chunk, sched.timesteps(), &mut t_rng, &mut eps_rng);
            let g = loss_gradient(&params, &sched, &batch, None, LossWeights::ZERO)?;
            if !g.mean.total.is_finite() {
                return Err(Error::Training {
                    what: "loss",
                    epoch,
                    step: opt.step_count(),
                });
            }
            opt.step(params.params_mut(), &g.grad)?;
            step_losses.push(g.mean.diffusion);
        }
    }
    Ok(Pretrained { params, step_losses })
}

/// One row of the per-step training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub class: usize,
    pub loss: LossBreakdown,
}

/// Memory contents at the end of an epoch.
#[derive(Debug, Clone)]
pub struct MemorySnapshot {
    pub epoch: usize,
    pub bank: MemoryBank,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub params: DenoiserParams,
    pub distilled: Vec<Labeled>,
    pub log: Vec<LogRow>,
    pub snapshots: Vec<MemorySnapshot>,
}

/// Fine-tunes `pretrained` with the combined loss while maintaining the
/// real and generated memories, then generates the distilled set.
pub fn distill(pretrained: &DenoiserParams, config: &DistillConfig, data: &[Labeled]) -> Result<RunArtifacts> {
    config.validate()?;
    let (dim, k) = check_dataset(data)?;
    if pretrained.arch() != &config.arch(dim, k) {
        return Err(Error::config("pretrained model does not match the config architecture"));
    }
    let sched = config.schedule()?;
    let mut params = pretrained.clone();
    let mut opt = OptimizerState::new(
        params.params().len(),
        AdamWConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..Default::default()
        },
    );
    let mut bank = MemoryBank::new(
        k,
        config.per_class_memory,
        config.capacity_real,
        config.capacity_gen,
        config.policy_real,
        config.policy_gen,
    )?;
    let mut shuffle = RngStream::for_purpose(config.seed_noise, StreamPurpose::Shuffle).substream(1);
    let mut t_rng = RngStream::for_purpose(config.seed_noise, StreamPurpose::Timestep).substream(1);
    let mut eps_rng = RngStream::for_purpose(config.seed_noise, StreamPurpose::Noise).substream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let mut snapshots = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        opt.set_epoch(epoch);
        shuffle.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let step = opt.step_count();
            let batch = noised_batch(data, chunk, sched.timesteps(), &mut t_rng, &mut eps_rng);
            let g = loss_gradient(&params, &sched, &batch, Some(&bank), config.lambda)?;
            if !g.mean.total.is_finite() {
                return Err(Error::Training { what: "loss", epoch, step });
            }
            opt.step(params.params_mut(), &g.grad)?;

            for (ex, z_hat) in batch.iter().zip(&g.z_hat) {
                bank.real_mut(ex.class).enqueue(ex.z0.clone())?;
                // A zero or non-finite estimate cannot be compared by cosine; skip it.
                if z_hat.norm() > 0.0 && z_hat.as_slice().iter().all(|v| v.is_finite()) {
                    bank.gen_mut(ex.class).enqueue(z_hat.clone())?;
                }
            }

            for class in 0..k {
                let rows: Vec<LossBreakdown> = batch
                    .iter()
                    .zip(&g.per_sample)
                    .filter(|(ex, _)| ex.class == class)
                    .map(|(_, b)| *b)
                    .collect();
                if !rows.is_empty() {
                    log.push(LogRow {
                        step,
                        epoch,
                        class,
                        loss: mean_breakdown(&rows),
                    });
                }
            }
        }
        snapshots.push(MemorySnapshot {
            epoch,
            bank: bank.clone(),
        });
    }

    let distilled = generate_distilled(&params, config)?;
    Ok(RunArtifacts {
        params,
        distilled,
        log,
        snapshots,
    })
}

/// `config.ipc` samples per class. Each class draws from its own substream,
/// so the set for a smaller IPC is a prefix of the set for a larger one.
pub fn generate_distilled(params: &DenoiserParams, config: &DistillConfig) -> Result<Vec<Labeled>> {
    generate_with_ipc(params, config, config.ipc)
}

pub fn generate_with_ipc(params: &DenoiserParams, config: &DistillConfig, ipc: usize) -> Result<Vec<Labeled>> {
    let sched = config.schedule()?;
    let k = params.arch().num_classes;
    let base = RngStream::for_purpose(config.seed_sampling, StreamPurpose::Sampling);
    let mut out = Vec::with_capacity(ipc * k);
    for class in 0..k {
        let c = ConditioningVector::new(class, k)?;
        let mut rng = base.substream(class as u64);
        for _ in 0..ipc {
            out.push(Labeled::new(class, sample(params, &sched, &c, config.sampling_steps, &mut rng)?));
        }
    }
    Ok(out)
}

const PARAMS_MAGIC: &[u8; 8] = b"DDISTPRM";
const PARAMS_VERSION: u32 = 1;

/// Little-endian binary: magic, version, architecture, then every
/// parameter as an `f64`.
pub fn write_params<W: Write>(params: &DenoiserParams, mut w: W) -> Result<()> {
    let arch = params.arch();
    w.write_all(PARAMS_MAGIC)?;
    w.write_all(&PARAMS_VERSION.to_le_bytes())?;
    for v in [arch.latent_dim, arch.num_classes, arch.timesteps, arch.hidden.len()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for h in &arch.hidden {
        w.write_all(&(*h as u32).to_le_bytes())?;
    }
    w.write_all(&(params.params().len() as u64).to_le_bytes())?;
    for p in params.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<DenoiserParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PARAMS_MAGIC {
        return Err(Error::Format("not a parameter file (bad magic)".into()));
    }
    let mut u32_buf = [0u8; 4];
    let mut next_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u32_buf)?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let version = next_u32(&mut r)?;
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!("unsupported parameter file version {version}")));
    }
    let latent_dim = next_u32(&mut r)? as usize;
    let num_classes = next_u32(&mut r)? as usize;
    let timesteps = next_u32(&mut r)? as usize;
    let layers = next_u32(&mut r)? as usize;
    let hidden = (0..layers)
        .map(|_| next_u32(&mut r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut u64_buf = [0u8; 8];
    r.read_exact(&mut u64_buf)?;
    let n = u64::from_le_bytes(u64_buf) as usize;
    let arch = DenoiserArch {
        latent_dim,
        num_classes,
        hidden,
        timesteps,
    };
    if n != arch.num_params() {
        return Err(Error::Format(format!(
            "parameter count {n} does not match architecture ({})",
            arch.num_params()
        )));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut u64_buf)?;
        values.push(f64::from_le_bytes(u64_buf));
    }
    DenoiserParams::from_parts(arch, values)
}

pub fn save_params(params: &DenoiserParams, path: &Path) -> Result<()> {
    write_params(params, BufWriter::new(File::create(path)?))
}

pub fn load_params(path: &Path) -> Result<DenoiserParams> {
    read_params(std::io::BufReader::new(File::open(path)?))
}

pub fn write_log<W: Write>(rows: &[LogRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "epoch", "class", "diffusion", "real_term", "gen_term", "total"])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.class.to_string(),
            format!("{:?}", r.loss.diffusion),
            format!("{:?}", r.loss.real_term),
            format!("{:?}", r.loss.gen_term),
            format!("{:?}", r.loss.total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl RunArtifacts {
    /// Writes `params.bin`, `distilled.csv`, `train_log.csv` and
    /// `memory/epoch_{e}_{pair}_{real|gen}.csv` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_params(&self.params, &dir.join("params.bin"))?;
        dataset::write_csv(&self.distilled, BufWriter::new(File::create(dir.join("distilled.csv"))?))?;
        write_log(&self.log, BufWriter::new(File::create(dir.join("train_log.csv"))?))?;
        let mem_dir = dir.join("memory");
        fs::create_dir_all(&mem_dir)?;
        for snap in &self.snapshots {
            for pair in 0..snap.bank.num_pairs() {
                let name = |kind: &str| mem_dir.join(format!("epoch_{}_{}_{kind}.csv", snap.epoch, pair));
                snap.bank
                    .real(pair)
                    .write_csv(BufWriter::new(File::create(name("real"))?))?;
                snap.bank
                    .gen(pair)
                    .write_csv(BufWriter::new(File::create(name("gen"))?))?;
            }
        }
        Ok(())
    }
}
