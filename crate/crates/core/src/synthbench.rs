//! Synthetic Gaussian-mixture benchmark, downstream evaluation, selection
//! baselines, ablation/sweep runners and gradient-field rendering.
//!
//! The default benchmark places every mixture component on a ring around the
//! origin: each class owns three adjacent components with weights
//! `0.6 / 0.35 / rare_weight`, so every class has one rare mode that a
//! generator can easily miss.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use crate::dataset::{self, Labeled};
use crate::diffusion::{predict_z0, ConditioningVector, DenoiserParams, VarianceSchedule};
use crate::error::{Error, Result};
use crate::memory::EvictionPolicy;
use crate::numerics::{gaussian_draw, AdamWConfig, Latent, OptimizerState, RngStream, StreamPurpose};
use crate::objectives::LossWeights;
use crate::pipeline::{distill, generate_with_ipc, pretrain, DistillConfig};

/// Coverage radius in component standard deviations.
pub const COVERAGE_RADIUS_STD: f64 = 2.0;

/// Flat benchmark settings carried by the run config.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub classes: usize,
    pub samples_per_class: usize,
    pub std: f64,
    pub radius: f64,
    pub rare_weight: f64,
    pub test_fraction: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            classes: 4,
            samples_per_class: 2000,
            std: 0.25,
            radius: 2.0,
            rare_weight: 0.05,
            test_fraction: 0.2,
        }
    }
}

impl BenchSettings {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.samples_per_class == 0 {
            return Err(Error::config("benchmark needs >= 1 class and >= 1 sample per class"));
        }
        if !(self.rare_weight > 0.0 && self.rare_weight < 0.4) {
            return Err(Error::config("bench_rare_weight must be in (0, 0.4)"));
        }
        if !(self.std >= 0.0 && self.std.is_finite() && self.radius.is_finite()) {
            return Err(Error::config("bench_std and bench_radius must be finite, std >= 0"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config("bench_test_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMixture {
    pub means: Vec<Latent>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    pub classes: Vec<ClassMixture>,
    pub std: f64,
    pub samples_per_class: usize,
    pub test_fraction: f64,
}

impl GmmSpec {
    /// Ring layout: `3 * classes` equally spaced component means.
    pub fn ring(settings: &BenchSettings) -> Result<Self> {
        settings.validate()?;
        let k = settings.classes;
        let step = 2.0 * PI / (3 * k) as f64;
        let weights = vec![1.0 - 0.35 - settings.rare_weight, 0.35, settings.rare_weight];
        let classes = (0..k)
            .map(|c| {
                Ok(ClassMixture {
                    means: (0..3)
                        .map(|j| {
                            let a = (3 * c + j) as f64 * step;
                            Latent::new(vec![settings.radius * a.cos(), settings.radius * a.sin()])
                        })
                        .collect::<Result<Vec<_>>>()?,
                    weights: weights.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = GmmSpec {
            classes,
            std: settings.std,
            samples_per_class: settings.samples_per_class,
            test_fraction: settings.test_fraction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.classes[0].means[0].dim()
    }

    pub fn num_components(&self) -> usize {
        self.classes.iter().map(|c| c.means.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("mixture needs at least one class"));
        }
        let dim = self.classes[0]
            .means
            .first()
            .ok_or_else(|| Error::config("class 0 has no components"))?
            .dim();
        let mut has_rare = false;
        for (c, cls) in self.classes.iter().enumerate() {
            if cls.means.is_empty() || cls.means.len() != cls.weights.len() {
                return Err(Error::config(format!("class {c}: means and weights differ in length")));
            }
            if cls.means.iter().any(|m| m.dim() != dim) {
                return Err(Error::config(format!("class {c}: mixed mean dimensions")));
            }
            if cls.weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
                return Err(Error::config(format!("class {c}: weights must be positive")));
            }
            let total: f64 = cls.weights.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("class {c}: weights sum to {total}, not 1")));
            }
            has_rare |= cls.weights.iter().any(|w| *w <= 0.05 + 1e-12);
        }
        if !has_rare {
            return Err(Error::config("no class has a rare component (weight <= 0.05)"));
        }
        if self.std.is_nan() || self.std < 0.0 {
            return Err(Error::config("component std must be >= 0"));
        }
        Ok(())
    }
}

/// Train/test split with the generating component of every point.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Vec<Labeled>,
    pub test: Vec<Labeled>,
    pub train_components: Vec<usize>,
    pub test_components: Vec<usize>,
}

pub fn make_benchmark(spec: &GmmSpec, rng: &mut RngStream) -> Result<Benchmark> {
    spec.validate()?;
    let mut bench = Benchmark {
        train: Vec::new(),
        test: Vec::new(),
        train_components: Vec::new(),
        test_components: Vec::new(),
    };
    let dim = spec.dim();
    for (c, cls) in spec.classes.iter().enumerate() {
        let mut points: Vec<(usize, Latent)> = (0..spec.samples_per_class)
            .map(|_| {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut j = cls.weights.len() - 1;
                for (i, w) in cls.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        j = i;
                        break;
                    }
                }
                let noise = gaussian_draw(rng, dim);
                let v = cls.means[j]
                    .as_slice()
                    .iter()
                    .zip(noise.as_slice())
                    .map(|(m, e)| m + spec.std * e)
                    .collect();
                (j, Latent::from_vec_unchecked(v))
            })
            .collect();
        rng.shuffle(&mut points);
        let n_test = (points.len() as f64 * spec.test_fraction).round() as usize;
        for (i, (j, z)) in points.into_iter().enumerate() {
            if i < n_test {
                bench.test.push(Labeled::new(c, z));
                bench.test_components.push(j);
            } else {
                bench.train.push(Labeled::new(c, z));
                bench.train_components.push(j);
            }
        }
    }
    Ok(bench)
}

/// Benchmark described by a run config (ring layout, `seed_data`).
pub fn benchmark_for(config: &DistillConfig) -> Result<(GmmSpec, Benchmark)> {
    let spec = GmmSpec::ring(&config.bench)?;
    let bench = make_benchmark(&spec, &mut RngStream::for_purpose(config.seed_data, StreamPurpose::Data))?;
    Ok((spec, bench))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 32,
            steps: 300,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

/// One tanh hidden layer followed by a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    dim: usize,
    hidden: usize,
    classes: usize,
    // [w1 (hidden x dim), b1, w2 (classes x hidden), b2]
    params: Vec<f64>,
}

impl Classifier {
    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (w1, rest) = self.params.split_at(self.hidden * self.dim);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.classes * self.hidden);
        (w1, b1, w2, b2)
    }

    fn hidden_and_logits(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (w1, b1, w2, b2) = self.split();
        let h: Vec<f64> = (0..self.hidden)
            .map(|i| {
                let row = &w1[i * self.dim..(i + 1) * self.dim];
                (b1[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh()
            })
            .collect();
        let logits = (0..self.classes)
            .map(|k| {
                let row = &w2[k * self.hidden..(k + 1) * self.hidden];
                b2[k] + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        (h, logits)
    }

    pub fn predict(&self, z: &Latent) -> usize {
        let (_, logits) = self.hidden_and_logits(z.as_slice());
        let mut best = 0;
        for (k, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = k;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &[Labeled]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data.iter().filter(|p| self.predict(&p.latent) == p.class).count();
        hits as f64 / data.len() as f64
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }
}

/// Full-batch Adam on mean cross-entropy for a fixed step budget.
pub fn train_classifier(train: &[Labeled], num_classes: usize, cfg: ClassifierConfig) -> Result<Classifier> {
    let dim = train
        .first()
        .ok_or_else(|| Error::config("classifier needs training data"))?
        .latent
        .dim();
    let mut seen = vec![false; num_classes];
    for p in train {
        if p.class >= num_classes {
            return Err(Error::config(format!("label {} outside 0..{num_classes}", p.class)));
        }
        seen[p.class] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::config(format!("classifier training set lacks class {c}")));
    }
    let h = cfg.hidden;
    let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::Eval);
    let mut params = Vec::with_capacity(h * dim + h + num_classes * h + num_classes);
    params.extend((0..h * dim).map(|_| rng.standard_normal() / (dim as f64).sqrt()));
    params.extend(std::iter::repeat_n(0.0, h));
    params.extend((0..num_classes * h).map(|_| rng.standard_normal() / (h as f64).sqrt()));
    params.extend(std::iter::repeat_n(0.0, num_classes));
    let mut model = Classifier {
        dim,
        hidden: h,
        classes: num_classes,
        params,
    };
    let mut opt = OptimizerState::new(
        model.params.len(),
        AdamWConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
    );
    let n = train.len() as f64;
    let mut grad = vec![0.0; model.params.len()];
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        {
            let (_, _, w2, _) = model.split();
            let w2 = w2.to_vec();
            let (gw1, rest) = grad.split_at_mut(h * dim);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(num_classes * h);
            for p in train {
                let x = p.latent.as_slice();
                let (hid, logits) = model.hidden_and_logits(x);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                loss += -(exps[p.class] / z).ln();
                let dlogit: Vec<f64> = exps
                    .iter()
                    .enumerate()
                    .map(|(k, e)| (e / z - if k == p.class { 1.0 } else { 0.0 }) / n)
                    .collect();
                let mut dh = vec![0.0; h];
                for k in 0..num_classes {
                    gb2[k] += dlogit[k];
                    for i in 0..h {
                        gw2[k * h + i] += dlogit[k] * hid[i];
                        dh[i] += dlogit[k] * w2[k * h + i];
                    }
                }
                for i in 0..h {
                    let da = dh[i] * (1.0 - hid[i] * hid[i]);
                    gb1[i] += da;
                    for j in 0..dim {
                        gw1[i * dim + j] += da * x[j];
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Training {
                what: "classifier loss",
                epoch: 0,
                step,
            });
        }
        opt.step(&mut model.params, &grad)?;
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub top1_accuracy: f64,
    pub mode_coverage: f64,
    pub mean_nn_distance: f64,
}

/// Fraction of mixture components with at least one same-class distilled
/// point within `COVERAGE_RADIUS_STD` standard deviations of the mean.
pub fn mode_coverage(distilled: &[Labeled], gmm: &GmmSpec) -> f64 {
    let radius = COVERAGE_RADIUS_STD * gmm.std;
    let mut covered = 0;
    for (c, cls) in gmm.classes.iter().enumerate() {
        for mean in &cls.means {
            if distilled
                .iter()
                .any(|p| p.class == c && p.latent.distance(mean) <= radius)
            {
                covered += 1;
            }
        }
    }
    covered as f64 / gmm.num_components() as f64
}

/// Mean over test points of the distance to the nearest distilled point of
/// the same class (any class if that class has none).
pub fn mean_nn_distance(distilled: &[Labeled], test: &[Labeled]) -> f64 {
    if test.is_empty() || distilled.is_empty() {
        return 0.0;
    }
    let total: f64 = test
        .iter()
        .map(|t| {
            let same = distilled
                .iter()
                .filter(|p| p.class == t.class)
                .map(|p| p.latent.distance(&t.latent))
                .fold(f64::INFINITY, f64::min);
            if same.is_finite() {
                same
            } else {
                distilled
                    .iter()
                    .map(|p| p.latent.distance(&t.latent))
                    .fold(f64::INFINITY, f64::min)
            }
        })
        .sum();
    total / test.len() as f64
}

/// Trains the downstream classifier on `distilled` and scores it on `test`.
pub fn evaluate(distilled: &[Labeled], test: &[Labeled], gmm: &GmmSpec, seed: u64) -> Result<EvalReport> {
    if distilled.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty distilled set".into()));
    }
    let clf = train_classifier(
        distilled,
        gmm.classes.len(),
        ClassifierConfig {
            seed,
            ..Default::default()
        },
    )?;
    Ok(EvalReport {
        top1_accuracy: clf.accuracy(test),
        mode_coverage: mode_coverage(distilled, gmm),
        mean_nn_distance: mean_nn_distance(distilled, test),
    })
}

fn by_class(data: &[Labeled]) -> Vec<Vec<&Labeled>> {
    let mut groups = vec![Vec::new(); dataset::num_classes(data)];
    for p in data {
        groups[p.class].push(p);
    }
    groups
}

/// `ipc` points per class drawn uniformly without replacement.
pub fn random_subset(train: &[Labeled], ipc: usize, rng: &mut RngStream) -> Vec<Labeled> {
    let mut out = Vec::new();
    for group in by_class(train) {
        let mut idx: Vec<usize> = (0..group.len()).collect();
        rng.shuffle(&mut idx);
        out.extend(idx.into_iter().take(ipc).map(|i| group[i].clone()));
    }
    out
}

fn class_mean(group: &[&Labeled]) -> Vec<f64> {
    let d = group[0].latent.dim();
    let mut m = vec![0.0; d];
    for p in group {
        for (a, v) in m.iter_mut().zip(p.latent.as_slice()) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= group.len() as f64);
    m
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy farthest-point selection per class, seeded at the point closest
/// to the class mean.
pub fn k_center_greedy(train: &[Labeled], ipc: usize) -> Vec<Labeled> {
    let mut out = Vec::new();
    for group in by_class(train) {
        if group.is_empty() {
            continue;
        }
        let mean = class_mean(&group);
        let first = (0..group.len())
            .min_by(|&a, &b| {
                dist2(group[a].latent.as_slice(), &mean).total_cmp(&dist2(group[b].latent.as_slice(), &mean))
            })
            .expect("nonempty");
        let mut chosen = vec![first];
        let mut nearest: Vec<f64> = group
            .iter()
            .map(|p| dist2(p.latent.as_slice(), group[first].latent.as_slice()))
            .collect();
        while chosen.len() < ipc.min(group.len()) {
            let next = (0..group.len())
                .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)))
                .expect("nonempty");
            chosen.push(next);
            for (i, n) in nearest.iter_mut().enumerate() {
                *n = n.min(dist2(group[i].latent.as_slice(), group[next].latent.as_slice()));
            }
        }
        out.extend(chosen.into_iter().map(|i| group[i].clone()));
    }
    out
}

/// Herding: greedily pick points so the running selection mean tracks the class mean.
pub fn herding(train: &[Labeled], ipc: usize) -> Vec<Labeled> {
    let mut out = Vec::new();
    for group in by_class(train) {
        if group.is_empty() {
            continue;
        }
        let mean = class_mean(&group);
        let d = mean.len();
        let mut sum = vec![0.0; d];
        let mut used = vec![false; group.len()];
        for k in 0..ipc.min(group.len()) {
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for (i, p) in group.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let cand: Vec<f64> = sum
                    .iter()
                    .zip(p.latent.as_slice())
                    .map(|(s, v)| (s + v) / (k + 1) as f64)
                    .collect();
                let dd = dist2(&cand, &mean);
                if dd < best_d {
                    best_d = dd;
                    best = Some(i);
                }
            }
            let i = best.expect("unused point exists");
            used[i] = true;
            for (s, v) in sum.iter_mut().zip(group[i].latent.as_slice()) {
                *s += v;
            }
            out.push(group[i].clone());
        }
    }
    out
}

/// Exact expected mode coverage of [`random_subset`] given the training pool:
/// a component stays uncovered only if none of the `ipc` draws lands in its
/// coverage ball (hypergeometric).
pub fn random_subset_expected_coverage(train: &[Labeled], gmm: &GmmSpec, ipc: usize) -> f64 {
    let radius = COVERAGE_RADIUS_STD * gmm.std;
    let groups = by_class(train);
    let mut total = 0.0;
    for (c, cls) in gmm.classes.iter().enumerate() {
        let pool = groups.get(c).map_or(&[][..], |g| g.as_slice());
        let n = pool.len();
        for mean in &cls.means {
            let m = pool.iter().filter(|p| p.latent.distance(mean) <= radius).count();
            let draws = ipc.min(n);
            let mut miss = 1.0;
            for i in 0..draws {
                miss *= (n - m).saturating_sub(i) as f64 / (n - i) as f64;
            }
            total += 1.0 - miss;
        }
    }
    total / gmm.num_components() as f64
}

/// Runs `f` over `items` on up to `jobs` threads; results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every item ran"))
        .collect()
}

type PretrainSlot = Arc<OnceLock<std::result::Result<Arc<DenoiserParams>, String>>>;

/// A benchmark plus a cache of pretrained models shared by every run that
/// uses it. Pretraining is keyed by the settings it depends on, so sweeping
/// fine-tuning knobs never retrains the base model.
pub struct Experiment {
    pub base: DistillConfig,
    pub gmm: GmmSpec,
    pub bench: Benchmark,
    pretrained: Mutex<HashMap<String, PretrainSlot>>,
}

/// Outcome of one distill-and-evaluate run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: DistillConfig,
    pub ipc: usize,
    pub seed: u64,
    pub report: std::result::Result<EvalReport, String>,
}

impl Experiment {
    pub fn new(base: DistillConfig) -> Result<Self> {
        base.validate()?;
        let (gmm, bench) = benchmark_for(&base)?;
        Ok(Experiment {
            base,
            gmm,
            bench,
            pretrained: Mutex::new(HashMap::new()),
        })
    }

    pub fn pretrained(&self, config: &DistillConfig) -> Result<Arc<DenoiserParams>> {
        let slot = {
            let mut map = self.pretrained.lock().expect("cache lock");
            map.entry(config.pretrain_key()).or_default().clone()
        };
        slot.get_or_init(|| {
            pretrain(config, &self.bench.train)
                .map(|p| Arc::new(p.params))
                .map_err(|e| format!("{}: {e}", e.category()))
        })
        .clone()
        .map_err(Error::State)
    }

    /// Distills once with `config` and evaluates the generated set at every IPC in `ipcs`.
    pub fn run(&self, config: &DistillConfig, ipcs: &[usize], seed: u64) -> Vec<RunResult> {
        let outcome = self
            .pretrained(config)
            .and_then(|pre| distill(&pre, config, &self.bench.train))
            .and_then(|run| {
                ipcs.iter()
                    .map(|&ipc| {
                        let set = generate_with_ipc(&run.params, config, ipc)?;
                        evaluate(&set, &self.bench.test, &self.gmm, seed)
                    })
                    .collect::<Result<Vec<_>>>()
            });
        match outcome {
            Ok(reports) => ipcs
                .iter()
                .zip(reports)
                .map(|(&ipc, r)| RunResult {
                    config: config.clone(),
                    ipc,
                    seed,
                    report: Ok(r),
                })
                .collect(),
            Err(e) => ipcs
                .iter()
                .map(|&ipc| RunResult {
                    config: config.clone(),
                    ipc,
                    seed,
                    report: Err(format!("{}: {e}", e.category())),
                })
                .collect(),
        }
    }

    /// Evaluates a selection baseline or the full training set.
    pub fn evaluate_set(&self, set: &[Labeled], seed: u64) -> Result<EvalReport> {
        evaluate(set, &self.bench.test, &self.gmm, seed)
    }
}

/// Named methods compared in the headline experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Memory-guided fine-tuning with max/max eviction and the configured weights.
    Full,
    /// Fine-tuning with both weights zero.
    DiffusionOnly,
    /// Configured weights with FIFO eviction on both memories.
    Fifo,
    Random,
    KCenter,
    Herding,
    FullData,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::DiffusionOnly => "diffusion_only",
            Method::Fifo => "fifo",
            Method::Random => "random",
            Method::KCenter => "k_center",
            Method::Herding => "herding",
            Method::FullData => "full_data",
        }
    }

    /// The run config this method uses on top of `base`, for generative methods.
    pub fn config(&self, base: &DistillConfig) -> Option<DistillConfig> {
        let mut c = base.clone();
        match self {
            Method::Full => {
                c.policy_real = EvictionPolicy::MaxSimilaritySum;
                c.policy_gen = EvictionPolicy::MaxSimilaritySum;
            }
            Method::DiffusionOnly => c.lambda = LossWeights::ZERO,
            Method::Fifo => {
                c.policy_real = EvictionPolicy::Oldest;
                c.policy_gen = EvictionPolicy::Oldest;
            }
            _ => return None,
        }
        Some(c)
    }
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub method: Method,
    pub ipc: usize,
    pub seed: u64,
    pub report: std::result::Result<EvalReport, String>,
}

/// Every `(method, seed)` pair evaluated at every IPC.
pub fn compare_methods(
    exp: &Experiment,
    methods: &[Method],
    seeds: &[u64],
    ipcs: &[usize],
    jobs: usize,
) -> Vec<MethodResult> {
    let tasks: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    parallel_map(&tasks, jobs, |&(method, seed)| {
        let cfg = exp.base.with_run_seed(seed);
        if let Some(mc) = method.config(&cfg) {
            return exp
                .run(&mc, ipcs, seed)
                .into_iter()
                .map(|r| MethodResult {
                    method,
                    ipc: r.ipc,
                    seed,
                    report: r.report,
                })
                .collect::<Vec<_>>();
        }
        ipcs.iter()
            .map(|&ipc| {
                let set = match method {
                    Method::Random => random_subset(
                        &exp.bench.train,
                        ipc,
                        &mut RngStream::for_purpose(seed, StreamPurpose::Sampling).substream(ipc as u64),
                    ),
                    Method::KCenter => k_center_greedy(&exp.bench.train, ipc),
                    Method::Herding => herding(&exp.bench.train, ipc),
                    _ => exp.bench.train.clone(),
                };
                MethodResult {
                    method,
                    ipc,
                    seed,
                    report: exp.evaluate_set(&set, seed).map_err(|e| format!("{}: {e}", e.category())),
                }
            })
            .collect()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// One row of an ablation table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub policy_real: EvictionPolicy,
    pub policy_gen: EvictionPolicy,
    pub ipc: usize,
    pub seed: u64,
    pub report: std::result::Result<EvalReport, String>,
}

/// The 2x2 grid of similarity policies over both memories.
pub fn min_max_grid() -> Vec<(EvictionPolicy, EvictionPolicy)> {
    use EvictionPolicy::{MaxSimilaritySum as Max, MinSimilaritySum as Min};
    vec![(Min, Min), (Max, Min), (Min, Max), (Max, Max)]
}

/// One distill per `(cell, seed)`, evaluated at every IPC. Rows come out
/// ordered by cell, then seed, then IPC; failures are kept as error rows.
pub fn run_ablation(
    exp: &Experiment,
    grid: &[(EvictionPolicy, EvictionPolicy)],
    ipcs: &[usize],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<AblationRow>> {
    if grid.is_empty() || ipcs.is_empty() || seeds.is_empty() {
        return Err(Error::config("ablation needs a nonempty grid, IPC list and seed list"));
    }
    let tasks: Vec<((EvictionPolicy, EvictionPolicy), u64)> = grid
        .iter()
        .flat_map(|&cell| seeds.iter().map(move |&s| (cell, s)))
        .collect();
    let rows = parallel_map(&tasks, jobs, |&((pr, pg), seed)| {
        let mut cfg = exp.base.with_run_seed(seed);
        cfg.policy_real = pr;
        cfg.policy_gen = pg;
        exp.run(&cfg, ipcs, seed)
            .into_iter()
            .map(|r| AblationRow {
                policy_real: pr,
                policy_gen: pg,
                ipc: r.ipc,
                seed,
                report: r.report,
            })
            .collect::<Vec<_>>()
    });
    Ok(rows.into_iter().flatten().collect())
}

fn report_fields(report: &std::result::Result<EvalReport, String>) -> [String; 5] {
    match report {
        Ok(r) => [
            "ok".into(),
            format!("{:?}", r.top1_accuracy),
            format!("{:?}", r.mode_coverage),
            format!("{:?}", r.mean_nn_distance),
            String::new(),
        ],
        Err(e) => ["error".into(), String::new(), String::new(), String::new(), e.clone()],
    }
}

const REPORT_HEADER: [&str; 5] = ["status", "top1_accuracy", "mode_coverage", "mean_nn_distance", "error"];

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["policy_real", "policy_gen", "ipc", "seed"];
    header.extend(REPORT_HEADER);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.policy_real.to_string(),
            r.policy_gen.to_string(),
            r.ipc.to_string(),
            r.seed.to_string(),
        ];
        rec.extend(report_fields(&r.report));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub policy_real: EvictionPolicy,
    pub policy_gen: EvictionPolicy,
    pub ipc: usize,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub coverage_mean: f64,
}

/// Per-cell mean and standard deviation over seeds (successful runs only).
pub fn summarize_ablation(rows: &[AblationRow]) -> Vec<AblationCell> {
    let mut keys: Vec<(EvictionPolicy, EvictionPolicy, usize)> = Vec::new();
    for r in rows {
        let k = (r.policy_real, r.policy_gen, r.ipc);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(pr, pg, ipc)| {
            let ok: Vec<EvalReport> = rows
                .iter()
                .filter(|r| r.policy_real == pr && r.policy_gen == pg && r.ipc == ipc)
                .filter_map(|r| r.report.as_ref().ok().copied())
                .collect();
            let acc: Vec<f64> = ok.iter().map(|r| r.top1_accuracy).collect();
            let cov: Vec<f64> = ok.iter().map(|r| r.mode_coverage).collect();
            let (am, asd) = mean_std(&acc);
            AblationCell {
                policy_real: pr,
                policy_gen: pg,
                ipc,
                runs: ok.len(),
                accuracy_mean: am,
                accuracy_std: asd,
                coverage_mean: mean_std(&cov).0,
            }
        })
        .collect()
}

pub fn write_ablation_summary_csv<W: Write>(cells: &[AblationCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "policy_real",
        "policy_gen",
        "ipc",
        "runs",
        "accuracy_mean",
        "accuracy_std",
        "coverage_mean",
    ])?;
    for c in cells {
        w.write_record([
            c.policy_real.to_string(),
            c.policy_gen.to_string(),
            c.ipc.to_string(),
            c.runs.to_string(),
            format!("{:?}", c.accuracy_mean),
            format!("{:?}", c.accuracy_std),
            format!("{:?}", c.coverage_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Knobs a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    LambdaReal,
    LambdaGen,
    /// Sets both memory capacities.
    Capacity,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::LambdaReal => "lambda_real",
            SweepParam::LambdaGen => "lambda_gen",
            SweepParam::Capacity => "capacity",
        }
    }

    pub fn apply(&self, config: &mut DistillConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::LambdaReal => config.lambda.lambda_real = value,
            SweepParam::LambdaGen => config.lambda.lambda_gen = value,
            SweepParam::Capacity => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::config(format!("capacity must be a positive integer, got {value}")));
                }
                config.capacity_real = value as usize;
                config.capacity_gen = value as usize;
            }
        }
        config.validate()
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_real" => Ok(SweepParam::LambdaReal),
            "lambda_gen" => Ok(SweepParam::LambdaGen),
            "capacity" => Ok(SweepParam::Capacity),
            other => Err(Error::config(format!(
                "unknown sweep parameter `{other}` (expected lambda_real, lambda_gen or capacity)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub seed: u64,
    pub report: std::result::Result<EvalReport, String>,
}

/// One run per `(value, seed)` at the base config's IPC.
pub fn run_sweep(
    exp: &Experiment,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::config("sweep needs nonempty value and seed lists"));
    }
    let tasks: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    Ok(parallel_map(&tasks, jobs, |&(value, seed)| {
        let mut cfg = exp.base.with_run_seed(seed);
        let report = match param.apply(&mut cfg, value) {
            Ok(()) => exp
                .run(&cfg, &[cfg.ipc], seed)
                .pop()
                .expect("one ipc requested")
                .report,
            Err(e) => Err(format!("{}: {e}", e.category())),
        };
        SweepRow {
            param,
            value,
            seed,
            report,
        }
    }))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["parameter", "value", "seed"];
    header.extend(REPORT_HEADER);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.param.name().to_string(), format!("{:?}", r.value), r.seed.to_string()];
        rec.extend(report_fields(&r.report));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Accuracy band over seeds for one swept value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub runs: usize,
    pub accuracy_min: f64,
    pub accuracy_mean: f64,
    pub accuracy_max: f64,
    pub coverage_mean: f64,
}

pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepPoint> {
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    values
        .into_iter()
        .map(|v| {
            let ok: Vec<EvalReport> = rows
                .iter()
                .filter(|r| r.value == v)
                .filter_map(|r| r.report.as_ref().ok().copied())
                .collect();
            let acc: Vec<f64> = ok.iter().map(|r| r.top1_accuracy).collect();
            SweepPoint {
                value: v,
                runs: ok.len(),
                accuracy_min: acc.iter().cloned().fold(f64::INFINITY, f64::min),
                accuracy_mean: mean_std(&acc).0,
                accuracy_max: acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                coverage_mean: mean_std(&ok.iter().map(|r| r.mode_coverage).collect::<Vec<_>>()).0,
            }
        })
        .collect()
}

pub fn write_sweep_summary_csv<W: Write>(param: SweepParam, points: &[SweepPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "parameter",
        "value",
        "runs",
        "accuracy_min",
        "accuracy_mean",
        "accuracy_max",
        "coverage_mean",
    ])?;
    for p in points {
        w.write_record([
            param.name().to_string(),
            format!("{:?}", p.value),
            p.runs.to_string(),
            format!("{:?}", p.accuracy_min),
            format!("{:?}", p.accuracy_mean),
            format!("{:?}", p.accuracy_max),
            format!("{:?}", p.coverage_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Regular 2-D grid of `n x n` points over a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub n: usize,
}

impl GridBounds {
    pub fn square(half_width: f64, n: usize) -> Self {
        GridBounds {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
            n,
        }
    }

    fn points(&self) -> Vec<(f64, f64)> {
        let coord = |lo: f64, hi: f64, i: usize| {
            if self.n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (self.n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.n * self.n);
        for j in 0..self.n {
            for i in 0..self.n {
                out.push((coord(self.x_min, self.x_max, i), coord(self.y_min, self.y_max, j)));
            }
        }
        out
    }
}

/// Unit denoising direction at a grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldArrow {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

/// `(z_hat - z) / |z_hat - z|` at every grid point for timestep `t`, where
/// `z_hat` is the one-step clean estimate. Zero-length directions stay zero.
pub fn gradient_field(
    params: &DenoiserParams,
    sched: &VarianceSchedule,
    bounds: &GridBounds,
    t: usize,
    class: usize,
) -> Result<Vec<FieldArrow>> {
    if params.arch().latent_dim != 2 {
        return Err(Error::config("gradient field needs a 2-D latent space"));
    }
    let c = ConditioningVector::new(class, params.arch().num_classes)?;
    bounds
        .points()
        .into_iter()
        .map(|(x, y)| {
            let z = Latent::new(vec![x, y])?;
            let eps_hat = params.forward(&z, t, &c)?;
            let z_hat = predict_z0(&z, t, &eps_hat, sched)?;
            let (dx, dy) = (z_hat[0] - x, z_hat[1] - y);
            let len = (dx * dx + dy * dy).sqrt();
            let (dx, dy) = if len > 0.0 { (dx / len, dy / len) } else { (0.0, 0.0) };
            Ok(FieldArrow { x, y, dx, dy })
        })
        .collect()
}

pub fn write_field_csv<W: Write>(arrows: &[FieldArrow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "dx", "dy"])?;
    for a in arrows {
        w.write_record([
            format!("{:?}", a.x),
            format!("{:?}", a.y),
            format!("{:?}", a.dx),
            format!("{:?}", a.dy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Points drawn on top of the arrow field.
#[derive(Debug, Clone)]
pub struct Overlay<'a> {
    pub points: &'a [Labeled],
    pub color: &'a str,
    pub radius: f64,
}

/// Self-contained SVG of the arrow field with optional point overlays.
pub fn write_field_svg<W: Write>(
    arrows: &[FieldArrow],
    bounds: &GridBounds,
    overlays: &[Overlay<'_>],
    mut writer: W,
) -> Result<()> {
    let size = 600.0;
    let sx = |x: f64| (x - bounds.x_min) / (bounds.x_max - bounds.x_min).max(1e-12) * size;
    let sy = |y: f64| size - (y - bounds.y_min) / (bounds.y_max - bounds.y_min).max(1e-12) * size;
    let cell = if bounds.n > 1 { size / (bounds.n - 1) as f64 } else { size / 2.0 };
    let len = 0.4 * cell;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="-10 -10 {w} {w}">"#,
        w = size + 20.0
    );
    s.push_str(
        r##"<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#445"/></marker></defs>"##,
    );
    s.push('\n');
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{size}" height="{size}" fill="white" stroke="#bbb"/>"##);
    for ov in overlays {
        for p in ov.points {
            if p.latent.dim() < 2 {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{}" fill="{}" fill-opacity="0.6"/>"#,
                sx(p.latent[0]),
                sy(p.latent[1]),
                ov.radius,
                ov.color
            );
        }
    }
    for a in arrows {
        let (x0, y0) = (sx(a.x), sy(a.y));
        let _ = writeln!(
            s,
            r##"<line x1="{x0:.2}" y1="{y0:.2}" x2="{:.2}" y2="{:.2}" stroke="#445" stroke-width="1" marker-end="url(#head)"/>"##,
            x0 + a.dx * len,
            y0 - a.dy * len
        );
    }
    s.push_str("</svg>\n");
    writer.write_all(s.as_bytes())?;
    writer.flush()?;
    Ok(())
}
