//! Toy class-conditional latent diffusion.
//!
//! Forward noising is `z_t = sqrt(ab_t) z_0 + sqrt(1 - ab_t) eps` with the
//! cumulative schedule `ab_t`. A small SiLU MLP predicts `eps` from
//! `(z_t, time features, one-hot class)`. The clean-latent estimate used by
//! the memory losses inverts the forward step with the predicted noise.

use crate::error::{Error, Result};
use crate::memory::MemoryBank;
use crate::numerics::{cosine_grad_wrt_first, gaussian_draw, Latent, RngStream};
use crate::objectives::{combined_loss, gen_loss, real_loss, LossBreakdown, LossWeights};

pub const TIME_FEATURES: usize = 8;

/// Cumulative noise-retention coefficients `ab_1 > ab_2 > ... > ab_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl VarianceSchedule {
    /// Linearly interpolated betas over `timesteps` steps.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::config(format!("timesteps must be >= 2, got {timesteps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let span = (timesteps - 1) as f64;
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
            .collect();
        let mut acc = 1.0;
        let alpha_bar: Vec<f64> = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        // Equal betas at the high end can underflow into a flat tail.
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) || alpha_bar[timesteps - 1] <= 0.0 {
            return Err(Error::config("schedule is not strictly decreasing in (0, 1)"));
        }
        Ok(VarianceSchedule { betas, alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ab_t` for `t` in `1..=T`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::Index(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        Ok(())
    }
}

impl Default for VarianceSchedule {
    fn default() -> Self {
        VarianceSchedule::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// `sqrt(ab_t) z0 + sqrt(1 - ab_t) eps`.
pub fn forward_noise(z0: &Latent, t: usize, eps: &Latent, sched: &VarianceSchedule) -> Result<Latent> {
    let ab = sched.alpha_bar(t)?;
    forward_noise_with(z0, eps, ab)
}

pub(crate) fn forward_noise_with(z0: &Latent, eps: &Latent, alpha_bar: f64) -> Result<Latent> {
    if z0.dim() != eps.dim() {
        return Err(Error::Domain("forward_noise: dimension mismatch".into()));
    }
    let a = alpha_bar.sqrt();
    let s = (1.0 - alpha_bar).sqrt();
    Latent::new(
        z0.as_slice()
            .iter()
            .zip(eps.as_slice())
            .map(|(z, e)| a * z + s * e)
            .collect(),
    )
}

/// Inverts [`forward_noise`] with a noise estimate: `(z_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t)`.
pub fn predict_z0(z_t: &Latent, t: usize, eps_hat: &Latent, sched: &VarianceSchedule) -> Result<Latent> {
    let ab = sched.alpha_bar(t)?;
    predict_z0_with(z_t, eps_hat, ab)
}

pub(crate) fn predict_z0_with(z_t: &Latent, eps_hat: &Latent, alpha_bar: f64) -> Result<Latent> {
    if z_t.dim() != eps_hat.dim() {
        return Err(Error::Domain("predict_z0: dimension mismatch".into()));
    }
    if alpha_bar <= 0.0 {
        return Err(Error::Domain("predict_z0 needs alpha_bar > 0".into()));
    }
    let a = alpha_bar.sqrt();
    let s = (1.0 - alpha_bar).sqrt();
    Latent::new(
        z_t.as_slice()
            .iter()
            .zip(eps_hat.as_slice())
            .map(|(z, e)| (z - s * e) / a)
            .collect(),
    )
}

/// Squared L2 distance between predicted and true noise.
pub fn diffusion_loss(eps_hat: &Latent, eps: &Latent) -> f64 {
    eps_hat
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Sinusoidal features of `t / T` at four octaves.
pub fn time_embedding(t: usize, timesteps: usize) -> [f64; TIME_FEATURES] {
    let tau = t as f64 / timesteps as f64;
    let mut out = [0.0; TIME_FEATURES];
    for k in 0..TIME_FEATURES / 2 {
        let w = std::f64::consts::PI * (1u32 << k) as f64;
        out[2 * k] = (w * tau).sin();
        out[2 * k + 1] = (w * tau).cos();
    }
    out
}

/// Class label with its one-hot embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditioningVector {
    class: usize,
    num_classes: usize,
}

impl ConditioningVector {
    pub fn new(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::Index(format!("class {class} outside 0..{num_classes}")));
        }
        Ok(ConditioningVector { class, num_classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embedding(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.class] = 1.0;
        v
    }
}

/// Shape of the noise predictor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserArch {
    pub latent_dim: usize,
    pub num_classes: usize,
    pub hidden: Vec<usize>,
    /// Training step count `T`, used to normalize the time features.
    pub timesteps: usize,
}

impl DenoiserArch {
    pub fn input_dim(&self) -> usize {
        self.latent_dim + TIME_FEATURES + self.num_classes
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(self.latent_dim);
        w
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Weights of the noise predictor, stored as one flat vector laid out
/// layer by layer as `W (out x in, row-major)` followed by `b (out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    arch: DenoiserArch,
    params: Vec<f64>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Per-layer pre-activations kept for the backward pass.
struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl DenoiserParams {
    /// Gaussian initialization with variance `1 / fan_in`, zero biases.
    pub fn init(arch: DenoiserArch, rng: &mut RngStream) -> Result<Self> {
        if arch.latent_dim == 0 || arch.num_classes == 0 || arch.timesteps < 2 {
            return Err(Error::config("denoiser needs latent_dim, num_classes >= 1 and timesteps >= 2"));
        }
        if arch.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be >= 1"));
        }
        let mut params = Vec::with_capacity(arch.num_params());
        for w in arch.widths().windows(2) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.standard_normal() * scale));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(DenoiserParams { arch, params })
    }

    pub fn zeros(arch: DenoiserArch) -> Self {
        let n = arch.num_params();
        DenoiserParams {
            arch,
            params: vec![0.0; n],
        }
    }

    pub fn from_parts(arch: DenoiserArch, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.num_params() {
            return Err(Error::config(format!(
                "architecture expects {} parameters, got {}",
                arch.num_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("non-finite denoiser parameter".into()));
        }
        Ok(DenoiserParams { arch, params })
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn input(&self, z_t: &Latent, t: usize, c: &ConditioningVector) -> Result<Vec<f64>> {
        if z_t.dim() != self.arch.latent_dim {
            return Err(Error::config(format!(
                "denoiser expects latent dimension {}, got {}",
                self.arch.latent_dim,
                z_t.dim()
            )));
        }
        if c.num_classes() != self.arch.num_classes {
            return Err(Error::config(format!(
                "denoiser expects {} classes, got {}",
                self.arch.num_classes,
                c.num_classes()
            )));
        }
        let mut x = Vec::with_capacity(self.arch.input_dim());
        x.extend_from_slice(z_t.as_slice());
        x.extend_from_slice(&time_embedding(t, self.arch.timesteps));
        x.extend(c.embedding());
        Ok(x)
    }

    fn forward_cached(&self, x: Vec<f64>) -> (Vec<f64>, ForwardCache) {
        let widths = self.arch.widths();
        let layers = widths.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(layers),
            pre: Vec::with_capacity(layers),
        };
        let mut a = x;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            let next = if l + 1 < layers {
                z.iter().map(|&v| silu(v)).collect()
            } else {
                z.clone()
            };
            cache.inputs.push(std::mem::replace(&mut a, next));
            cache.pre.push(z);
        }
        (a, cache)
    }

    /// Accumulates `d out / d params * d_out` into `grad`.
    fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
        let widths = self.arch.widths();
        let layers = widths.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += widths[l] * widths[l + 1] + widths[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let a = &cache.inputs[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    gb[o] += d;
                    if d != 0.0 {
                        for (g, ai) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a) {
                            *g += d * ai;
                        }
                    }
                }
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let prev_pre = &cache.pre[l - 1];
                let mut next = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (nx, wi) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *nx += d * wi;
                    }
                }
                for (nx, p) in next.iter_mut().zip(prev_pre) {
                    *nx *= silu_grad(*p);
                }
                delta = next;
            }
        }
    }

    /// Predicted noise `eps_theta(z_t, t, c)`.
    pub fn forward(&self, z_t: &Latent, t: usize, c: &ConditioningVector) -> Result<Latent> {
        let x = self.input(z_t, t, c)?;
        let (out, _) = self.forward_cached(x);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("denoiser produced a non-finite output".into()));
        }
        Ok(Latent::from_vec_unchecked(out))
    }
}

/// One noised training element: the clean latent, its class, and the
/// timestep and noise drawn for it.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub z0: Latent,
    pub class: usize,
    pub t: usize,
    pub eps: Latent,
}

/// Gradient and diagnostics of one mini-batch of the combined loss.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// Gradient of the batch-mean total loss.
    pub grad: Vec<f64>,
    /// Mean of the per-sample breakdowns.
    pub mean: LossBreakdown,
    pub per_sample: Vec<LossBreakdown>,
    /// Clean-latent estimate of each batch element, evaluated before the update.
    pub z_hat: Vec<Latent>,
}

/// Shared forward pass for [`loss_gradient`] and [`batch_loss`].
fn per_sample(
    net: &DenoiserParams,
    sched: &VarianceSchedule,
    ex: &TrainingExample,
    bank: Option<&MemoryBank>,
    weights: LossWeights,
) -> Result<(LossBreakdown, Latent, Vec<f64>, ForwardCache)> {
    let ab = sched.alpha_bar(ex.t)?;
    let a = ab.sqrt();
    let s = (1.0 - ab).sqrt();
    let z_t = forward_noise_with(&ex.z0, &ex.eps, ab)?;
    let c = ConditioningVector::new(ex.class, net.arch.num_classes)?;
    let (eps_hat, cache) = net.forward_cached(net.input(&z_t, ex.t, &c)?);
    let z_hat = Latent::from_vec_unchecked(
        z_t.as_slice()
            .iter()
            .zip(&eps_hat)
            .map(|(z, e)| (z - s * e) / a)
            .collect(),
    );
    let diff: f64 = eps_hat
        .iter()
        .zip(ex.eps.as_slice())
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    let mut d_eps: Vec<f64> = eps_hat
        .iter()
        .zip(ex.eps.as_slice())
        .map(|(p, q)| 2.0 * (p - q))
        .collect();

    let (mut rl, mut gl) = (0.0, 0.0);
    let (mut ri, mut gi) = (None, None);
    if let Some(bank) = bank.filter(|_| !weights.is_zero()) {
        let d = z_hat.dim();
        let mut d_zhat = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        let real_mem = bank.real(ex.class);
        let r = real_loss(&z_hat, real_mem);
        if let Some(i) = r.selected {
            rl = r.value;
            ri = Some(i);
            let target = real_mem.get(i).expect("selected index in range");
            cosine_grad_wrt_first(z_hat.as_slice(), target.as_slice(), &mut tmp);
            for (g, v) in d_zhat.iter_mut().zip(&tmp) {
                *g -= weights.lambda_real * v;
            }
        }
        let gen_mem = bank.gen(ex.class);
        let g = gen_loss(&z_hat, gen_mem);
        if let Some(i) = g.selected {
            gl = g.value;
            gi = Some(i);
            let target = gen_mem.get(i).expect("selected index in range");
            cosine_grad_wrt_first(z_hat.as_slice(), target.as_slice(), &mut tmp);
            for (g, v) in d_zhat.iter_mut().zip(&tmp) {
                *g += weights.lambda_gen * v;
            }
        }
        // z_hat = (z_t - s eps_hat) / a
        for (de, dz) in d_eps.iter_mut().zip(&d_zhat) {
            *de -= s / a * dz;
        }
    }
    let mut b = combined_loss(diff, rl, gl, weights);
    b.selected_real_index = ri;
    b.selected_gen_index = gi;
    Ok((b, z_hat, d_eps, cache))
}

/// Analytic gradient of the batch-mean combined loss with respect to the
/// denoiser parameters. Memory contents are treated as constants and the
/// min/max selection is frozen at the current estimate.
pub fn loss_gradient(
    net: &DenoiserParams,
    sched: &VarianceSchedule,
    batch: &[TrainingExample],
    bank: Option<&MemoryBank>,
    weights: LossWeights,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Domain("loss_gradient on an empty batch".into()));
    }
    let mut grad = vec![0.0; net.params.len()];
    let mut per = Vec::with_capacity(batch.len());
    let mut z_hats = Vec::with_capacity(batch.len());
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        let (b, z_hat, mut d_eps, cache) = per_sample(net, sched, ex, bank, weights)?;
        d_eps.iter_mut().for_each(|v| *v *= scale);
        net.backward(&cache, &d_eps, &mut grad);
        per.push(b);
        z_hats.push(z_hat);
    }
    let mean = mean_breakdown(&per);
    Ok(BatchGradient {
        grad,
        mean,
        per_sample: per,
        z_hat: z_hats,
    })
}

/// Batch-mean combined loss, the scalar whose gradient [`loss_gradient`] returns.
pub fn batch_loss(
    net: &DenoiserParams,
    sched: &VarianceSchedule,
    batch: &[TrainingExample],
    bank: Option<&MemoryBank>,
    weights: LossWeights,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("batch_loss on an empty batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        total += per_sample(net, sched, ex, bank, weights)?.0.total;
    }
    Ok(total / batch.len() as f64)
}

pub(crate) fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for b in items {
        m.diffusion += b.diffusion;
        m.real_term += b.real_term;
        m.gen_term += b.gen_term;
        m.total += b.total;
    }
    m.diffusion /= n;
    m.real_term /= n;
    m.gen_term /= n;
    m.total /= n;
    m
}

/// Evenly strided timesteps in `1..=T`, ascending, always ending at `T`.
pub fn sampling_timesteps(timesteps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > timesteps {
        return Err(Error::config(format!(
            "sampling steps must be in 1..={timesteps}, got {steps}"
        )));
    }
    if steps == 1 {
        return Ok(vec![timesteps]);
    }
    let span = (timesteps - 1) as f64;
    Ok((0..steps)
        .map(|k| 1 + (k as f64 * span / (steps - 1) as f64).round() as usize)
        .collect())
}

/// Deterministic denoising recursion from a given starting noise. Returns
/// the intermediate states, ending with the final clean estimate.
pub fn sample_trajectory(
    net: &DenoiserParams,
    sched: &VarianceSchedule,
    c: &ConditioningVector,
    steps: usize,
    noise: Latent,
) -> Result<Vec<Latent>> {
    let ts = sampling_timesteps(sched.timesteps(), steps)?;
    let mut x = noise;
    let mut traj = vec![x.clone()];
    for k in (0..ts.len()).rev() {
        let t = ts[k];
        let ab = sched.alpha_bar(t)?;
        let step = ts.len() - 1 - k;
        let eps_hat = net.forward(&x, t, c).map_err(|_| Error::Sampling { step })?;
        let z0 = predict_z0_with(&x, &eps_hat, ab).map_err(|_| Error::Sampling { step })?;
        x = if k == 0 {
            z0
        } else {
            let prev = sched.alpha_bar(ts[k - 1])?;
            forward_noise_with(&z0, &eps_hat, prev).map_err(|_| Error::Sampling { step })?
        };
        traj.push(x.clone());
    }
    Ok(traj)
}

/// Draws the starting noise from `rng` and runs [`sample_trajectory`].
pub fn sample(
    net: &DenoiserParams,
    sched: &VarianceSchedule,
    c: &ConditioningVector,
    steps: usize,
    rng: &mut RngStream,
) -> Result<Latent> {
    let noise = gaussian_draw(rng, net.arch.latent_dim);
    let traj = sample_trajectory(net, sched, c, steps, noise)?;
    Ok(traj.into_iter().last().expect("trajectory is nonempty"))
}
