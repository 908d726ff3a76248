//! Numeric substrate shared by every other module: latent vectors, cosine
//! similarity, per-purpose random streams and the AdamW optimizer.

use std::fmt;
use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A finite real vector living in the latent space.
#[derive(Clone, PartialEq)]
pub struct Latent(Vec<f64>);

impl Latent {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("latent must have dimension >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "latent coordinate {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Latent(values))
    }

    /// Builds a latent without the finiteness check. Callers own the invariant.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Latent(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Latent(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Latent) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn scaled(&self, k: f64) -> Latent {
        Latent(self.0.iter().map(|v| v * k).collect())
    }

    pub fn distance(&self, other: &Latent) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Index<usize> for Latent {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Debug for Latent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl TryFrom<Vec<f64>> for Latent {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Latent::new(values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two nonzero vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Latent, b: &Latent) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Domain(format!(
            "cosine similarity of mismatched dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.norm();
    if na == 0.0 {
        return Err(Error::Domain("cosine similarity: first argument has zero norm".into()));
    }
    let nb = b.norm();
    if nb == 0.0 {
        return Err(Error::Domain("cosine similarity: second argument has zero norm".into()));
    }
    Ok(cosine_raw(a.as_slice(), b.as_slice(), na, nb))
}

/// Cosine with precomputed norms; both norms must be nonzero.
pub(crate) fn cosine_raw(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Gradient of `cos(x, y)` with respect to `x`, written into `out`.
///
/// `d/dx cos(x, y) = y / (|x||y|) - cos(x, y) * x / |x|^2`
pub(crate) fn cosine_grad_wrt_first(x: &[f64], y: &[f64], out: &mut [f64]) {
    let nx = norm(x);
    let ny = norm(y);
    let c = dot(x, y) / (nx * ny);
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = yi / (nx * ny) - c * xi / (nx * nx);
    }
}

/// Purpose tags for random streams. Each purpose gets an independent
/// ChaCha stream so that, for example, changing the batch size never
/// perturbs parameter initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Data = 0,
    Init = 1,
    Noise = 2,
    Sampling = 3,
    Shuffle = 4,
    Timestep = 5,
    Eval = 6,
}

/// Seeded, portable random stream (ChaCha8 keyed by seed, with a stream id).
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn for_purpose(seed: u64, purpose: StreamPurpose) -> Self {
        Self::new(seed, purpose as u64)
    }

    /// Derives a child stream, e.g. one per class or per seed inside a grid.
    pub fn substream(&self, index: u64) -> Self {
        let child = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
        Self::new(child, self.stream_id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// `dim` independent standard-normal draws.
pub fn gaussian_draw(rng: &mut RngStream, dim: usize) -> Latent {
    Latent((0..dim).map(|_| rng.standard_normal()).collect())
}

/// Hyperparameters of the AdamW update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: usize,
    epoch: usize,
}

impl OptimizerState {
    pub fn new(num_params: usize, config: AdamWConfig) -> Self {
        OptimizerState {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            epoch: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Epoch index reported in training errors.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::config(format!(
                "optimizer shape mismatch: state {}, params {}, grads {}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                what: "gradient",
                epoch: self.epoch,
                step: self.step_count,
            });
        }
        self.step_count += 1;
        let AdamWConfig {
            learning_rate: lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lat(v: &[f64]) -> Latent {
        Latent::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_hand_examples() {
        let v = lat(&[0.3, -2.0, 5.0]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&lat(&[1.0, 0.0]), &lat(&[0.0, 1.0])).unwrap(), 0.0);
        // (1*2 + 2*1) / (sqrt5 * sqrt5)
        let c = cosine_similarity(&lat(&[1.0, 2.0]), &lat(&[2.0, 1.0])).unwrap();
        assert!((c - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_norm_names_argument() {
        let z = Latent::zeros(2);
        let v = lat(&[1.0, 0.0]);
        let e = cosine_similarity(&z, &v).unwrap_err().to_string();
        assert!(e.contains("first"), "{e}");
        let e = cosine_similarity(&v, &z).unwrap_err().to_string();
        assert!(e.contains("second"), "{e}");
    }

    #[test]
    fn latent_rejects_non_finite() {
        assert!(Latent::new(vec![1.0, f64::NAN]).is_err());
        assert!(Latent::new(vec![]).is_err());
    }

    #[test]
    fn gaussian_draw_is_reproducible() {
        let a = gaussian_draw(&mut RngStream::new(0, 0), 5);
        let b = gaussian_draw(&mut RngStream::new(0, 0), 5);
        assert_eq!(a.as_slice(), b.as_slice());
        let c = gaussian_draw(&mut RngStream::new(0, 1), 5);
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn gaussian_draw_moments() {
        let mut rng = RngStream::new(0, 0);
        let n = 100_000;
        let d = 3;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for _ in 0..n {
            let z = gaussian_draw(&mut rng, d);
            for k in 0..d {
                sum[k] += z[k];
                sq[k] += z[k] * z[k];
            }
        }
        for k in 0..d {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "coordinate {k} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "coordinate {k} var {var}");
        }
    }

    #[test]
    fn adamw_zero_grad_no_decay_is_identity() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut opt = OptimizerState::new(3, AdamWConfig::default());
        for _ in 0..10 {
            opt.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(opt.step_count(), 10);
    }

    #[test]
    fn adamw_single_step_closed_form() {
        // m_hat = g, v_hat = g^2 after one bias-corrected step: p - lr * g / (|g| + eps)
        let mut p = vec![1.0];
        let mut opt = OptimizerState::new(1, AdamWConfig::default());
        opt.step(&mut p, &[1.0]).unwrap();
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn adamw_decoupled_decay_is_geometric() {
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut p = vec![2.0];
        let mut opt = OptimizerState::new(1, cfg);
        let ratio: f64 = 1.0 - 1e-3 * 0.01;
        for k in 1..=100 {
            opt.step(&mut p, &[0.0]).unwrap();
            assert!((p[0] - 2.0 * ratio.powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn adamw_rejects_non_finite_gradient() {
        let mut p = vec![0.0; 2];
        let mut opt = OptimizerState::new(2, AdamWConfig::default());
        opt.set_epoch(3);
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        match opt.step(&mut p, &[f64::INFINITY, 0.0]) {
            Err(Error::Training { epoch: 3, step: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
            .prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(a in nonzero_vec(4), b in nonzero_vec(4)) {
            let (a, b) = (lat(&a), lat(&b));
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn cosine_scale_invariant(a in nonzero_vec(3), b in nonzero_vec(3), k in 0.01f64..100.0) {
            let (a, b) = (lat(&a), lat(&b));
            let base = cosine_similarity(&a, &b).unwrap();
            let scaled = cosine_similarity(&a.scaled(k), &b).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * base.abs().max(1.0));
            prop_assert!((cosine_similarity(&a, &a.scaled(k)).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((cosine_similarity(&a, &a.scaled(-k)).unwrap() + 1.0).abs() < 1e-12);
        }

        #[test]
        fn cosine_gradient_matches_finite_differences(a in nonzero_vec(3), b in nonzero_vec(3)) {
            prop_assume!(norm(&a) > 0.5);
            let mut g = vec![0.0; 3];
            cosine_grad_wrt_first(&a, &b, &mut g);
            let h = 1e-6;
            for k in 0..3 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[k] += h;
                am[k] -= h;
                let f = |x: &[f64]| dot(x, &b) / (norm(x) * norm(&b));
                let fd = (f(&ap) - f(&am)) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() < 1e-6, "k={} fd={} an={}", k, fd, g[k]);
            }
        }
    }
}
