//! Distillation losses.
//!
//! The total minimized per generated latent `z_hat` is
//!
//! ```text
//! total = diffusion - lambda_real * min_r cos(z_hat, z_r) + lambda_gen * max_g cos(z_hat, g)
//! ```
//!
//! so descending it pulls `z_hat` toward the least similar real latent in
//! memory and pushes it away from the most similar generated one.

use crate::error::{Error, Result};
use crate::memory::{Extreme, MemorySet};
use crate::numerics::{cosine_similarity, Latent};

/// Non-negative weights of the representativeness and diversity terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_real: f64,
    pub lambda_gen: f64,
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_real: 0.0,
        lambda_gen: 0.0,
    };

    pub fn new(lambda_real: f64, lambda_gen: f64) -> Result<Self> {
        for (name, v) in [("lambda_real", lambda_real), ("lambda_gen", lambda_gen)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(LossWeights {
            lambda_real,
            lambda_gen,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.lambda_real == 0.0 && self.lambda_gen == 0.0
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_real: 0.002,
            lambda_gen: 0.008,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub diffusion: f64,
    pub real_term: f64,
    pub gen_term: f64,
    pub total: f64,
    pub selected_real_index: Option<usize>,
    pub selected_gen_index: Option<usize>,
}

/// A loss term value with the memory element that attained it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermValue {
    pub value: f64,
    pub selected: Option<usize>,
}

impl TermValue {
    const VACUOUS: TermValue = TermValue {
        value: 0.0,
        selected: None,
    };
}

/// `-min_r cos(z_hat, z_r)`; zero with no selection when the memory is empty.
pub fn real_loss(z_hat: &Latent, m_real: &MemorySet) -> TermValue {
    match m_real.extreme_similarity(z_hat, Extreme::Min) {
        Some((i, s)) => TermValue {
            value: -s,
            selected: Some(i),
        },
        None => TermValue::VACUOUS,
    }
}

/// `max_g cos(z_hat, z_g)`; zero with no selection when the memory is empty.
pub fn gen_loss(z_hat: &Latent, m_gen: &MemorySet) -> TermValue {
    match m_gen.extreme_similarity(z_hat, Extreme::Max) {
        Some((i, s)) => TermValue {
            value: s,
            selected: Some(i),
        },
        None => TermValue::VACUOUS,
    }
}

pub fn combined_loss(diffusion: f64, real_term: f64, gen_term: f64, w: LossWeights) -> LossBreakdown {
    LossBreakdown {
        diffusion,
        real_term,
        gen_term,
        total: diffusion + w.lambda_real * real_term + w.lambda_gen * gen_term,
        selected_real_index: None,
        selected_gen_index: None,
    }
}

/// Sum of cosine similarities between `z_hat` and every latent in `dataset`.
///
/// Diagnostic only: maximizing this over a mini-batch drags samples toward
/// the center of the data, which is what the memory-based terms avoid.
pub fn naive_alignment(z_hat: &Latent, dataset: &[Latent]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Domain("naive alignment needs a nonempty dataset".into()));
    }
    dataset.iter().map(|z| cosine_similarity(z_hat, z)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::EvictionPolicy;
    use crate::numerics::{gaussian_draw, RngStream};
    use proptest::prelude::*;

    fn lat(v: &[f64]) -> Latent {
        Latent::new(v.to_vec()).unwrap()
    }

    fn mem(pts: &[Latent]) -> MemorySet {
        let mut m = MemorySet::new(64, EvictionPolicy::MaxSimilaritySum).unwrap();
        for p in pts {
            m.push(p.clone()).unwrap();
        }
        m
    }

    #[test]
    fn real_and_gen_loss_examples() {
        let m = mem(&[lat(&[1.0, 0.0]), lat(&[0.0, 1.0])]);
        let q = lat(&[1.0, 0.0]);
        let r = real_loss(&q, &m);
        assert_eq!(r.value, 0.0);
        assert_eq!(r.selected, Some(1));
        let g = gen_loss(&q, &m);
        assert_eq!(g.value, 1.0);
        assert_eq!(g.selected, Some(0));

        let empty = mem(&[]);
        assert_eq!(real_loss(&q, &empty), TermValue::VACUOUS);
        assert_eq!(gen_loss(&q, &empty), TermValue::VACUOUS);
    }

    #[test]
    fn losses_match_exhaustive_scan() {
        let mut rng = RngStream::new(21, 0);
        for n in 1..=12 {
            let pts: Vec<Latent> = (0..n).map(|_| gaussian_draw(&mut rng, 3)).collect();
            let m = mem(&pts);
            let q = gaussian_draw(&mut rng, 3);
            let sims: Vec<f64> = pts.iter().map(|p| cosine_similarity(&q, p).unwrap()).collect();
            let min = sims.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(real_loss(&q, &m).value, -min);
            assert_eq!(gen_loss(&q, &m).value, max);
        }
    }

    #[test]
    fn combined_loss_examples() {
        let b = combined_loss(0.7, -0.3, 0.9, LossWeights::ZERO);
        assert_eq!(b.total, 0.7);
        // 1 + 0.002 * (-0.5) + 0.008 * 0.25
        let b = combined_loss(1.0, -0.5, 0.25, LossWeights::default());
        assert!((b.total - 1.001).abs() < 1e-12);
    }

    #[test]
    fn loss_weights_validate() {
        assert!(LossWeights::new(-0.1, 0.0).is_err());
        assert!(LossWeights::new(0.0, f64::NAN).is_err());
        assert!(LossWeights::new(0.0, 0.0).unwrap().is_zero());
    }

    #[test]
    fn naive_alignment_examples() {
        let v = lat(&[0.3, -1.2]);
        assert!((naive_alignment(&v, std::slice::from_ref(&v)).unwrap() - 1.0).abs() < 1e-15);
        let w = lat(&[2.0, 1.0]);
        let sym = [w.clone(), w.scaled(-1.0)];
        assert!(naive_alignment(&v, &sym).unwrap().abs() < 1e-15);
        assert!(naive_alignment(&v, &[]).is_err());

        let mut rng = RngStream::new(2, 0);
        let data: Vec<Latent> = (0..100).map(|_| gaussian_draw(&mut rng, 2)).collect();
        let mut brute = 0.0;
        for z in &data {
            brute += v.dot(z) / (v.norm() * z.norm());
        }
        assert!((naive_alignment(&v, &data).unwrap() - brute).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn breakdown_invariant_and_linearity(
            diff in 0.0f64..10.0, rl in -1.0f64..1.0, gl in -1.0f64..1.0,
            lr in 0.0f64..1.0, lg in 0.0f64..1.0, k in 0.0f64..10.0,
        ) {
            let w = LossWeights::new(lr, lg).unwrap();
            let b = combined_loss(diff, rl, gl, w);
            let expect = diff + lr * rl + lg * gl;
            prop_assert!((b.total - expect).abs() <= 1e-12 * expect.abs().max(1.0));

            let wk = LossWeights::new(lr * k, lg * k).unwrap();
            let bk = combined_loss(diff, rl, gl, wk);
            let lhs = bk.total - diff;
            let rhs = k * (b.total - diff);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0) + 1e-15);

            // Linear in each term at fixed weights.
            let b2 = combined_loss(diff, 2.0 * rl, gl, w);
            prop_assert!(((b2.total - b.total) - lr * rl).abs() < 1e-12);
        }

        #[test]
        fn term_values_are_bounded(seed in 0u64..300, n in 1usize..12) {
            let mut rng = RngStream::new(seed, 1);
            let pts: Vec<Latent> = (0..n).map(|_| gaussian_draw(&mut rng, 2)).collect();
            let m = mem(&pts);
            let q = gaussian_draw(&mut rng, 2);
            let r = real_loss(&q, &m).value;
            let g = gen_loss(&q, &m).value;
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((-1.0..=1.0).contains(&g));
        }
    }
}
