//! Orthogonal uncertainty augmentation for tail classes.
//!
//! The operator adds `μ·λ_mean·ε·U` to each feature column, with a fresh
//! standard-normal `ε` per column — noise confined to the least-variance
//! direction `U` of the feature manifold, scaled by the spectrum so the same
//! `μ` transfers across datasets. Only classes flagged by the tail mask are
//! ever perturbed; which classes count as "tail" is a count-relative policy.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::SampleMatrix;

/// Knobs for the uncertainty operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OurConfig {
    /// Perturbation scale μ ≥ 0; 0 disables the operator exactly.
    pub mu: f64,
    /// A class is tail iff its count < ratio · max class count; in (0, 1].
    pub tail_threshold_ratio: f64,
    /// First epoch (1-based) in which perturbation fires; covariance for it
    /// is collected one epoch earlier, so this must be ≥ 2.
    pub start_epoch: usize,
    /// Seed for the noise generator (owned by the training run).
    pub seed: u64,
}

impl Default for OurConfig {
    fn default() -> Self {
        Self {
            mu: 0.02,
            tail_threshold_ratio: 0.2,
            start_epoch: 10,
            seed: 0,
        }
    }
}

impl OurConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || self.mu < 0.0 {
            return Err(Error::NegativeMu(self.mu));
        }
        if !self.tail_threshold_ratio.is_finite()
            || self.tail_threshold_ratio <= 0.0
            || self.tail_threshold_ratio > 1.0
        {
            return Err(Error::InvalidRatio(self.tail_threshold_ratio));
        }
        if self.start_epoch < 2 {
            return Err(Error::InvalidStartEpoch(self.start_epoch));
        }
        Ok(())
    }
}

/// Per-class tail flags derived from training-set counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TailMask {
    flags: Vec<bool>,
}

impl TailMask {
    pub fn is_tail(&self, class: usize) -> bool {
        self.flags.get(class).copied().unwrap_or(false)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn classes(&self) -> usize {
        self.flags.len()
    }

    /// True when at least one class is flagged.
    pub fn any(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }

    pub fn tail_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Flags class `i` as tail iff `counts[i] < ratio · max(counts)` (strict).
pub fn select_tail_classes(counts: &[usize], ratio: f64) -> Result<TailMask> {
    if counts.is_empty() {
        return Err(Error::EmptyCounts);
    }
    if !ratio.is_finite() || ratio <= 0.0 || ratio > 1.0 {
        return Err(Error::InvalidRatio(ratio));
    }
    if let Some(class_id) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass { class_id });
    }
    let max = *counts.iter().max().expect("non-empty") as f64;
    let flags = counts.iter().map(|&c| (c as f64) < ratio * max).collect();
    Ok(TailMask { flags })
}

/// Applies `zᵢ ← zᵢ + μ·λ_mean·εᵢ·U` to every column, `εᵢ ~ N(0,1)` drawn
/// fresh from `rng` per column. The caller is responsible for passing only
/// the columns that should be perturbed (i.e. the tail columns of a batch).
///
/// `μ = 0` returns the input unchanged, bit for bit, without consuming any
/// generator state — so a zero-μ run is indistinguishable from one that
/// never calls this at all.
pub fn our_transform(
    z: &SampleMatrix,
    u: &[f64],
    lambda_mean: f64,
    mu: f64,
    rng: &mut impl Rng,
) -> Result<SampleMatrix> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::NegativeMu(mu));
    }
    if u.len() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: z.dim(),
            got: u.len(),
        });
    }
    if !lambda_mean.is_finite() {
        return Err(Error::NonFinite {
            context: "lambda_mean",
        });
    }
    if mu == 0.0 {
        return Ok(z.clone());
    }
    let mut out = z.clone();
    let d = out.dim();
    for col in 0..out.count() {
        let eps: f64 = rng.sample(StandardNormal);
        let scale = mu * lambda_mean * eps;
        let column = out.column_mut(col);
        for j in 0..d {
            column[j] += scale * u[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tail_selection_hand_cases() {
        // max = 500, threshold 100: both 50 and 5 fall below it.
        let mask = select_tail_classes(&[500, 50, 5], 0.2).unwrap();
        assert_eq!(mask.flags(), &[false, true, true]);
        assert_eq!(mask.tail_count(), 2);

        let balanced = select_tail_classes(&[10, 10, 10], 0.2).unwrap();
        assert!(!balanced.any());

        // Strict inequality: 10 < 10 is false even at ratio 1.
        let edge = select_tail_classes(&[10, 9], 1.0).unwrap();
        assert_eq!(edge.flags(), &[false, true]);
    }

    #[test]
    fn tail_selection_rejects_bad_input() {
        assert!(matches!(
            select_tail_classes(&[], 0.2),
            Err(Error::EmptyCounts)
        ));
        assert!(matches!(
            select_tail_classes(&[1, 2], 0.0),
            Err(Error::InvalidRatio(_))
        ));
        assert!(matches!(
            select_tail_classes(&[1, 2], 1.5),
            Err(Error::InvalidRatio(_))
        ));
        assert!(matches!(
            select_tail_classes(&[3, 0], 0.5),
            Err(Error::MissingClass { class_id: 1 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(OurConfig::default().validate().is_ok());
        assert!(matches!(
            OurConfig {
                mu: -0.1,
                ..Default::default()
            }
            .validate(),
            Err(Error::NegativeMu(_))
        ));
        assert!(matches!(
            OurConfig {
                tail_threshold_ratio: 0.0,
                ..Default::default()
            }
            .validate(),
            Err(Error::InvalidRatio(_))
        ));
        assert!(matches!(
            OurConfig {
                start_epoch: 1,
                ..Default::default()
            }
            .validate(),
            Err(Error::InvalidStartEpoch(_))
        ));
    }

    #[test]
    fn mu_zero_is_bitwise_identity_and_draws_nothing() {
        let z = SampleMatrix::new(2, vec![-0.0, 1.0, 0.25, -3.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let before = rng.clone();
        let out = our_transform(&z, &[1.0, 0.0], 2.0, 0.0, &mut rng).unwrap();
        assert_eq!(out.data(), z.data());
        assert!(out.data()[0].is_sign_negative());
        // Generator untouched: next draws identical to a fresh clone's.
        let mut fresh = before;
        assert_eq!(rng.random::<u64>(), fresh.random::<u64>());
    }

    #[test]
    fn first_draw_is_recoverable_from_output() {
        // One zero column, U = e1: output[0] = μ·λ_mean·ε₁, rest zero.
        let z = SampleMatrix::new(3, vec![0.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = our_transform(&z, &[1.0, 0.0, 0.0], 2.0, 0.5, &mut rng).unwrap();
        assert_eq!(out.column(0)[1], 0.0);
        assert_eq!(out.column(0)[2], 0.0);
        let recovered = out.column(0)[0] / (0.5 * 2.0);
        let mut replay = ChaCha8Rng::seed_from_u64(7);
        let expected: f64 = replay.sample(StandardNormal);
        assert_eq!(recovered * 0.5 * 2.0, out.column(0)[0]);
        assert!((recovered - expected).abs() < 1e-15);
    }

    #[test]
    fn labels_pass_through() {
        let z = SampleMatrix::with_labels(2, vec![1.0, 2.0, 3.0, 4.0], vec![5, 9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = our_transform(&z, &[0.6, 0.8], 1.0, 0.1, &mut rng).unwrap();
        assert_eq!(out.labels().unwrap(), &[5, 9]);
    }

    #[test]
    fn rejects_negative_mu_and_dimension_mismatch() {
        let z = SampleMatrix::new(2, vec![1.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            our_transform(&z, &[1.0, 0.0], 1.0, -1.0, &mut rng),
            Err(Error::NegativeMu(_))
        ));
        assert!(matches!(
            our_transform(&z, &[1.0], 1.0, 1.0, &mut rng),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
