//! Robustness evaluation: per-class accuracy on a feature manifold and on
//! its shifted copies, and the spread statistic summarizing how unevenly
//! classes degrade.
//!
//! Shifted evaluation feeds the classifier head only — the noisy manifolds
//! live in feature space, so the feature subnetwork never reruns. Everything
//! here is deterministic: no generator is consumed anywhere.

use serde::Serialize;
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifold::{self, DistanceSchedule, OrthoDirection, SampleMatrix};
use crate::model::ClassifierModel;

/// The fraction of `lambda_max` at which a single headline RIF is quoted
/// when a profile is summarized.
pub const DEFAULT_RIF_FRACTION: f64 = 0.02;

/// Per-class accuracy of the classifier head on a labeled feature set.
///
/// Every class in `[0, classes)` must be present; a class with zero samples
/// has no defined accuracy and is reported as an error rather than a guess.
pub fn class_accuracies(model: &ClassifierModel, z: &SampleMatrix) -> Result<Vec<f64>> {
    let labels = z.labels().ok_or(Error::MissingLabels)?;
    let classes = model.classes();
    let logits = model.forward_logits(z)?;
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for col in 0..z.count() {
        let y = labels[col];
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let lg = logits.column(col);
        let mut arg = 0;
        for (i, &v) in lg.iter().enumerate().skip(1) {
            if v > lg[arg] {
                arg = i;
            }
        }
        total[y] += 1;
        if arg == y {
            correct[y] += 1;
        }
    }
    if let Some(class_id) = total.iter().position(|&t| t == 0) {
        return Err(Error::MissingClass { class_id });
    }
    Ok(correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| c as f64 / t as f64)
        .collect())
}

/// Per-class accuracy on raw inputs: runs the feature subnetwork first,
/// then scores the classifier head.
pub fn end_to_end_class_accuracies(
    model: &ClassifierModel,
    x: &SampleMatrix,
) -> Result<Vec<f64>> {
    let z = model.forward_features(x)?;
    class_accuracies(model, &z)
}

/// Unweighted mean of per-class accuracies.
pub fn balanced_accuracy(per_class: &[f64]) -> f64 {
    per_class.iter().sum::<f64>() / per_class.len() as f64
}

/// Robustness spread: `max_i(Aᵢ − A′ᵢ) − min_i(Aᵢ − A′ᵢ)`. Zero iff every
/// class degrades by the same amount (balanced robustness).
pub fn rif(base_acc: &[f64], noisy_acc: &[f64]) -> Result<f64> {
    if base_acc.is_empty() {
        return Err(Error::EmptyCounts);
    }
    if base_acc.len() != noisy_acc.len() {
        return Err(Error::LengthMismatch {
            left: base_acc.len(),
            right: noisy_acc.len(),
        });
    }
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for (b, n) in base_acc.iter().zip(noisy_acc) {
        let d = b - n;
        max = max.max(d);
        min = min.min(d);
    }
    Ok(max - min)
}

/// Accuracy sweep over a distance schedule, plus the per-distance RIF.
#[derive(Debug, Clone)]
pub struct RobustnessProfile {
    pub schedule: DistanceSchedule,
    /// Per-class accuracy on the unshifted features.
    pub base_acc: Vec<f64>,
    /// One per-class accuracy vector per schedule entry.
    pub noisy_acc: Vec<Vec<f64>>,
    /// One spread value per schedule entry.
    pub rif: Vec<f64>,
}

impl RobustnessProfile {
    /// RIF at the headline fraction, when the schedule contains it.
    pub fn rif_at(&self, fraction: f64) -> Option<f64> {
        self.schedule
            .fractions()
            .iter()
            .position(|&f| (f - fraction).abs() < 1e-12)
            .map(|i| self.rif[i])
    }
}

/// Evaluates the classifier on `Z` shifted by every distance of the
/// schedule. The `L = 0` entry reproduces the base accuracies bit-for-bit
/// (the zero shift is a bitwise copy).
pub fn robustness_profile(
    model: &ClassifierModel,
    z: &SampleMatrix,
    dir: &OrthoDirection,
    schedule: &DistanceSchedule,
) -> Result<RobustnessProfile> {
    let base_acc = class_accuracies(model, z)?;
    let mut noisy_acc = Vec::with_capacity(schedule.len());
    let mut rifs = Vec::with_capacity(schedule.len());
    for (_fraction, l) in schedule.iter() {
        let shifted = manifold::shift_manifold(z, dir, l)?;
        let acc = class_accuracies(model, &shifted)?;
        rifs.push(rif(&base_acc, &acc)?);
        noisy_acc.push(acc);
    }
    Ok(RobustnessProfile {
        schedule: schedule.clone(),
        base_acc,
        noisy_acc,
        rif: rifs,
    })
}

/// Long-format profile CSV: one row per (distance, class).
pub fn write_profile_csv(path: &Path, profile: &RobustnessProfile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["L_fraction", "class_id", "base_acc", "noisy_acc", "diff"])?;
    for (i, fraction) in profile.schedule.fractions().iter().enumerate() {
        for (class, (&b, &n)) in profile.base_acc.iter().zip(&profile.noisy_acc[i]).enumerate() {
            w.write_record([
                format!("{fraction}"),
                class.to_string(),
                format!("{b:.6}"),
                format!("{n:.6}"),
                format!("{:.6}", b - n),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RifSummaryEntry {
    pub fraction: f64,
    pub distance: f64,
    pub rif: f64,
    /// Class with the largest accuracy drop at this distance.
    pub argmax_class: usize,
    /// Class with the smallest accuracy drop at this distance.
    pub argmin_class: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RifSummary {
    pub label: Option<String>,
    pub headline_fraction: f64,
    /// RIF at the headline fraction, when the schedule contains it.
    pub headline_rif: Option<f64>,
    pub entries: Vec<RifSummaryEntry>,
}

pub fn rif_summary(profile: &RobustnessProfile, label: Option<String>) -> RifSummary {
    let entries = profile
        .schedule
        .iter()
        .enumerate()
        .map(|(i, (fraction, distance))| {
            let diffs: Vec<f64> = profile
                .base_acc
                .iter()
                .zip(&profile.noisy_acc[i])
                .map(|(b, n)| b - n)
                .collect();
            let argmax_class = argmax(&diffs);
            let argmin_class = argmin(&diffs);
            RifSummaryEntry {
                fraction,
                distance,
                rif: profile.rif[i],
                argmax_class,
                argmin_class,
            }
        })
        .collect();
    RifSummary {
        label,
        headline_fraction: DEFAULT_RIF_FRACTION,
        headline_rif: profile.rif_at(DEFAULT_RIF_FRACTION),
        entries,
    }
}

pub fn write_summary_json(path: &Path, summary: &RifSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    let mut arg = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[arg] {
            arg = i;
        }
    }
    arg
}

fn argmin(v: &[f64]) -> usize {
    let mut arg = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[arg] {
            arg = i;
        }
    }
    arg
}
