//! The end-to-end training loop.
//!
//! Plain training is a standard shuffled-minibatch SGD loop. The augmented
//! variant layers two things on top, both driven by epoch index (1-based):
//!
//! * from epoch `k−1` through the second-to-last epoch, the unperturbed
//!   feature batches of the epoch are streamed into a covariance
//!   accumulator, finalized at epoch end into that epoch's direction
//!   artifacts;
//! * from epoch `k` on, tail-class feature columns of every batch are
//!   perturbed along the direction from the *previous* epoch's artifacts
//!   before the classifier sees them.
//!
//! With `μ = 0` the perturbation is exactly null and the trajectory is
//! bit-identical to plain training under the same seeds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;

use crate::augment::{self, OurConfig, TailMask};
use crate::covstream::CovAccumulator;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::manifold::{OrthoDirection, SampleMatrix};
use crate::model::{self, ClassifierModel, FeatureHook, OptimizerState};

/// Generator streams (applied to the run seed / noise seed respectively).
pub const SHUFFLE_STREAM: u64 = 6;
pub const OUR_NOISE_STREAM: u64 = 7;

/// Loop shape: how long, how wide, and the seed for the per-epoch shuffle.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Per-epoch covariance artifacts: the direction derived from the feature
/// batches of `epoch`, consumed by the perturbation in `epoch + 1`.
#[derive(Debug, Clone)]
pub struct EpochArtifacts {
    pub epoch: usize,
    pub direction: OrthoDirection,
    pub sample_count: u64,
}

/// Spectrum summary recorded when an epoch finalizes its accumulator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LambdaSummary {
    pub lambda_min: f64,
    pub lambda_mean: f64,
    pub lambda_max: f64,
}

/// One completed epoch. Class accuracy is training accuracy as the model saw
/// the epoch (a class with zero samples records NaN).
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub class_accuracy: Vec<f64>,
    pub lr: f64,
    pub our_active: bool,
    /// Feature columns actually perturbed this epoch (0 before epoch k and
    /// whenever μ = 0).
    pub perturbed_columns: u64,
    /// Present for epochs that finalized a covariance accumulator.
    pub lambda: Option<LambdaSummary>,
}

/// The full training history of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
    /// Where the final model checkpoint was written, when it was.
    pub checkpoint: Option<String>,
}

impl RunLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.mean_loss)
    }

    /// `(epoch, summary)` for every epoch that produced artifacts.
    pub fn lambda_history(&self) -> Vec<(usize, LambdaSummary)> {
        self.records
            .iter()
            .filter_map(|r| r.lambda.map(|l| (r.epoch, l)))
            .collect()
    }

    pub fn total_perturbed_columns(&self) -> u64 {
        self.records.iter().map(|r| r.perturbed_columns).sum()
    }
}

/// Hook that perturbs tail-class columns along the previous epoch's
/// direction; head columns pass through untouched.
struct OurHook<'a> {
    mask: &'a TailMask,
    u: &'a [f64],
    lambda_mean: f64,
    mu: f64,
    rng: &'a mut ChaCha8Rng,
    perturbed: &'a mut u64,
}

impl FeatureHook for OurHook<'_> {
    fn apply(&mut self, features: &mut SampleMatrix, labels: &[usize]) -> Result<()> {
        if self.mu == 0.0 {
            return Ok(()); // exact no-op: no draws, no copies
        }
        let tails: Vec<usize> = (0..features.count())
            .filter(|&i| self.mask.is_tail(labels[i]))
            .collect();
        if tails.is_empty() {
            return Ok(());
        }
        let tail_batch = features.select_columns(&tails)?;
        let shifted =
            augment::our_transform(&tail_batch, self.u, self.lambda_mean, self.mu, self.rng)?;
        for (k, &col) in tails.iter().enumerate() {
            features.column_mut(col).copy_from_slice(shifted.column(k));
        }
        *self.perturbed += tails.len() as u64;
        Ok(())
    }
}

/// Baseline loop: no accumulation, no perturbation.
pub fn plain_train_run(
    data: &LabeledDataset,
    model: &mut ClassifierModel,
    opt: &mut OptimizerState,
    settings: &TrainSettings,
) -> Result<RunLog> {
    let (log, _) = run_loop(data, model, opt, settings, None)?;
    Ok(log)
}

/// Augmented loop; returns the log plus the artifacts of the last
/// accumulated epoch (always the second-to-last epoch of the run).
pub fn train_run(
    data: &LabeledDataset,
    model: &mut ClassifierModel,
    opt: &mut OptimizerState,
    settings: &TrainSettings,
    our: &OurConfig,
) -> Result<(RunLog, EpochArtifacts)> {
    let (log, artifacts) = run_loop(data, model, opt, settings, Some(our))?;
    Ok((log, artifacts.expect("augmented runs always accumulate")))
}

fn run_loop(
    data: &LabeledDataset,
    model: &mut ClassifierModel,
    opt: &mut OptimizerState,
    settings: &TrainSettings,
    our: Option<&OurConfig>,
) -> Result<(RunLog, Option<EpochArtifacts>)> {
    if settings.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if let Some(o) = our {
        o.validate()?;
        if o.start_epoch > settings.epochs {
            return Err(Error::Config(format!(
                "perturbation start epoch {} exceeds total epochs {}",
                o.start_epoch, settings.epochs
            )));
        }
    }
    let tail_mask = our
        .map(|o| augment::select_tail_classes(&data.counts, o.tail_threshold_ratio))
        .transpose()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(settings.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut our_rng = our.map(|o| {
        let mut r = ChaCha8Rng::seed_from_u64(o.seed);
        r.set_stream(OUR_NOISE_STREAM);
        r
    });

    let n = data.len();
    let labels_all = data.labels().to_vec();
    let mut prev_artifacts: Option<EpochArtifacts> = None;
    let mut records = Vec::with_capacity(settings.epochs);

    for epoch in 1..=settings.epochs {
        let lr = opt.schedule.lr(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);

        // Accumulate from epoch k−1 up to (and including) the second-to-last
        // epoch — the final epoch's covariance would never be consumed.
        let accumulating = our
            .map(|o| epoch + 1 >= o.start_epoch && epoch < settings.epochs)
            .unwrap_or(false);
        let our_active = our.map(|o| epoch >= o.start_epoch).unwrap_or(false);

        let mut acc = if accumulating {
            Some(CovAccumulator::new(model.feature_dim(), epoch as u64)?)
        } else {
            None
        };
        let mut loss_sum = 0.0;
        let mut correct = vec![0usize; data.classes];
        let mut perturbed = 0u64;

        for chunk in order.chunks(settings.batch_size) {
            let xb = data.samples.select_columns(chunk)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| labels_all[i]).collect();

            let out = if our_active {
                let o = our.expect("our_active implies config");
                let art = prev_artifacts
                    .as_ref()
                    .expect("artifacts exist from epoch k-1 onward");
                assert_eq!(
                    art.epoch + 1,
                    epoch,
                    "perturbation must consume the previous epoch's artifacts"
                );
                let mut hook = OurHook {
                    mask: tail_mask.as_ref().expect("mask exists with config"),
                    u: &art.direction.u,
                    lambda_mean: art.direction.lambda_mean,
                    mu: o.mu,
                    rng: our_rng.as_mut().expect("rng exists with config"),
                    perturbed: &mut perturbed,
                };
                model::loss_and_grads(model, &xb, &yb, Some(&mut hook))?
            } else {
                model::loss_and_grads(model, &xb, &yb, None)?
            };

            if let Some(a) = acc.as_mut() {
                a.accumulate(&out.features)?;
            }
            model::sgd_step(model, &out.grads, opt, epoch)?;

            loss_sum += out.loss * yb.len() as f64;
            for (&pred, &y) in out.predictions.iter().zip(&yb) {
                if pred == y {
                    correct[y] += 1;
                }
            }
        }

        let mut lambda = None;
        if let Some(a) = acc {
            debug_assert_eq!(a.sample_count(), n as u64, "one full pass per epoch");
            let cov = a.finalize()?;
            let dir = OrthoDirection::from_covariance(&cov, vec![0.0; model.feature_dim()])?;
            lambda = Some(LambdaSummary {
                lambda_min: dir.lambda_min,
                lambda_mean: dir.lambda_mean,
                lambda_max: dir.lambda_max,
            });
            prev_artifacts = Some(EpochArtifacts {
                epoch,
                direction: dir,
                sample_count: a.sample_count(),
            });
        }

        records.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / n as f64,
            class_accuracy: data
                .counts
                .iter()
                .zip(&correct)
                .map(|(&cnt, &cor)| cor as f64 / cnt as f64)
                .collect(),
            lr,
            our_active,
            perturbed_columns: perturbed,
            lambda,
        });
    }

    Ok((
        RunLog {
            records,
            checkpoint: None,
        },
        prev_artifacts,
    ))
}

/// RunLog as CSV: epoch, loss, one accuracy column per class, lr, our_active.
pub fn write_run_log_csv(path: &Path, log: &RunLog, classes: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch".to_string(), "loss".to_string()];
    header.extend((0..classes).map(|c| format!("acc_{c}")));
    header.push("lr".to_string());
    header.push("our_active".to_string());
    w.write_record(&header)?;
    for r in &log.records {
        let mut row = vec![r.epoch.to_string(), format!("{:.17e}", r.mean_loss)];
        row.extend(r.class_accuracy.iter().map(|a| format!("{a:.6}")));
        row.push(format!("{:.17e}", r.lr));
        row.push(r.our_active.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
