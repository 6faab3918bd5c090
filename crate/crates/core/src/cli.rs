//! Experiment driver: reproducible configs, seeded runs, file outputs.
//!
//! Each command resolves an [`ExperimentConfig`] (flag > file > default),
//! refuses to clobber a directory that already holds a manifest unless
//! forced, and finishes by writing a manifest that echoes the full resolved
//! config — enough to reproduce the run bit-identically.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::OurConfig;
use crate::data::{self, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval;
use crate::manifold::{self, SampleMatrix, DEFAULT_EVAL_FRACTIONS};
use crate::model::{ClassifierModel, LrSchedule, OptimizerState};
use crate::train::{self, TrainSettings};

/// Fractions of `lambda_max` used by the image-shift demonstration.
pub const DEFAULT_SHIFT_FRACTIONS: [f64; 4] = [0.0, 0.005, 0.01, 0.02];
/// μ grid of the default sweep.
pub const DEFAULT_SWEEP_MUS: [f64; 6] = [0.0, 0.01, 0.02, 0.03, 0.05, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Seeded Gaussian mixture with an exponential long-tail profile.
    Synthetic,
    /// IDX image/label file pair.
    Idx,
    /// Binary container produced by `data::save_container`.
    Container,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub classes: usize,
    pub dim: usize,
    pub n_max: usize,
    pub imbalance: f64,
    pub cluster_spread: f64,
    /// Generation seed for synthetic data (and for subsampling loaded data).
    /// Fixed by default so every run seed trains on the same dataset and the
    /// run seed only drives initialization, shuffling, and augmentation noise.
    /// `None` (API-only; TOML cannot express it) regenerates per run seed.
    pub seed: Option<u64>,
    /// IDX image file (kind = "idx").
    pub images: Option<PathBuf>,
    /// IDX label file (kind = "idx").
    pub labels: Option<PathBuf>,
    /// Container path (kind = "container").
    pub container: Option<PathBuf>,
    /// When set, loaded datasets are long-tail subsampled to this factor.
    pub subsample_imbalance: Option<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            classes: 10,
            dim: 20,
            n_max: 500,
            imbalance: 100.0,
            cluster_spread: 0.6,
            seed: Some(0),
            images: None,
            labels: None,
            container: None,
            subsample_imbalance: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![128, 64],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            base_lr: 0.1,
            warmup_epochs: 5,
            milestones: vec![40, 50],
            decay_factor: 0.1,
            momentum: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn state(&self) -> OptimizerState {
        OptimizerState::new(
            LrSchedule {
                base_lr: self.base_lr,
                warmup_epochs: self.warmup_epochs,
                milestones: self.milestones.clone(),
                decay_factor: self.decay_factor,
            },
            self.momentum,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Evaluation distances as fractions of `lambda_max`.
    pub fractions: Vec<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_EVAL_FRACTIONS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub fractions: Vec<f64>,
    /// Images per grid row.
    pub grid_cols: usize,
    /// Cap on the number of images rendered into each grid.
    pub max_images: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_SHIFT_FRACTIONS.to_vec(),
            grid_cols: 8,
            max_images: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub mus: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mus: DEFAULT_SWEEP_MUS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    /// Perturbation parameters. The `seed` field here is a placeholder: each
    /// run replaces it with its own run seed.
    pub our: OurConfig,
    pub schedule: ScheduleConfig,
    pub shift: ShiftConfig,
    pub sweep: SweepConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Held-out balanced samples per class (synthetic datasets only).
    pub eval_per_class: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            our: OurConfig::default(),
            schedule: ScheduleConfig::default(),
            shift: ShiftConfig::default(),
            sweep: SweepConfig::default(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            eval_per_class: 50,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.optimizer.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.optimizer.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.model.hidden_dims.is_empty() {
            return Err(Error::Config("hidden_dims is empty".into()));
        }
        self.our.validate()?;
        match self.dataset.kind {
            DatasetKind::Idx => {
                if self.dataset.images.is_none() || self.dataset.labels.is_none() {
                    return Err(Error::Config(
                        "idx datasets need both `images` and `labels` paths".into(),
                    ));
                }
            }
            DatasetKind::Container => {
                if self.dataset.container.is_none() {
                    return Err(Error::Config("container datasets need a `container` path".into()));
                }
            }
            DatasetKind::Synthetic => {}
        }
        Ok(())
    }
}

/// Loads a config file, or the built-in defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Ok(toml::from_str(&text)?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

/// Command-line overrides; applied on top of the file (flag > file > default).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub mus: Vec<f64>,
}

pub fn resolve_config(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<ExperimentConfig> {
    if let Some(out) = &ov.out {
        cfg.output_dir = out.clone();
    }
    if !ov.seeds.is_empty() {
        cfg.seeds = ov.seeds.clone();
    }
    if !ov.mus.is_empty() {
        cfg.sweep.mus = ov.mus.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Dataset plumbing
// ---------------------------------------------------------------------------

/// Materializes the training dataset for one run seed. With the default fixed
/// `dataset.seed`, every run trains on the same draw; setting it to null makes
/// synthetic generation (and long-tail subsampling) follow the run seed.
pub fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<LabeledDataset> {
    let d = &cfg.dataset;
    let gen_seed = d.seed.unwrap_or(seed);
    let base = match d.kind {
        DatasetKind::Synthetic => data::synth_gaussian_longtail(
            d.classes,
            d.dim,
            d.n_max,
            d.imbalance,
            d.cluster_spread,
            gen_seed,
        )?,
        DatasetKind::Idx => data::load_idx_images(
            d.images.as_deref().expect("validated"),
            d.labels.as_deref().expect("validated"),
        )?,
        DatasetKind::Container => data::load_container(d.container.as_deref().expect("validated"))?,
    };
    match d.subsample_imbalance {
        Some(factor) if d.kind != DatasetKind::Synthetic => {
            data::subsample_longtail(&base, factor, gen_seed)
        }
        _ => Ok(base),
    }
}

/// Balanced held-out split, available for synthetic datasets only.
pub fn build_eval_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Option<LabeledDataset>> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::Synthetic => Ok(Some(data::synth_balanced_eval(
            d.classes,
            d.dim,
            cfg.eval_per_class,
            d.cluster_spread,
            d.seed.unwrap_or(seed),
        )?)),
        _ => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// Manifests and overwrite protection
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    artifact_version: &'a str,
    seeds: &'a [u64],
    config: &'a ExperimentConfig,
    outputs: &'a [String],
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    seeds: &[u64],
    outputs: &[String],
) -> Result<()> {
    let m = Manifest {
        command,
        artifact_version: env!("CARGO_PKG_VERSION"),
        seeds,
        config: cfg,
        outputs,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

/// Refuses to reuse a directory that already holds a manifest unless forced.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    let manifest = dir.join("manifest.json");
    if manifest.exists() && !force {
        return Err(Error::OutputExists(manifest));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PGM rendering
// ---------------------------------------------------------------------------

/// Renders the first `max_images` columns as a binary PGM grid. Values are
/// clamped to [0, 1] and quantized at render time only — the float pipeline
/// never sees the quantization.
fn write_pgm_grid(
    path: &Path,
    samples: &SampleMatrix,
    image_shape: (usize, usize),
    grid_cols: usize,
    max_images: usize,
) -> Result<()> {
    let (rows, cols) = image_shape;
    if rows * cols != samples.dim() {
        return Err(Error::Config(format!(
            "image shape {rows}x{cols} does not match sample dimension {}",
            samples.dim()
        )));
    }
    let n_show = samples.count().min(max_images).max(1);
    let g_cols = grid_cols.max(1).min(n_show);
    let g_rows = n_show.div_ceil(g_cols);
    let width = g_cols * cols;
    let height = g_rows * rows;
    let mut pixels = vec![0u8; width * height];
    for i in 0..n_show {
        let cell_r = i / g_cols;
        let cell_c = i % g_cols;
        let img = samples.column(i);
        for y in 0..rows {
            for x in 0..cols {
                let v = img[y * cols + x].clamp(0.0, 1.0);
                let px = (v * 255.0).round() as u8;
                pixels[(cell_r * rows + y) * width + cell_c * cols + x] = px;
            }
        }
    }
    let mut out = Vec::with_capacity(pixels.len() + 32);
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(&pixels);
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct DirectionReport<'a> {
    lambda_min: f64,
    lambda_mean: f64,
    lambda_max: f64,
    dim: usize,
    u: &'a [f64],
}

fn write_direction_json(path: &Path, dir: &manifold::OrthoDirection) -> Result<()> {
    let report = DirectionReport {
        lambda_min: dir.lambda_min,
        lambda_mean: dir.lambda_mean,
        lambda_max: dir.lambda_max,
        dim: dir.u.len(),
        u: &dir.u,
    };
    fs::write(path, serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

/// Shifts an image manifold along its orthogonal direction and emits one PGM
/// grid per schedule fraction plus a float-precision deviation table.
pub fn cmd_manifold_shift(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let out = cfg.output_dir.clone();
    prepare_out_dir(&out, force)?;
    let ds = build_dataset(cfg, cfg.seeds[0])?;
    let image_shape = ds.image_shape.ok_or_else(|| {
        Error::Config("manifold-shift needs an image dataset (idx loader sets the shape)".into())
    })?;
    let dir = manifold::orthogonal_direction(&ds.samples, true)?;
    let schedule = manifold::build_schedule(&dir, &cfg.shift.fractions)?;

    let mut outputs = Vec::new();
    write_pgm_grid(
        &out.join("originals.pgm"),
        &ds.samples,
        image_shape,
        cfg.shift.grid_cols,
        cfg.shift.max_images,
    )?;
    outputs.push("originals.pgm".to_string());

    let mut csv_w = csv::Writer::from_path(out.join("deviation.csv"))?;
    csv_w.write_record([
        "fraction",
        "distance_L",
        "min_col_displacement",
        "max_col_displacement",
        "mean_abs_pixel_deviation",
    ])?;
    for (idx, (fraction, l)) in schedule.iter().enumerate() {
        let shifted = manifold::shift_manifold(&ds.samples, &dir, l)?;
        let mut min_disp = f64::INFINITY;
        let mut max_disp = f64::NEG_INFINITY;
        let mut abs_sum = 0.0;
        for col in 0..ds.samples.count() {
            let a = ds.samples.column(col);
            let b = shifted.column(col);
            let mut sq = 0.0;
            for (ai, bi) in a.iter().zip(b) {
                let diff = bi - ai;
                sq += diff * diff;
                abs_sum += diff.abs();
            }
            let disp = sq.sqrt();
            min_disp = min_disp.min(disp);
            max_disp = max_disp.max(disp);
        }
        let mean_abs = abs_sum / (ds.samples.count() * ds.dim()) as f64;
        // Plain Display round-trips f64 exactly; the quantized grids below
        // are presentation only.
        csv_w.write_record([
            format!("{fraction}"),
            format!("{l}"),
            format!("{min_disp}"),
            format!("{max_disp}"),
            format!("{mean_abs}"),
        ])?;
        let name = format!("grid_{idx:02}_f{fraction:.4}.pgm");
        write_pgm_grid(
            &out.join(&name),
            &shifted,
            image_shape,
            cfg.shift.grid_cols,
            cfg.shift.max_images,
        )?;
        outputs.push(name);
    }
    csv_w.flush()?;
    outputs.push("deviation.csv".to_string());

    write_direction_json(&out.join("direction.json"), &dir)?;
    outputs.push("direction.json".to_string());
    write_manifest(&out, "manifold-shift", cfg, &cfg.seeds, &outputs)
}

/// One seeded training run under `cfg` (plain, or augmented when `our` is
/// given); building block of `cmd_train` and `cmd_mu_sweep`.
pub fn run_one(
    cfg: &ExperimentConfig,
    data: &LabeledDataset,
    seed: u64,
    our: Option<&OurConfig>,
) -> Result<(ClassifierModel, train::RunLog, Option<train::EpochArtifacts>)> {
    let mut model =
        ClassifierModel::seeded(data.dim(), &cfg.model.hidden_dims, data.classes, seed)?;
    let mut opt = cfg.optimizer.state();
    let settings = TrainSettings {
        epochs: cfg.optimizer.epochs,
        batch_size: cfg.optimizer.batch_size,
        seed,
    };
    match our {
        Some(o) => {
            let (log, art) = train::train_run(data, &mut model, &mut opt, &settings, o)?;
            Ok((model, log, Some(art)))
        }
        None => {
            let log = train::plain_train_run(data, &mut model, &mut opt, &settings)?;
            Ok((model, log, None))
        }
    }
}

fn write_run_dir(
    out: &Path,
    name: &str,
    cfg: &ExperimentConfig,
    seed: u64,
    model: &ClassifierModel,
    log: &train::RunLog,
    art: Option<&train::EpochArtifacts>,
    classes: usize,
) -> Result<Vec<String>> {
    let dir = out.join(name);
    fs::create_dir_all(&dir)?;
    let mut outputs = vec![
        format!("{name}/run_log.csv"),
        format!("{name}/model.ckpt"),
    ];
    train::write_run_log_csv(&dir.join("run_log.csv"), log, classes)?;
    model.save(&dir.join("model.ckpt"))?;
    if let Some(a) = art {
        write_direction_json(&dir.join("direction.json"), &a.direction)?;
        outputs.push(format!("{name}/direction.json"));
    }
    write_manifest(&dir, name, cfg, &[seed], &outputs)?;
    Ok(outputs)
}

/// Paired baseline/augmented runs over the seed list: for each seed, one
/// `plain_seed<N>/` and one `our_seed<N>/` directory with a run log and a
/// final checkpoint each.
pub fn cmd_train(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let out = cfg.output_dir.clone();
    prepare_out_dir(&out, force)?;
    let mut outputs = Vec::new();
    for &seed in &cfg.seeds {
        let data = build_dataset(cfg, seed)?;
        let (model, log, _) = run_one(cfg, &data, seed, None)?;
        outputs.extend(write_run_dir(
            &out,
            &format!("plain_seed{seed}"),
            cfg,
            seed,
            &model,
            &log,
            None,
            data.classes,
        )?);
        let our = OurConfig { seed, ..cfg.our };
        let (model, log, art) = run_one(cfg, &data, seed, Some(&our))?;
        outputs.extend(write_run_dir(
            &out,
            &format!("our_seed{seed}"),
            cfg,
            seed,
            &model,
            &log,
            art.as_ref(),
            data.classes,
        )?);
    }
    write_manifest(&out, "train", cfg, &cfg.seeds, &outputs)
}

/// Robustness profile of a checkpointed model on the configured dataset:
/// long-format accuracy CSV, RIF summary JSON, and a plot-ready RIF table.
pub fn cmd_rif_report(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    label: &str,
    force: bool,
) -> Result<()> {
    let out = cfg.output_dir.clone();
    prepare_out_dir(&out, force)?;
    let data = build_dataset(cfg, cfg.seeds[0])?;
    let model = ClassifierModel::load(checkpoint)?;
    if model.input_dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    if model.classes() != data.classes {
        return Err(Error::DimensionMismatch {
            expected: model.classes(),
            got: data.classes,
        });
    }
    let z = model.forward_features(&data.samples)?;
    let dir = manifold::orthogonal_direction(&z, false)?;
    let schedule = manifold::build_schedule(&dir, &cfg.schedule.fractions)?;
    let profile = eval::robustness_profile(&model, &z, &dir, &schedule)?;

    eval::write_profile_csv(&out.join("profile.csv"), &profile)?;
    let summary = eval::rif_summary(&profile, Some(label.to_string()));
    eval::write_summary_json(&out.join("summary.json"), &summary)?;

    let mut w = csv::Writer::from_path(out.join("rif_long.csv"))?;
    w.write_record(["label", "L_fraction", "distance_L", "rif"])?;
    for (i, (fraction, l)) in schedule.iter().enumerate() {
        w.write_record([
            label.to_string(),
            format!("{fraction}"),
            format!("{l}"),
            format!("{}", profile.rif[i]),
        ])?;
    }
    w.flush()?;

    let outputs = vec![
        "profile.csv".to_string(),
        "summary.json".to_string(),
        "rif_long.csv".to_string(),
    ];
    write_manifest(&out, "rif-report", cfg, &cfg.seeds, &outputs)
}

/// One augmented run per (μ, seed) pair; emits the per-run accuracy table
/// and its per-μ means. μ = 0 rows reproduce the unaugmented baseline
/// bit-for-bit.
pub fn cmd_mu_sweep(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let out = cfg.output_dir.clone();
    prepare_out_dir(&out, force)?;
    if cfg.sweep.mus.is_empty() {
        return Err(Error::Config("mu list is empty".into()));
    }

    let mut w = csv::Writer::from_path(out.join("accuracy_vs_mu.csv"))?;
    w.write_record(["mu", "seed", "train_balanced_acc", "eval_balanced_acc"])?;
    let mut summary: Vec<(f64, f64, Option<f64>)> = Vec::new();
    for &mu in &cfg.sweep.mus {
        let mut train_accs = Vec::new();
        let mut eval_accs = Vec::new();
        for &seed in &cfg.seeds {
            let data = build_dataset(cfg, seed)?;
            let eval_set = build_eval_dataset(cfg, seed)?;
            let our = OurConfig {
                mu,
                seed,
                ..cfg.our
            };
            let (model, _log, _) = run_one(cfg, &data, seed, Some(&our))?;
            let train_acc =
                eval::balanced_accuracy(&eval::end_to_end_class_accuracies(&model, &data.samples)?);
            let eval_acc = match &eval_set {
                Some(e) => Some(eval::balanced_accuracy(&eval::end_to_end_class_accuracies(
                    &model, &e.samples,
                )?)),
                None => None,
            };
            w.write_record([
                format!("{mu}"),
                seed.to_string(),
                format!("{train_acc:.6}"),
                eval_acc.map(|a| format!("{a:.6}")).unwrap_or_default(),
            ])?;
            train_accs.push(train_acc);
            if let Some(a) = eval_acc {
                eval_accs.push(a);
            }
        }
        let mean_train = train_accs.iter().sum::<f64>() / train_accs.len() as f64;
        let mean_eval = if eval_accs.len() == cfg.seeds.len() {
            Some(eval_accs.iter().sum::<f64>() / eval_accs.len() as f64)
        } else {
            None
        };
        summary.push((mu, mean_train, mean_eval));
    }
    w.flush()?;

    let mut s = csv::Writer::from_path(out.join("mu_summary.csv"))?;
    s.write_record(["mu", "mean_train_balanced_acc", "mean_eval_balanced_acc"])?;
    for (mu, t, e) in &summary {
        s.write_record([
            format!("{mu}"),
            format!("{t:.6}"),
            e.map(|a| format!("{a:.6}")).unwrap_or_default(),
        ])?;
    }
    s.flush()?;

    let outputs = vec!["accuracy_vs_mu.csv".to_string(), "mu_summary.csv".to_string()];
    write_manifest(&out, "mu-sweep", cfg, &cfg.seeds, &outputs)
}
