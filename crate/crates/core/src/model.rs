//! A small fully-connected classifier with hand-written forward/backward.
//!
//! The model is split into a feature subnetwork `f` (affine layers, each
//! followed by a rectifier) and a linear classifier head `g`, because the
//! interesting action downstream happens *between* them: training can splice
//! a hook in at the feature interface to perturb selected columns before the
//! classifier sees them. Gradients treat such perturbations as additive
//! constants — they shift activations, never the backward formulas.
//!
//! Everything is `f64` and single-threaded by design: the test suite pins
//! gradients against finite differences at tight tolerances and whole
//! training trajectories against bit-identical replay.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifold::SampleMatrix;

/// Generator stream for weight initialization, kept distinct from the data
/// and training streams so one experiment seed can drive all of them.
pub const MODEL_INIT_STREAM: u64 = 5;

const CHECKPOINT_MAGIC: u32 = u32::from_le_bytes(*b"OURM");
const CHECKPOINT_VERSION: u8 = 1;

/// One affine map, `out×in` weight stored row-major plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::DimensionZero);
        }
        if weight.len() != in_dim * out_dim {
            return Err(Error::DimensionMismatch {
                expected: in_dim * out_dim,
                got: weight.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::DimensionMismatch {
                expected: out_dim,
                got: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::new(
            in_dim,
            out_dim,
            vec![0.0; in_dim * out_dim],
            vec![0.0; out_dim],
        )
    }

    fn seeded(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        // Uniform in [-1/√fan_in, +1/√fan_in), weights first, then bias.
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        };
        let weight = draw(in_dim * out_dim);
        let bias = draw(out_dim);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `W·input + b` for column-major input of width `n`; output col-major.
    fn affine(&self, input: &[f64], n: usize) -> Vec<f64> {
        let (din, dout) = (self.in_dim, self.out_dim);
        let mut out = vec![0.0; dout * n];
        for col in 0..n {
            let a = &input[col * din..(col + 1) * din];
            let o = &mut out[col * dout..(col + 1) * dout];
            for r in 0..dout {
                let row = &self.weight[r * din..(r + 1) * din];
                let mut s = self.bias[r];
                for (w, x) in row.iter().zip(a) {
                    s += w * x;
                }
                o[r] = s;
            }
        }
        out
    }
}

/// Feature subnetwork (affine + rectifier per layer) plus a linear
/// classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    feature_layers: Vec<Layer>,
    classifier: Layer,
}

impl ClassifierModel {
    /// Builds `input_dim → dims[0] → … → dims.last()` feature layers and a
    /// `dims.last() → classes` classifier, all seeded uniformly.
    pub fn seeded(input_dim: usize, feature_dims: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if feature_dims.is_empty() {
            return Err(Error::DimensionZero);
        }
        if input_dim == 0 || classes == 0 || feature_dims.iter().any(|&d| d == 0) {
            return Err(Error::DimensionZero);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(MODEL_INIT_STREAM);
        let mut feature_layers = Vec::with_capacity(feature_dims.len());
        let mut prev = input_dim;
        for &d in feature_dims {
            feature_layers.push(Layer::seeded(prev, d, &mut rng));
            prev = d;
        }
        let classifier = Layer::seeded(prev, classes, &mut rng);
        Ok(Self {
            feature_layers,
            classifier,
        })
    }

    /// Assembles a model from explicit layers (test scaffolding and loading).
    pub fn from_parts(feature_layers: Vec<Layer>, classifier: Layer) -> Result<Self> {
        if feature_layers.is_empty() {
            return Err(Error::DimensionZero);
        }
        for pair in feature_layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        if feature_layers.last().unwrap().out_dim != classifier.in_dim {
            return Err(Error::DimensionMismatch {
                expected: feature_layers.last().unwrap().out_dim,
                got: classifier.in_dim,
            });
        }
        Ok(Self {
            feature_layers,
            classifier,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.feature_layers[0].in_dim
    }

    /// Dimension `p` of the feature interface between `f` and `g`.
    pub fn feature_dim(&self) -> usize {
        self.classifier.in_dim
    }

    pub fn classes(&self) -> usize {
        self.classifier.out_dim
    }

    pub fn feature_layers(&self) -> &[Layer] {
        &self.feature_layers
    }

    pub fn classifier(&self) -> &Layer {
        &self.classifier
    }

    /// Feature layer dims including the input: `[d, h₁, …, p]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.feature_layers.iter().map(|l| l.out_dim));
        dims
    }

    /// `Z = f(X)`: every affine layer followed by the rectifier. Labels on
    /// the input carry over to the features.
    pub fn forward_features(&self, x: &SampleMatrix) -> Result<SampleMatrix> {
        if x.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.dim(),
            });
        }
        let n = x.count();
        let mut act = x.data().to_vec();
        for (li, layer) in self.feature_layers.iter().enumerate() {
            act = layer.affine(&act, n);
            if act.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: li });
            }
            for v in &mut act {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        let mut z = SampleMatrix::new(self.feature_dim(), act)?;
        if let Some(l) = x.labels() {
            z.set_labels(l.to_vec())?;
        }
        Ok(z)
    }

    /// `g(Z)`: the affine classifier head, no nonlinearity.
    pub fn forward_logits(&self, z: &SampleMatrix) -> Result<SampleMatrix> {
        if z.dim() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: z.dim(),
            });
        }
        let out = self.classifier.affine(z.data(), z.count());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation {
                layer: self.feature_layers.len(),
            });
        }
        SampleMatrix::new(self.classes(), out)
    }

    /// Class predictions by logit argmax (first index wins ties).
    pub fn predict(&self, x: &SampleMatrix) -> Result<Vec<usize>> {
        let z = self.forward_features(x)?;
        let logits = self.forward_logits(&z)?;
        Ok(argmax_columns(&logits))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_checkpoint(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read_checkpoint(&mut f)
    }

    /// Checkpoint layout: magic, version byte, u32 count of feature dims
    /// (input included), the dims, u32 classes, then per layer the row-major
    /// weight block and the bias, classifier last — all little-endian f64.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&CHECKPOINT_MAGIC.to_le_bytes())?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        let dims = self.dims();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.classes() as u32).to_le_bytes())?;
        for layer in self.feature_layers.iter().chain([&self.classifier]) {
            for v in layer.weight.iter().chain(&layer.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Self> {
        let magic = read_u32(r, "checkpoint magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                got: magic,
            });
        }
        let mut version = [0u8; 1];
        read_exact(r, &mut version, "checkpoint version")?;
        if version[0] != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "checkpoint",
                got: version[0],
            });
        }
        let ndims = read_u32(r, "checkpoint dims count")? as usize;
        if ndims < 2 {
            return Err(Error::DimensionZero);
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(read_u32(r, "checkpoint dims")? as usize);
        }
        let classes = read_u32(r, "checkpoint classes")? as usize;
        if classes == 0 || dims.iter().any(|&d| d == 0) {
            return Err(Error::DimensionZero);
        }
        let mut read_layer = |in_dim: usize, out_dim: usize| -> Result<Layer> {
            let mut weight = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..in_dim * out_dim {
                weight.push(read_f64(r, "checkpoint weights")?);
            }
            let mut bias = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                bias.push(read_f64(r, "checkpoint bias")?);
            }
            Layer::new(in_dim, out_dim, weight, bias)
        };
        let mut feature_layers = Vec::with_capacity(ndims - 1);
        for pair in dims.windows(2) {
            feature_layers.push(read_layer(pair[0], pair[1])?);
        }
        let classifier = read_layer(dims[ndims - 1], classes)?;
        Self::from_parts(feature_layers, classifier)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated { what }
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, what: &'static str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

/// Per-layer parameter gradients, shaped exactly like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub feature: Vec<LayerGrads>,
    pub classifier: LayerGrads,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Transformation spliced in between `f` and `g` during the loss pass.
/// Receives the feature batch (mutable) plus the batch labels; whatever it
/// writes is treated as an additive constant by the backward pass.
pub trait FeatureHook {
    fn apply(&mut self, features: &mut SampleMatrix, labels: &[usize]) -> Result<()>;
}

/// Everything a training step needs from one loss evaluation.
#[derive(Debug)]
pub struct LossOutput {
    /// Mean softmax cross-entropy over the batch.
    pub loss: f64,
    pub grads: Gradients,
    /// The *unhooked* feature batch `f(X_B)`, labels attached — this is what
    /// covariance accumulation must see.
    pub features: SampleMatrix,
    /// Argmax class per column of the (hooked) logits.
    pub predictions: Vec<usize>,
}

/// Mean softmax cross-entropy and all parameter gradients for one batch,
/// with an optional feature hook applied between `f` and `g`.
pub fn loss_and_grads(
    model: &ClassifierModel,
    x: &SampleMatrix,
    labels: &[usize],
    mut hook: Option<&mut dyn FeatureHook>,
) -> Result<LossOutput> {
    let n = x.count();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    let classes = model.classes();
    for &y in labels {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
    }
    if x.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: x.dim(),
        });
    }

    // Forward through f, keeping pre-activations for the rectifier masks and
    // post-activations for the weight gradients.
    let layers = &model.feature_layers;
    let mut posts: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
    let mut pres: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    posts.push(x.data().to_vec());
    for (li, layer) in layers.iter().enumerate() {
        let pre = layer.affine(posts.last().unwrap(), n);
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer: li });
        }
        let post = pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        pres.push(pre);
        posts.push(post);
    }

    let p = model.feature_dim();
    let mut features = SampleMatrix::new(p, posts.last().unwrap().clone())?;
    features.set_labels(labels.to_vec())?;

    let mut hooked = features.clone();
    if let Some(h) = hook.as_deref_mut() {
        h.apply(&mut hooked, labels)?;
        if hooked.dim() != p || hooked.count() != n {
            return Err(Error::ShapeMismatch {
                context: "feature hook output",
            });
        }
    }

    let logits = model.classifier.affine(hooked.data(), n);

    // Softmax cross-entropy per column, stably via the max trick; the same
    // pass produces predictions and the logit gradients.
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(n);
    let mut glogits = vec![0.0; classes * n];
    let inv_n = 1.0 / n as f64;
    for col in 0..n {
        let lg = &logits[col * classes..(col + 1) * classes];
        let mut max = lg[0];
        let mut arg = 0;
        for (c, &v) in lg.iter().enumerate().skip(1) {
            if v > max {
                max = v;
                arg = c;
            }
        }
        predictions.push(arg);
        let mut sum = 0.0;
        for &v in lg {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        loss_sum += lse - lg[labels[col]];
        let g = &mut glogits[col * classes..(col + 1) * classes];
        for c in 0..classes {
            let prob = (lg[c] - max).exp() / sum;
            g[c] = (prob - if c == labels[col] { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    let loss = loss_sum * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }

    // Backward. Classifier first (against the hooked features), then back
    // through the rectified layers; the hook contributes nothing here.
    let mut classifier_grads = LayerGrads {
        weight: vec![0.0; classes * p],
        bias: vec![0.0; classes],
    };
    for col in 0..n {
        let g = &glogits[col * classes..(col + 1) * classes];
        let a = &hooked.data()[col * p..(col + 1) * p];
        for r in 0..classes {
            let gr = g[r];
            if gr != 0.0 {
                let row = &mut classifier_grads.weight[r * p..(r + 1) * p];
                for (wv, av) in row.iter_mut().zip(a) {
                    *wv += gr * av;
                }
            }
            classifier_grads.bias[r] += g[r];
        }
    }
    // d/d(features) of the classifier input.
    let mut dact = vec![0.0; p * n];
    for col in 0..n {
        let g = &glogits[col * classes..(col + 1) * classes];
        let da = &mut dact[col * p..(col + 1) * p];
        for r in 0..classes {
            let gr = g[r];
            if gr != 0.0 {
                let row = &model.classifier.weight[r * p..(r + 1) * p];
                for (dv, wv) in da.iter_mut().zip(row) {
                    *dv += gr * wv;
                }
            }
        }
    }

    let mut feature_grads: Vec<LayerGrads> = layers
        .iter()
        .map(|l| LayerGrads {
            weight: vec![0.0; l.out_dim * l.in_dim],
            bias: vec![0.0; l.out_dim],
        })
        .collect();
    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let (din, dout) = (layer.in_dim, layer.out_dim);
        // Rectifier mask: gradient passes only where the pre-activation was
        // strictly positive.
        let pre = &pres[li];
        for (dv, &s) in dact.iter_mut().zip(pre) {
            if s <= 0.0 {
                *dv = 0.0;
            }
        }
        let below = &posts[li];
        let lg = &mut feature_grads[li];
        for col in 0..n {
            let ds = &dact[col * dout..(col + 1) * dout];
            let a = &below[col * din..(col + 1) * din];
            for r in 0..dout {
                let g = ds[r];
                if g != 0.0 {
                    let row = &mut lg.weight[r * din..(r + 1) * din];
                    for (wv, av) in row.iter_mut().zip(a) {
                        *wv += g * av;
                    }
                }
                lg.bias[r] += ds[r];
            }
        }
        if li > 0 {
            let mut next = vec![0.0; din * n];
            for col in 0..n {
                let ds = &dact[col * dout..(col + 1) * dout];
                let da = &mut next[col * din..(col + 1) * din];
                for r in 0..dout {
                    let g = ds[r];
                    if g != 0.0 {
                        let row = &layer.weight[r * din..(r + 1) * din];
                        for (dv, wv) in da.iter_mut().zip(row) {
                            *dv += g * wv;
                        }
                    }
                }
            }
            dact = next;
        }
    }

    Ok(LossOutput {
        loss,
        grads: Gradients {
            feature: feature_grads,
            classifier: classifier_grads,
        },
        features,
        predictions,
    })
}

fn argmax_columns(logits: &SampleMatrix) -> Vec<usize> {
    let c = logits.dim();
    (0..logits.count())
        .map(|col| {
            let lg = logits.column(col);
            let mut arg = 0;
            for (i, &v) in lg.iter().enumerate().skip(1) {
                if v > lg[arg] {
                    arg = i;
                }
            }
            let _ = c;
            arg
        })
        .collect()
}

/// Learning-rate schedule: linear warmup over the first `warmup_epochs`
/// (1-based), then the base rate decayed by `decay_factor` at each milestone
/// epoch `m ≤ epoch`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        // Desk-scale protocol: 60-epoch runs decaying at 40/50.
        Self {
            base_lr: 0.1,
            warmup_epochs: 5,
            milestones: vec![40, 50],
            decay_factor: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        assert!(epoch >= 1, "epochs are 1-based");
        if self.warmup_epochs > 0 && epoch <= self.warmup_epochs {
            return self.base_lr * epoch as f64 / self.warmup_epochs as f64;
        }
        let hits = self.milestones.iter().filter(|&&m| m <= epoch).count() as i32;
        self.base_lr * self.decay_factor.powi(hits)
    }
}

/// SGD-with-momentum state: the schedule plus one velocity buffer per
/// parameter tensor, allocated on first use.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub schedule: LrSchedule,
    pub momentum: f64,
    velocities: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(schedule: LrSchedule, momentum: f64) -> Self {
        Self {
            schedule,
            momentum,
            velocities: Vec::new(),
        }
    }
}

/// One update: `v ← momentum·v + grad`, `θ ← θ − lr(epoch)·v` for every
/// parameter tensor. Aborts (without touching the model) on any shape
/// mismatch or non-finite update.
pub fn sgd_step(
    model: &mut ClassifierModel,
    grads: &Gradients,
    opt: &mut OptimizerState,
    epoch: usize,
) -> Result<()> {
    if grads.feature.len() != model.feature_layers.len() {
        return Err(Error::ShapeMismatch {
            context: "feature layer count",
        });
    }
    let tensors = model.feature_layers.len() * 2 + 2;
    if opt.velocities.is_empty() {
        for layer in model.feature_layers.iter().chain([&model.classifier]) {
            opt.velocities.push(vec![0.0; layer.weight.len()]);
            opt.velocities.push(vec![0.0; layer.bias.len()]);
        }
    }
    if opt.velocities.len() != tensors {
        return Err(Error::ShapeMismatch {
            context: "optimizer velocity buffers",
        });
    }
    let lr = opt.schedule.lr(epoch);
    let m = opt.momentum;

    let layer_grads = grads
        .feature
        .iter()
        .chain([&grads.classifier])
        .flat_map(|g| [&g.weight, &g.bias]);
    let layer_params = model
        .feature_layers
        .iter_mut()
        .chain([&mut model.classifier])
        .flat_map(|l| [&mut l.weight, &mut l.bias]);

    for ((params, grad), vel) in layer_params.zip(layer_grads).zip(&mut opt.velocities) {
        if params.len() != grad.len() {
            return Err(Error::ShapeMismatch {
                context: "gradient tensor",
            });
        }
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(vel.iter_mut()) {
            *v = m * *v + g;
            *p -= lr * *v;
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    context: "parameter update",
                });
            }
        }
    }
    Ok(())
}
