//! Shared helpers for the integration suites, including an independent
//! eigensolver oracle.
//!
//! The oracle is intentionally a *different* algorithm from the library's
//! solver: classical Jacobi with greedy pivoting (always zero the largest
//! off-diagonal element), the rotation built from `atan2`, and the update
//! done by full matrix multiplication. Slow and simple — correctness over
//! cleverness.

#![allow(dead_code)] // each test target compiles its own copy of this module

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ourlt::augment::our_transform;
use ourlt::manifold::SampleMatrix;
use ourlt::model::{ClassifierModel, FeatureHook, Gradients, Layer};
use ourlt::Result;

/// Eigenvalues (descending) and matching eigenvector columns of a symmetric
/// matrix given in row-major order.
pub fn oracle_eig(dim: usize, m: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(m.len(), dim * dim);
    let mut a: Vec<Vec<f64>> = (0..dim)
        .map(|r| m[r * dim..(r + 1) * dim].to_vec())
        .collect();
    // v starts as the identity; columns accumulate the rotations.
    let mut v: Vec<Vec<f64>> = (0..dim)
        .map(|r| (0..dim).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(1.0);
    for _ in 0..20_000 {
        // Greedy pivot: the largest remaining off-diagonal entry.
        let (mut p, mut q, mut best) = (0, 0, 0.0f64);
        for r in 0..dim {
            for c in (r + 1)..dim {
                if a[r][c].abs() > best {
                    best = a[r][c].abs();
                    p = r;
                    q = c;
                }
            }
        }
        if best <= 1e-15 * scale {
            break;
        }
        let phi = 0.5 * (2.0 * a[p][q]).atan2(a[p][p] - a[q][q]);
        let (s, c) = phi.sin_cos();
        // Full-matrix update: A ← JᵀAJ, V ← VJ with J the Givens rotation.
        let mut j: Vec<Vec<f64>> = (0..dim)
            .map(|r| (0..dim).map(|k| if r == k { 1.0 } else { 0.0 }).collect())
            .collect();
        j[p][p] = c;
        j[q][q] = c;
        j[p][q] = -s;
        j[q][p] = s;
        a = mat_mul(&mat_mul(&transpose(&j), &a), &j);
        v = mat_mul(&v, &j);
    }

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &k| a[k][k].total_cmp(&a[i][i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| (0..dim).map(|r| v[r][i]).collect())
        .collect();
    (eigenvalues, eigenvectors)
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    (0..n).map(|r| (0..n).map(|c| m[c][r]).collect()).collect()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[r][k] * b[k][c];
            }
            out[r][c] = acc;
        }
    }
    out
}

/// Seeded dense symmetric matrix with entries in [−1, 1).
pub fn random_symmetric(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in r..dim {
            let x: f64 = rng.random::<f64>() * 2.0 - 1.0;
            m[r * dim + c] = x;
            m[c * dim + r] = x;
        }
    }
    m
}

/// Seeded feature set: `n` columns of dimension `dim`, entries in [−1, 1).
pub fn random_samples(dim: usize, n: usize, seed: u64) -> SampleMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..dim * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    SampleMatrix::new(dim, data).unwrap()
}

/// Seeded unit vector, uniform on the sphere.
pub fn random_unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand_distr::StandardNormal;
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

pub fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ‖A − B‖_F / ‖B‖_F (with an absolute fallback for ‖B‖ = 0).
pub fn rel_frobenius_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm = frobenius(b);
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Rebuilds the model with parameter `idx` (in flat enumeration order:
/// feature layers then classifier, weights before bias) bumped by `delta`.
pub fn bump_parameter(model: &ClassifierModel, idx: usize, delta: f64) -> ClassifierModel {
    let mut remaining = idx;
    let mut layers: Vec<Layer> = model.feature_layers().to_vec();
    let mut classifier = model.classifier().clone();
    let mut all: Vec<&mut Layer> = layers.iter_mut().collect();
    all.push(&mut classifier);
    for layer in all {
        let wlen = layer.weight().len();
        let blen = layer.bias().len();
        if remaining < wlen + blen {
            let mut w = layer.weight().to_vec();
            let mut b = layer.bias().to_vec();
            if remaining < wlen {
                w[remaining] += delta;
            } else {
                b[remaining - wlen] += delta;
            }
            let (in_dim, out_dim) = (wlen / blen, blen);
            *layer = Layer::new(in_dim, out_dim, w, b).unwrap();
            return ClassifierModel::from_parts(layers, classifier).unwrap();
        }
        remaining -= wlen + blen;
    }
    panic!("parameter index {idx} out of range");
}

pub fn param_count(model: &ClassifierModel) -> usize {
    model
        .feature_layers()
        .iter()
        .chain(std::iter::once(model.classifier()))
        .map(|l| l.weight().len() + l.bias().len())
        .sum()
}

pub fn flat_grads(g: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for lg in g.feature.iter().chain(std::iter::once(&g.classifier)) {
        out.extend_from_slice(&lg.weight);
        out.extend_from_slice(&lg.bias);
    }
    out
}

/// Deterministic perturbation hook: replays the same draws on every call, so
/// the loss stays a fixed function of the parameters during differencing.
pub struct ReplayHook {
    pub u: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub seed: u64,
}

impl FeatureHook for ReplayHook {
    fn apply(&mut self, features: &mut SampleMatrix, _labels: &[usize]) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        *features = our_transform(features, &self.u, self.lambda, self.mu, &mut rng)?;
        Ok(())
    }
}

/// Naive covariance oracle: (1/N)·Σ (xᵢ−c)(xᵢ−c)ᵀ with an independent
/// double loop over full (row, col) pairs — no shared code with the library.
pub fn naive_covariance(x: &SampleMatrix, center: bool) -> Vec<f64> {
    let d = x.dim();
    let n = x.count();
    let mut mean = vec![0.0; d];
    if center {
        for col in 0..n {
            for (m, v) in mean.iter_mut().zip(x.column(col)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    for col in 0..n {
        let c = x.column(col);
        for r in 0..d {
            for k in 0..d {
                cov[r * d + k] += (c[r] - mean[r]) * (c[k] - mean[k]);
            }
        }
    }
    for v in &mut cov {
        *v /= n as f64;
    }
    cov
}
