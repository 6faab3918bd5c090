//! Data manifolds: centroids, least-variance directions, and shifted copies.
//!
//! A dataset is viewed as `d×N` columns in a linear space. Its "orthogonal
//! direction" is the unit vector `U` minimizing `Σᵢ((xᵢ−c)ᵀU)²`, i.e. the
//! eigenvector of the covariance with the smallest eigenvalue. Translating all
//! columns by `L·U` produces a noisy copy of the manifold at distance `L`;
//! sweeping `L` over a schedule is how robustness is probed downstream.

use crate::error::{Error, Result};
use crate::linalg::{self, EigenDecomposition, SymMatrix};

/// How many leading eigenvalues enter `lambda_mean` (clamped to the
/// dimension for small problems).
pub const LAMBDA_MEAN_TOP_K: usize = 10;

/// Default evaluation sweep, as fractions of `lambda_max`.
pub const DEFAULT_EVAL_FRACTIONS: [f64; 6] = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05];

/// A set of points stored one per column, with optional class labels.
///
/// Data is column-major: point `i` occupies `data[i*dim .. (i+1)*dim]`.
/// Invariants enforced at construction: at least one column, all entries
/// finite, label count (when present) equal to the column count.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    dim: usize,
    data: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl SampleMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionZero);
        }
        if data.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim * (data.len() / dim + 1),
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "sample matrix entries",
            });
        }
        Ok(Self {
            dim,
            data,
            labels: None,
        })
    }

    pub fn with_labels(dim: usize, data: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let mut m = Self::new(dim, data)?;
        if labels.len() != m.count() {
            return Err(Error::LengthMismatch {
                left: m.count(),
                right: labels.len(),
            });
        }
        m.labels = Some(labels);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of columns (points).
    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Column-major backing slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<usize>) -> Result<()> {
        if labels.len() != self.count() {
            return Err(Error::LengthMismatch {
                left: self.count(),
                right: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn clear_labels(&mut self) {
        self.labels = None;
    }

    /// New matrix holding the selected columns (labels follow when present).
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.column(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Self {
            dim: self.dim,
            data,
            labels,
        })
    }
}

/// The least-variance unit direction of a manifold, together with the
/// spectrum summaries that parameterize noise scales downstream.
#[derive(Debug, Clone)]
pub struct OrthoDirection {
    /// Unit vector; sign- and tie-normalized by the eigensolver.
    pub u: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Mean of the top `min(LAMBDA_MEAN_TOP_K, dim)` eigenvalues.
    pub lambda_mean: f64,
    /// Reference point of the quadratic objective: the column mean in the
    /// centered construction, the origin in the uncentered one.
    pub centroid: Vec<f64>,
}

impl OrthoDirection {
    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Derives a direction from an already-formed covariance matrix.
    pub fn from_covariance(cov: &SymMatrix, centroid: Vec<f64>) -> Result<Self> {
        if centroid.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: centroid.len(),
            });
        }
        let decomp = linalg::sym_eig(cov)?;
        Ok(Self::from_decomposition(&decomp, centroid))
    }

    fn from_decomposition(decomp: &EigenDecomposition, centroid: Vec<f64>) -> Self {
        let eigs = decomp.eigenvalues();
        let take = LAMBDA_MEAN_TOP_K.min(eigs.len());
        let lambda_mean = eigs[..take].iter().sum::<f64>() / take as f64;
        let (u, lambda_min) = smallest_of(decomp);
        OrthoDirection {
            u,
            lambda_min,
            lambda_max: eigs[0],
            lambda_mean,
            centroid,
        }
    }
}

/// Smallest-eigenvalue eigenvector with the same tie-break convention as
/// [`linalg::smallest_eigvec`], taken from an existing decomposition.
fn smallest_of(decomp: &EigenDecomposition) -> (Vec<f64>, f64) {
    let n = decomp.dim();
    let eigs = decomp.eigenvalues();
    let lambda_min = eigs[n - 1];
    let tol = 1e-10 * lambda_min.abs();
    let mut best = decomp.eigenvector(n - 1);
    for k in (0..n - 1).rev() {
        if (eigs[k] - lambda_min).abs() > tol {
            break;
        }
        let cand = decomp.eigenvector(k);
        if lex_less(cand, best) {
            best = cand;
        }
    }
    (best.to_vec(), lambda_min)
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Shift distances expressed as fractions of `lambda_max`, resolved against a
/// particular direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSchedule {
    fractions: Vec<f64>,
    distances: Vec<f64>,
}

impl DistanceSchedule {
    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// Absolute distances `L = fraction · lambda_max`.
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.fractions
            .iter()
            .copied()
            .zip(self.distances.iter().copied())
    }
}

/// Column mean of the points.
pub fn centroid(x: &SampleMatrix) -> Vec<f64> {
    let d = x.dim();
    let n = x.count();
    let mut c = vec![0.0; d];
    for i in 0..n {
        for (acc, v) in c.iter_mut().zip(x.column(i)) {
            *acc += v;
        }
    }
    for v in &mut c {
        *v /= n as f64;
    }
    c
}

/// Covariance `(1/N) Y Yᵀ` of the columns, optionally centered by the column
/// mean first. The upper triangle is computed once and mirrored, so the
/// result is exactly symmetric.
pub fn covariance(x: &SampleMatrix, centered: bool) -> Result<SymMatrix> {
    let d = x.dim();
    let n = x.count();
    let c = if centered {
        centroid(x)
    } else {
        vec![0.0; d]
    };
    let mut m = vec![0.0; d * d];
    let mut y = vec![0.0; d];
    for col in 0..n {
        for (yi, (xi, ci)) in y.iter_mut().zip(x.column(col).iter().zip(&c)) {
            *yi = xi - ci;
        }
        for i in 0..d {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            for j in i..d {
                m[i * d + j] += yi * y[j];
            }
        }
    }
    let scale = 1.0 / n as f64;
    for i in 0..d {
        for j in i..d {
            let v = m[i * d + j] * scale;
            m[i * d + j] = v;
            m[j * d + i] = v;
        }
    }
    SymMatrix::new(d, m)
}

/// Least-variance direction of the manifold (the full contract: covariance,
/// eigendecomposition, spectrum summaries).
///
/// `centered` selects between the two covariance conventions used in
/// practice: raw-data manifolds subtract the centroid; the in-training
/// feature pipeline works with the uncentered `(1/N)XXᵀ`. A rank-deficient
/// covariance is not an error — it legitimately yields `lambda_min = 0` and
/// an exact orthogonal complement direction.
pub fn orthogonal_direction(x: &SampleMatrix, centered: bool) -> Result<OrthoDirection> {
    if x.count() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: x.count(),
        });
    }
    if x.dim() < 2 {
        return Err(Error::DimensionTooSmall {
            needed: 2,
            got: x.dim(),
        });
    }
    let cov = covariance(x, centered)?;
    let decomp = linalg::sym_eig(&cov)?;
    let c = if centered {
        centroid(x)
    } else {
        vec![0.0; x.dim()]
    };
    Ok(OrthoDirection::from_decomposition(&decomp, c))
}

/// Translates every column by `L·U`. Labels are preserved; the translation is
/// rigid, so all pairwise distances between columns are untouched and each
/// column moves exactly `L` (since `‖U‖ = 1`).
pub fn shift_manifold(x: &SampleMatrix, dir: &OrthoDirection, l: f64) -> Result<SampleMatrix> {
    if dir.u.len() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: dir.u.len(),
        });
    }
    if !l.is_finite() || l < 0.0 {
        return Err(Error::NegativeDistance(l));
    }
    // L = 0 must return the input bit-for-bit, so skip the arithmetic
    // entirely (adding 0.0 would flip the sign of -0.0 entries).
    if l == 0.0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    let d = x.dim();
    for col in 0..out.count() {
        let column = out.column_mut(col);
        for j in 0..d {
            column[j] += l * dir.u[j];
        }
    }
    Ok(out)
}

/// Resolves ascending fractions of `lambda_max` into absolute distances.
pub fn build_schedule(dir: &OrthoDirection, fractions: &[f64]) -> Result<DistanceSchedule> {
    for (i, &f) in fractions.iter().enumerate() {
        if !f.is_finite() || f < 0.0 {
            return Err(Error::NonAscending);
        }
        if i > 0 && f <= fractions[i - 1] {
            return Err(Error::NonAscending);
        }
    }
    Ok(DistanceSchedule {
        fractions: fractions.to_vec(),
        distances: fractions.iter().map(|f| f * dir.lambda_max).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(dim: usize, cols: &[&[f64]]) -> SampleMatrix {
        let mut data = Vec::new();
        for c in cols {
            data.extend_from_slice(c);
        }
        SampleMatrix::new(dim, data).unwrap()
    }

    #[test]
    fn sample_matrix_validation() {
        assert!(matches!(
            SampleMatrix::new(0, vec![]),
            Err(Error::DimensionZero)
        ));
        assert!(matches!(
            SampleMatrix::new(2, vec![]),
            Err(Error::EmptyMatrix)
        ));
        assert!(matches!(
            SampleMatrix::new(2, vec![1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            SampleMatrix::new(1, vec![f64::INFINITY]),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            SampleMatrix::with_labels(2, vec![1.0, 2.0], vec![0, 1]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn centroid_of_two_points() {
        let x = points(2, &[&[0.0, 0.0], &[2.0, 0.0]]);
        assert_eq!(centroid(&x), vec![1.0, 0.0]);
    }

    #[test]
    fn centroid_of_single_point_is_identity() {
        let x = points(3, &[&[1.5, -2.0, 0.25]]);
        assert_eq!(centroid(&x), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn planar_points_give_exact_normal() {
        // Points confined to z = 0: the centered covariance has an exact
        // null direction +e3.
        let x = points(
            3,
            &[
                &[1.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0],
                &[-1.0, 2.0, 0.0],
                &[3.0, -1.0, 0.0],
            ],
        );
        let dir = orthogonal_direction(&x, true).unwrap();
        assert_eq!(dir.u, vec![0.0, 0.0, 1.0]);
        assert_eq!(dir.lambda_min, 0.0);
        assert!(dir.lambda_max > 0.0);
        assert!(dir.lambda_min <= dir.lambda_mean && dir.lambda_mean <= dir.lambda_max);
    }

    #[test]
    fn identical_columns_centered_is_zero_covariance() {
        let x = points(3, &[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
        let dir = orthogonal_direction(&x, true).unwrap();
        assert_eq!(dir.lambda_min, 0.0);
        assert_eq!(dir.lambda_max, 0.0);
        // Zero covariance: every direction ties; the tie-break picks e3.
        assert_eq!(dir.u, vec![0.0, 0.0, 1.0]);
        assert_eq!(dir.centroid, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn direction_requires_two_samples_and_two_dims() {
        let single = points(3, &[&[1.0, 2.0, 3.0]]);
        assert!(matches!(
            orthogonal_direction(&single, true),
            Err(Error::TooFewSamples { .. })
        ));
        let thin = points(1, &[&[1.0], &[2.0]]);
        assert!(matches!(
            orthogonal_direction(&thin, true),
            Err(Error::DimensionTooSmall { .. })
        ));
    }

    #[test]
    fn shift_by_zero_is_bitwise_identity() {
        let x = points(2, &[&[-0.0, 1.0], &[0.5, -2.0]]);
        let dir = OrthoDirection {
            u: vec![1.0, 0.0],
            lambda_min: 0.0,
            lambda_max: 1.0,
            lambda_mean: 1.0,
            centroid: vec![0.0, 0.0],
        };
        let shifted = shift_manifold(&x, &dir, 0.0).unwrap();
        assert_eq!(shifted.data(), x.data());
        // -0.0 must survive untouched.
        assert!(shifted.data()[0].is_sign_negative());
    }

    #[test]
    fn shift_moves_along_axis() {
        let x = points(2, &[&[1.0, 0.0]]);
        let dir = OrthoDirection {
            u: vec![0.0, 1.0],
            lambda_min: 0.0,
            lambda_max: 1.0,
            lambda_mean: 1.0,
            centroid: vec![0.0, 0.0],
        };
        let shifted = shift_manifold(&x, &dir, 2.0).unwrap();
        assert_eq!(shifted.column(0), &[1.0, 2.0]);
    }

    #[test]
    fn shift_rejects_negative_distance_and_bad_dims() {
        let x = points(2, &[&[1.0, 0.0]]);
        let dir = OrthoDirection {
            u: vec![0.0, 1.0],
            lambda_min: 0.0,
            lambda_max: 1.0,
            lambda_mean: 1.0,
            centroid: vec![0.0, 0.0],
        };
        assert!(matches!(
            shift_manifold(&x, &dir, -0.5),
            Err(Error::NegativeDistance(_))
        ));
        let bad = OrthoDirection {
            u: vec![1.0],
            ..dir
        };
        assert!(matches!(
            shift_manifold(&x, &bad, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn schedule_resolves_fractions() {
        let dir = OrthoDirection {
            u: vec![1.0, 0.0],
            lambda_min: 1.0,
            lambda_max: 100.0,
            lambda_mean: 50.0,
            centroid: vec![0.0, 0.0],
        };
        let s = build_schedule(&dir, &[0.0, 0.02, 0.05]).unwrap();
        assert_eq!(s.distances(), &[0.0, 2.0, 5.0]);
        assert_eq!(s.fractions(), &[0.0, 0.02, 0.05]);
        assert!(build_schedule(&dir, &[]).unwrap().is_empty());
        assert!(matches!(
            build_schedule(&dir, &[0.0, 0.02, 0.02]),
            Err(Error::NonAscending)
        ));
        assert!(matches!(
            build_schedule(&dir, &[-0.01, 0.02]),
            Err(Error::NonAscending)
        ));
    }

    #[test]
    fn labels_survive_selection_and_shift() {
        let x = SampleMatrix::with_labels(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0, 1, 0])
            .unwrap();
        let sel = x.select_columns(&[2, 0]).unwrap();
        assert_eq!(sel.labels().unwrap(), &[0, 0]);
        assert_eq!(sel.column(0), &[5.0, 6.0]);
        let dir = OrthoDirection {
            u: vec![1.0, 0.0],
            lambda_min: 0.0,
            lambda_max: 1.0,
            lambda_mean: 1.0,
            centroid: vec![0.0, 0.0],
        };
        let shifted = shift_manifold(&x, &dir, 1.0).unwrap();
        assert_eq!(shifted.labels().unwrap(), &[0, 1, 0]);
    }
}
