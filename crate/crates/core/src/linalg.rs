//! Dense symmetric matrices and a Jacobi eigensolver.
//!
//! Everything downstream (covariance directions, noise scaling, robustness
//! reports) reduces to full eigendecompositions of small symmetric matrices,
//! so this module favors determinism and verifiability over raw speed:
//! plain `f64` storage, cyclic Jacobi rotations, and a fixed tie-breaking
//! convention so that repeated runs produce bit-identical directions.

use crate::error::{Error, Result};

/// Components smaller than this are treated as zero when picking the pivot
/// component for the sign convention.
pub const SIGN_EPS: f64 = 1e-12;

/// Convergence: off-diagonal Frobenius norm relative to the input norm.
const OFF_DIAG_TOL: f64 = 1e-12;

/// Hard cap on Jacobi sweeps; cyclic Jacobi converges quadratically, so
/// hitting this indicates non-finite garbage rather than a hard matrix.
const MAX_SWEEPS: usize = 100;

/// Relative tolerance under which eigenvalues count as tied when selecting
/// the smallest-eigenvalue eigenvector.
const TIE_REL_TOL: f64 = 1e-10;

/// A dense symmetric matrix with `f64` entries, stored row-major.
///
/// Construction enforces symmetry: input that is asymmetric beyond an
/// absolute tolerance of `1e-9` is rejected, and anything within tolerance is
/// symmetrized as `(M + Mᵀ) / 2` so the stored data is *exactly* symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Absolute asymmetry above which construction fails.
    pub const ASYMMETRY_TOL: f64 = 1e-9;

    /// Builds a symmetric matrix from row-major data of length `dim * dim`.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionZero);
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "symmetric matrix entries",
            });
        }
        let mut data = data;
        let mut max_abs_diff = 0.0f64;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let a = data[i * dim + j];
                let b = data[j * dim + i];
                max_abs_diff = max_abs_diff.max((a - b).abs());
                let avg = 0.5 * (a + b);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        if max_abs_diff > Self::ASYMMETRY_TOL {
            return Err(Error::Asymmetric { max_abs_diff });
        }
        Ok(Self { dim, data })
    }

    /// Builds the matrix entry-wise from `f(i, j)`; the result is symmetrized
    /// like [`SymMatrix::new`], so `f` should already be symmetric in `(i, j)`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = vec![0.0; dim.checked_mul(dim).unwrap_or(0)];
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] = f(i, j);
            }
        }
        Self::new(dim, data)
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionZero);
        }
        Ok(Self {
            dim,
            data: vec![0.0; dim * dim],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major backing slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// `M v` for a vector of matching dimension.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        Ok(out)
    }

    /// Scales every entry by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }
}

/// Full spectrum of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order; `eigenvector(k)` pairs with
/// `eigenvalues()[k]`. Every eigenvector is unit-norm and sign-normalized:
/// its first component with magnitude above [`SIGN_EPS`] is positive.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    dim: usize,
    eigenvalues: Vec<f64>,
    /// Column-major: eigenvector `k` occupies `vectors[k*dim .. (k+1)*dim]`.
    vectors: Vec<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }
}

/// Flips `v` so its first component with magnitude above [`SIGN_EPS`] is
/// positive. Vectors with no such component are left unchanged.
pub fn sign_normalize(v: &mut [f64]) {
    for &x in v.iter() {
        if x.abs() > SIGN_EPS {
            if x < 0.0 {
                for y in v.iter_mut() {
                    *y = -*y;
                }
            }
            return;
        }
    }
}

/// Full eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps rotate every strict upper-triangle pair `(p, q)` in row order and
/// repeat until the off-diagonal Frobenius norm drops below
/// `1e-12 * ‖M‖_F`, up to 100 sweeps. Accumulated rotations give the
/// eigenvectors, which are then renormalized to unit length so downstream
/// displacement arithmetic can rely on `‖v‖ = 1` to machine precision.
pub fn sym_eig(m: &SymMatrix) -> Result<EigenDecomposition> {
    let n = m.dim;
    let mut a = m.data.clone();
    let mut v = vec![0.0; n * n]; // row-major; columns accumulate rotations
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let target = OFF_DIAG_TOL * m.frobenius_norm();
    let mut sweeps = 0;
    while off_diag_norm(&a, n) > target {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                jacobi_rotate(&mut a, &mut v, n, p, q);
            }
        }
        sweeps += 1;
    }

    // Sort by eigenvalue, descending; the sort is stable, so exactly tied
    // eigenvalues keep the rotation order, which keeps results deterministic.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (out, &src) in order.iter().enumerate() {
        let col = &mut vectors[out * n..(out + 1) * n];
        for k in 0..n {
            col[k] = v[k * n + src];
        }
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in col.iter_mut() {
                *x /= norm;
            }
        }
        sign_normalize(col);
    }

    Ok(EigenDecomposition {
        dim: n,
        eigenvalues,
        vectors,
    })
}

/// The unit direction of least variance: the eigenvector paired with the
/// smallest eigenvalue, together with that eigenvalue.
///
/// When several eigenvalues tie with the smallest (relative tolerance
/// `1e-10`), the lexicographically smallest sign-normalized eigenvector among
/// them is returned, giving a single well-defined answer even for degenerate
/// spectra — the zero matrix in three dimensions yields `+e3`, the identity
/// in four dimensions yields `e4`.
pub fn smallest_eigvec(m: &SymMatrix) -> Result<(Vec<f64>, f64)> {
    let decomp = sym_eig(m)?;
    let n = decomp.dim;
    let lambda_min = decomp.eigenvalues[n - 1];
    let tol = TIE_REL_TOL * lambda_min.abs();

    let mut best = decomp.eigenvector(n - 1);
    for k in (0..n - 1).rev() {
        if (decomp.eigenvalues[k] - lambda_min).abs() > tol {
            break;
        }
        let cand = decomp.eigenvector(k);
        if lex_less(cand, best) {
            best = cand;
        }
    }
    Ok((best.to_vec(), lambda_min))
}

/// Mean of the `min(k, dim)` largest eigenvalues. `k` must be at least 1.
pub fn top_k_mean_eigval(m: &SymMatrix, k: usize) -> Result<f64> {
    assert!(k >= 1, "top_k_mean_eigval requires k >= 1");
    let decomp = sym_eig(m)?;
    let take = k.min(m.dim);
    Ok(decomp.eigenvalues[..take].iter().sum::<f64>() / take as f64)
}

fn off_diag_norm(a: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let x = a[i * n + j];
            sum += 2.0 * x * x;
        }
    }
    sum.sqrt()
}

/// One Jacobi rotation zeroing `a[p][q]`, with the rotation accumulated into
/// the columns of `v`. Uses the stable half-angle formulation.
fn jacobi_rotate(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta >= 0.0 {
        1.0 / (theta + (1.0 + theta * theta).sqrt())
    } else {
        1.0 / (theta - (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);

    a[p * n + p] = app - t * apq;
    a[q * n + q] = aqq + t * apq;
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = akp - s * (akq + tau * akp);
        a[k * n + q] = akq + s * (akp - tau * akq);
        a[p * n + k] = a[k * n + p];
        a[q * n + k] = a[k * n + q];
    }
    for k in 0..n {
        let vkp = v[k * n + p];
        let vkq = v[k * n + q];
        v[k * n + p] = vkp - s * (vkq + tau * vkp);
        v[k * n + q] = vkq + s * (vkp - tau * vkq);
    }
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dimension() {
        assert!(matches!(
            SymMatrix::new(0, vec![]),
            Err(Error::DimensionZero)
        ));
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            SymMatrix::new(2, vec![1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            SymMatrix::new(2, vec![1.0, f64::NAN, f64::NAN, 1.0]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn rejects_asymmetry_above_tolerance() {
        let err = SymMatrix::new(2, vec![1.0, 2.0, 2.0 + 3e-9, 1.0]);
        assert!(matches!(err, Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn symmetrizes_within_tolerance() {
        let m = SymMatrix::new(2, vec![1.0, 2.0, 2.0 + 4e-10, 1.0]).unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!((m.get(0, 1) - (2.0 + 2e-10)).abs() < 1e-15);
    }

    #[test]
    fn identity_spectrum() {
        let m = SymMatrix::identity(4).unwrap();
        let d = sym_eig(&m).unwrap();
        assert_eq!(d.eigenvalues(), &[1.0, 1.0, 1.0, 1.0]);
        for k in 0..4 {
            let mut expect = vec![0.0; 4];
            expect[k] = 1.0;
            assert_eq!(d.eigenvector(k), &expect[..]);
        }
    }

    #[test]
    fn identity_smallest_direction_is_last_basis_vector() {
        // All eigenvalues tie; the lexicographic rule picks e4.
        let m = SymMatrix::identity(4).unwrap();
        let (u, lam) = smallest_eigvec(&m).unwrap();
        assert_eq!(lam, 1.0);
        assert_eq!(u, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_matrix_smallest_direction() {
        let m = SymMatrix::zeros(3).unwrap();
        let (u, lam) = smallest_eigvec(&m).unwrap();
        assert_eq!(lam, 0.0);
        assert_eq!(u, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn diagonal_matrix_sorts_descending() {
        let m = SymMatrix::from_fn(3, |i, j| {
            if i == j {
                [3.0, 1.0, 2.0][i]
            } else {
                0.0
            }
        })
        .unwrap();
        let d = sym_eig(&m).unwrap();
        assert_eq!(d.eigenvalues(), &[3.0, 2.0, 1.0]);
        assert_eq!(d.eigenvector(0), &[1.0, 0.0, 0.0]);
        assert_eq!(d.eigenvector(1), &[0.0, 0.0, 1.0]);
        assert_eq!(d.eigenvector(2), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two_analytic() {
        // [[2, 1], [1, 2]] has eigenpairs (3, [1,1]/√2) and (1, [1,-1]/√2).
        let m = SymMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let d = sym_eig(&m).unwrap();
        let r = 0.5f64.sqrt();
        assert!((d.eigenvalues()[0] - 3.0).abs() < 1e-12);
        assert!((d.eigenvalues()[1] - 1.0).abs() < 1e-12);
        for (got, want) in d.eigenvector(0).iter().zip([r, r]) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in d.eigenvector(1).iter().zip([r, -r]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_convention_skips_near_zero_leading_component() {
        // Rank-one matrix v vᵀ with v = (0, -0.6, 0.8): the unit eigenvector
        // for λ = 1 must come out with its *second* component positive.
        let v = [0.0, -0.6, 0.8];
        let m = SymMatrix::from_fn(3, |i, j| v[i] * v[j]).unwrap();
        let d = sym_eig(&m).unwrap();
        assert!((d.eigenvalues()[0] - 1.0).abs() < 1e-12);
        let top = d.eigenvector(0);
        assert!(top[0].abs() <= SIGN_EPS);
        assert!((top[1] - 0.6).abs() < 1e-12);
        assert!((top[2] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn top_k_mean_clamps_k_to_dimension() {
        let m = SymMatrix::from_fn(3, |i, j| {
            if i == j {
                [5.0, 3.0, 1.0][i]
            } else {
                0.0
            }
        })
        .unwrap();
        assert_eq!(top_k_mean_eigval(&m, 2).unwrap(), 4.0);
        assert_eq!(top_k_mean_eigval(&m, 10).unwrap(), 3.0);
    }

    #[test]
    fn mul_vec_matches_hand_computation() {
        let m = SymMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.mul_vec(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        assert!(m.mul_vec(&[1.0]).is_err());
    }
}
