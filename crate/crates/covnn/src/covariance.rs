//! Covariance estimation, spectrum normalization, and the covariance
//! Fourier transform (projection on the covariance eigenbasis).

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Tolerance below which a spectrum counts as zero.
pub const ZERO_SPECTRUM_TOL: f64 = 1e-12;

/// A subjects-by-features data matrix with labelled columns.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
    feature_names: Vec<String>,
}

impl FeatureMatrix {
    /// Build a feature matrix, checking finiteness and label uniqueness.
    pub fn new(values: DMatrix<f64>, feature_names: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput("feature matrix".into()));
        }
        if feature_names.len() != values.ncols() {
            return Err(Error::Shape {
                expected: format!("{} feature names", values.ncols()),
                found: format!("{}", feature_names.len()),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if !seen.insert(name) {
                return Err(Error::InvalidData(format!("duplicate feature name `{name}`")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry in feature matrix".into()));
        }
        Ok(Self { values, feature_names })
    }

    /// Unlabelled constructor; columns are named `f0001`, `f0002`, ...
    pub fn from_rows(values: DMatrix<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|i| format!("f{:04}", i + 1)).collect();
        Self::new(values, names)
    }

    pub fn n_subjects(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }
}

/// A symmetric covariance matrix together with its cached eigendecomposition.
///
/// Eigenvalues are sorted descending (ties keep the original order) and each
/// eigenvector is flipped so that its largest-magnitude entry is positive,
/// which makes spectral projections reproducible across runs.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    trace: f64,
    normalized: bool,
}

impl CovarianceModel {
    /// Decompose a (nominally) symmetric matrix. The input is symmetrized as
    /// `(A + Aᵀ)/2` first to absorb rounding from upstream arithmetic.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Shape {
                expected: "square matrix".into(),
                found: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry in covariance".into()));
        }
        let m = matrix.nrows();
        let mut sym = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                sym[(i, j)] = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            }
        }
        let trace = sym.trace();

        let eig = sym.clone().symmetric_eigen();
        // Sort descending; equal eigenvalues keep their original index order.
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut eigenvalues = DVector::zeros(m);
        let mut eigenvectors = DMatrix::zeros(m, m);
        for (dst, &src) in order.iter().enumerate() {
            eigenvalues[dst] = eig.eigenvalues[src];
            let mut col = eig.eigenvectors.column(src).clone_owned();
            // Sign convention: largest-magnitude entry positive; first wins on ties.
            let mut pivot = 0;
            for k in 1..m {
                if col[k].abs() > col[pivot].abs() {
                    pivot = k;
                }
            }
            if col[pivot] < 0.0 {
                col.neg_mut();
            }
            eigenvectors.set_column(dst, &col);
        }

        Ok(Self { matrix: sym, eigenvalues, eigenvectors, trace, normalized: false })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, column `i` paired with `eigenvalues()[i]`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eigenvector(&self, i: usize) -> DVector<f64> {
        self.eigenvectors.column(i).clone_owned()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// SHA-256 of the matrix bytes; identifies the covariance a model was
    /// trained on.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim() as u64).to_le_bytes());
        for v in self.matrix.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex_string(&hasher.finalize())
    }

    /// Mark a matrix that is already spectrum-normalized (for instance one
    /// loaded from disk) without rescaling it; errs when the largest
    /// eigenvalue is not 1 within 1e-8.
    pub fn into_normalized(mut self) -> Result<Self> {
        if (self.max_eigenvalue() - 1.0).abs() > 1e-8 {
            return Err(Error::UnnormalizedSpectrum);
        }
        self.normalized = true;
        Ok(self)
    }

    /// `PCPᵀ` for a permutation given as `perm[new_index] = old_index`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let m = self.dim();
        if perm.len() != m {
            return Err(Error::Shape {
                expected: format!("permutation of length {m}"),
                found: format!("{}", perm.len()),
            });
        }
        let mut out = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                out[(i, j)] = self.matrix[(perm[i], perm[j])];
            }
        }
        let mut model = Self::from_matrix(out)?;
        model.normalized = self.normalized;
        Ok(model)
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Unbiased sample covariance `(1/(n-1)) Σ (x_i - x̄)(x_i - x̄)ᵀ`.
///
/// Entries are accumulated per index pair so that permuting the feature
/// columns permutes the result exactly (bit for bit).
pub fn estimate_sample_covariance(data: &FeatureMatrix) -> Result<CovarianceModel> {
    let n = data.n_subjects();
    let m = data.n_features();
    if n < 2 {
        return Err(Error::DegenerateSample(n));
    }
    let x = data.values();
    let mut mean = vec![0.0; m];
    for j in 0..m {
        let mut acc = 0.0;
        for i in 0..n {
            acc += x[(i, j)];
        }
        mean[j] = acc / n as f64;
    }
    let mut cov = DMatrix::zeros(m, m);
    let denom = (n - 1) as f64;
    for a in 0..m {
        for b in a..m {
            let mut acc = 0.0;
            for i in 0..n {
                acc += (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]);
            }
            let v = acc / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    CovarianceModel::from_matrix(cov)
}

/// Scale the covariance so its largest eigenvalue becomes exactly 1.
pub fn normalize_spectrum(cov: &CovarianceModel) -> Result<CovarianceModel> {
    let lambda_max = cov.max_eigenvalue();
    if lambda_max <= ZERO_SPECTRUM_TOL {
        return Err(Error::ZeroSpectrum(lambda_max));
    }
    let scale = 1.0 / lambda_max;
    let matrix = cov.matrix.scale(scale);
    let mut eigenvalues = cov.eigenvalues.scale(scale);
    eigenvalues[0] = 1.0;
    Ok(CovarianceModel {
        matrix,
        eigenvalues,
        eigenvectors: cov.eigenvectors.clone(),
        trace: cov.trace * scale,
        normalized: true,
    })
}

/// Covariance Fourier transform: project `x` on the eigenbasis, `Vᵀx`.
pub fn vft(cov: &CovarianceModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != cov.dim() {
        return Err(Error::Shape {
            expected: format!("vector of length {}", cov.dim()),
            found: format!("{}", x.len()),
        });
    }
    Ok(cov.eigenvectors.transpose() * x)
}

/// Inverse transform: `V x̃`.
pub fn inverse_vft(cov: &CovarianceModel, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
    if coeffs.len() != cov.dim() {
        return Err(Error::Shape {
            expected: format!("vector of length {}", cov.dim()),
            found: format!("{}", coeffs.len()),
        });
    }
    Ok(&cov.eigenvectors * coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn feature_matrix(rows: &[&[f64]]) -> FeatureMatrix {
        let n = rows.len();
        let m = rows[0].len();
        let mat = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
        FeatureMatrix::from_rows(mat).unwrap()
    }

    #[test]
    fn identical_rows_give_zero_covariance() {
        let row: &[f64] = &[2.0, -1.0, 3.0];
        let data = feature_matrix(&[row; 5]);
        let cov = estimate_sample_covariance(&data).unwrap();
        for v in cov.matrix().iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn three_point_covariance_matches_hand_sum() {
        // rows (1,0), (0,1), (-1,-1): means are zero, so
        // C = (1/2) [[1+0+1, 0+0+1], [0+0+1, 0+1+1]] = [[1, 0.5], [0.5, 1]]
        let data = feature_matrix(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, -1.0]]);
        let cov = estimate_sample_covariance(&data).unwrap();
        assert_abs_diff_eq!(cov.matrix()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cov.matrix()[(0, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cov.matrix()[(1, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cov.matrix()[(1, 1)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn single_row_is_degenerate() {
        let data = feature_matrix(&[&[1.0, 2.0]]);
        assert!(matches!(estimate_sample_covariance(&data), Err(Error::DegenerateSample(1))));
    }

    #[test]
    fn non_finite_entry_rejected() {
        let mat = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(FeatureMatrix::from_rows(mat).is_err());
    }

    #[test]
    fn normalize_identity_is_unchanged() {
        let cov = CovarianceModel::from_matrix(DMatrix::identity(4, 4)).unwrap();
        let norm = normalize_spectrum(&cov).unwrap();
        assert!(norm.is_normalized());
        for i in 0..4 {
            assert_abs_diff_eq!(norm.matrix()[(i, i)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_scales_by_largest_eigenvalue() {
        let cov =
            CovarianceModel::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])))
                .unwrap();
        let norm = normalize_spectrum(&cov).unwrap();
        assert_abs_diff_eq!(norm.matrix()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(norm.matrix()[(1, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(norm.max_eigenvalue(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn normalize_zero_matrix_fails() {
        let cov = CovarianceModel::from_matrix(DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(normalize_spectrum(&cov), Err(Error::ZeroSpectrum(_))));
    }

    #[test]
    fn vft_of_eigenvector_is_unit_basis() {
        let mut rng = crate::rng::stream(11, "cov-test", 0);
        let raw = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let spd = &raw * raw.transpose() + DMatrix::identity(5, 5);
        let cov = CovarianceModel::from_matrix(spd).unwrap();
        let v1 = cov.eigenvector(1);
        let coeffs = vft(&cov, &v1).unwrap();
        for (i, c) in coeffs.iter().enumerate() {
            let expected = if i == 1 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(*c, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn vft_two_by_two_hand_case() {
        // [[1, 0.5], [0.5, 1]] has eigenvectors (1,1)/√2 and (1,-1)/√2 after
        // the sign convention; x = (1,0) projects to (1/√2, 1/√2).
        let cov =
            CovarianceModel::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]))
                .unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let coeffs = vft(&cov, &x).unwrap();
        let s = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(coeffs[0].abs(), s, epsilon = 1e-12);
        assert_abs_diff_eq!(coeffs[1].abs(), s, epsilon = 1e-12);
    }

    #[test]
    fn vft_round_trip_and_parseval() {
        let mut rng = crate::rng::stream(3, "cov-test", 1);
        let raw = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let spd = &raw * raw.transpose();
        let cov = CovarianceModel::from_matrix(spd).unwrap();
        for _ in 0..100 {
            let x = DVector::from_fn(8, |_, _| rng.random_range(-5.0..5.0));
            let coeffs = vft(&cov, &x).unwrap();
            let back = inverse_vft(&cov, &coeffs).unwrap();
            assert!((&back - &x).norm() < 1e-10);
            assert!((coeffs.norm() - x.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn vft_shape_mismatch() {
        let cov = CovarianceModel::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(vft(&cov, &x), Err(Error::Shape { .. })));
    }

    #[test]
    fn reconstruction_up_to_m_256() {
        let mut rng = crate::rng::stream(17, "cov-test", 2);
        for &m in &[8usize, 64, 256] {
            let raw = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let spd = &raw * raw.transpose() + DMatrix::identity(m, m).scale(0.1);
            let cov = CovarianceModel::from_matrix(spd).unwrap();
            let lambda = DMatrix::from_diagonal(cov.eigenvalues());
            let rebuilt = cov.eigenvectors() * lambda * cov.eigenvectors().transpose();
            let rel = (&rebuilt - cov.matrix()).norm() / cov.matrix().norm();
            assert!(rel < 1e-8, "m={m}: relative reconstruction error {rel:.3e}");
        }
    }

    #[test]
    fn permutation_equivariance_is_exact() {
        let mut rng = crate::rng::stream(23, "cov-test", 3);
        let n = 12;
        let m = 6;
        let mat = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
        let perm = vec![3usize, 0, 5, 1, 4, 2];
        let permuted_mat = DMatrix::from_fn(n, m, |i, j| mat[(i, perm[j])]);

        let base = estimate_sample_covariance(&FeatureMatrix::from_rows(mat).unwrap()).unwrap();
        let permuted =
            estimate_sample_covariance(&FeatureMatrix::from_rows(permuted_mat).unwrap()).unwrap();
        for i in 0..m {
            for j in 0..m {
                // Bit-exact: same sums in the same order, different labels.
                assert_eq!(permuted.matrix()[(i, j)], base.matrix()[(perm[i], perm[j])]);
            }
        }
    }

    #[test]
    fn digest_changes_with_content() {
        let a = CovarianceModel::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let b = CovarianceModel::from_matrix(DMatrix::identity(3, 3).scale(2.0)).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}
