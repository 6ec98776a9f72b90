//! Polynomial covariance filters and the PCA-recovery filter bank.
//!
//! A filter with taps `h_0..h_K` acts on a signal as `Σ_k h_k C^k x`,
//! evaluated by iterated matrix-vector products; `C^k` is never formed.

use nalgebra::{DMatrix, DVector};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};

/// Minimum eigenvalue gap accepted by the PCA-recovery construction.
pub const SPECTRAL_GAP_TOL: f64 = 1e-9;

/// Coefficients of a polynomial covariance filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTaps {
    taps: Vec<f64>,
}

impl FilterTaps {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::EmptyInput("filter taps".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidData("non-finite filter tap".into()));
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Polynomial order plus one.
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Apply `Σ_k h_k C^k x` via iterated matrix-vector products, O(K·m²).
pub fn apply_filter(taps: &FilterTaps, cov: &CovarianceModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != cov.dim() {
        return Err(Error::Shape {
            expected: format!("vector of length {}", cov.dim()),
            found: format!("{}", x.len()),
        });
    }
    let mut hop = x.clone();
    let mut out = hop.scale(taps.taps[0]);
    for &h in &taps.taps[1..] {
        hop = cov.matrix() * hop;
        out.axpy(h, &hop, 1.0);
    }
    Ok(out)
}

/// Scalar frequency response `h(λ) = Σ_k h_k λ^k` (Horner form).
pub fn frequency_response(taps: &FilterTaps, lambda: f64) -> f64 {
    let mut acc = 0.0;
    for &h in taps.taps.iter().rev() {
        acc = acc * lambda + h;
    }
    acc
}

/// A bank of filters that reproduces per-eigenvector projection scores,
/// together with the condition number of the interpolation system.
#[derive(Debug, Clone)]
pub struct PcaFilterBank {
    pub filters: Vec<FilterTaps>,
    /// 2-norm condition number of the Vandermonde system that was solved.
    /// Clustered spectra make this large; scores then lose digits.
    pub vandermonde_condition: f64,
}

impl PcaFilterBank {
    /// Score of `x` on eigenvector `i`: `v_iᵀ H_i(C) x`.
    pub fn score(&self, cov: &CovarianceModel, x: &DVector<f64>, i: usize) -> Result<f64> {
        let filtered = apply_filter(&self.filters[i], cov, x)?;
        Ok(cov.eigenvector(i).dot(&filtered))
    }

    /// All scores, in eigenvalue order.
    pub fn scores(&self, cov: &CovarianceModel, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.filters.len());
        for i in 0..self.filters.len() {
            out[i] = self.score(cov, x, i)?;
        }
        Ok(out)
    }
}

/// Build the filter bank whose `i`-th filter has frequency response
/// `ω_i` at `λ_i` and `0` at every other eigenvalue.
///
/// Solves the m×m Vandermonde system in the eigenvalues with pivoted
/// elimination. Eigenvalues must be pairwise distinct.
pub fn pca_recovery_bank(cov: &CovarianceModel, weights: &[f64]) -> Result<PcaFilterBank> {
    let m = cov.dim();
    if weights.len() != m {
        return Err(Error::Shape {
            expected: format!("{m} weights"),
            found: format!("{}", weights.len()),
        });
    }
    let lambda = cov.eigenvalues();
    for i in 0..m {
        for j in (i + 1)..m {
            if (lambda[i] - lambda[j]).abs() <= SPECTRAL_GAP_TOL {
                return Err(Error::DegenerateSpectrum(lambda[i], lambda[j]));
            }
        }
    }
    // Rows are eigenvalue power sequences: V[j][k] = λ_j^k.
    let vander = DMatrix::from_fn(m, m, |j, k| lambda[j].powi(k as i32));
    let svd = vander.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };

    let lu = vander.lu();
    let mut filters = Vec::with_capacity(m);
    for i in 0..m {
        let mut rhs = DVector::zeros(m);
        rhs[i] = weights[i];
        let coeffs = lu
            .solve(&rhs)
            .ok_or_else(|| Error::DegenerateSpectrum(lambda[i], lambda[i]))?;
        filters.push(FilterTaps::new(coeffs.iter().copied().collect())?);
    }
    Ok(PcaFilterBank { filters, vandermonde_condition: condition })
}

/// Operator norm of `H(A) - H(B)` for symmetric `A`, `B`, estimated by power
/// iteration on the squared operator (10k iteration cap, 1e-8 relative
/// tolerance).
pub fn filter_distance_operator_norm(
    taps: &FilterTaps,
    cov_a: &CovarianceModel,
    cov_b: &CovarianceModel,
) -> Result<f64> {
    if cov_a.dim() != cov_b.dim() {
        return Err(Error::Shape {
            expected: format!("{}x{}", cov_a.dim(), cov_a.dim()),
            found: format!("{}x{}", cov_b.dim(), cov_b.dim()),
        });
    }
    let m = cov_a.dim();
    let apply_diff = |v: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(apply_filter(taps, cov_a, v)? - apply_filter(taps, cov_b, v)?)
    };
    let mut v = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let mut norm_est = 0.0;
    for _ in 0..10_000 {
        // One application of (H(A)-H(B))² per step; symmetric, so the
        // singular values are the absolute eigenvalues.
        let w = apply_diff(&apply_diff(&v)?)?;
        let w_norm = w.norm();
        if w_norm == 0.0 {
            return Ok(0.0);
        }
        let next = w_norm.sqrt();
        let rel = (next - norm_est).abs() / next.max(1e-300);
        v = w.scale(1.0 / w_norm);
        norm_est = next;
        if rel < 1e-8 {
            break;
        }
    }
    Ok(norm_est)
}
