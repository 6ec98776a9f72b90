//! Graphon approximations of covariance matrices, converging covariance
//! sequences, and step-function metrics.
//!
//! A covariance matrix induces a piecewise-constant kernel on [0,1]² over a
//! trace-weighted partition; sequences of such kernels converge to a graphon.
//! This module builds the partitions and kernels, generates covariance
//! realizations of a graphon at any resolution, and measures distances
//! between step functions exactly.

pub mod cutnorm;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{normalize_spectrum, CovarianceModel};
use crate::error::{Error, Result};

pub use cutnorm::{
    cut_distance_overlay, cut_norm_distance, cut_norm_distance_heuristic, trace_normalized,
    CutNormEstimate,
};

/// Trace-weighted partition of [0,1]: breakpoints `ρ_1 < … < ρ_m = 1` with
/// `ρ_i` the cumulative normalized diagonal mass.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPartition {
    breakpoints: Vec<f64>,
}

impl IntervalPartition {
    /// Validate breakpoints: strictly increasing, in (0,1], last exactly 1.
    pub fn from_breakpoints(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::EmptyInput("partition breakpoints".into()));
        }
        let mut prev = 0.0;
        for &b in &breakpoints {
            if !(b > prev) {
                return Err(Error::InvalidData(format!(
                    "breakpoints must be strictly increasing, got {b} after {prev}"
                )));
            }
            prev = b;
        }
        if *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::InvalidData("last breakpoint must be exactly 1".into()));
        }
        Ok(Self { breakpoints })
    }

    /// Equal-width partition into `m` cells.
    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyInput("partition size".into()));
        }
        let mut b: Vec<f64> = (1..=m).map(|i| i as f64 / m as f64).collect();
        *b.last_mut().unwrap() = 1.0;
        Self::from_breakpoints(b)
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn lower(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.breakpoints[i - 1]
        }
    }

    pub fn width(&self, i: usize) -> f64 {
        self.breakpoints[i] - self.lower(i)
    }

    /// Index of the interval containing `u`; intervals are right-closed,
    /// the first one is `[0, ρ_1]`.
    pub fn locate(&self, u: f64) -> usize {
        debug_assert!((0.0..=1.0).contains(&u));
        match self.breakpoints.binary_search_by(|b| b.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i.min(self.breakpoints.len() - 1),
        }
    }
}

/// Trace-weighted partition of a covariance matrix: `ρ_i = Σ_{j≤i} C_jj / tr(C)`.
///
/// The cumulative sums use Neumaier compensation; the final breakpoint is
/// pinned to exactly 1 so that widths telescope to 1 bit-exactly.
pub fn interval_partition(cov: &CovarianceModel) -> Result<IntervalPartition> {
    partition_from_diagonal(&cov.matrix().diagonal())
}

/// Same construction from a raw diagonal (used by the cut-distance overlay).
pub fn partition_from_diagonal(diag: &DVector<f64>) -> Result<IntervalPartition> {
    let m = diag.len();
    let trace: f64 = diag.iter().sum();
    if trace <= 0.0 {
        return Err(Error::ZeroTrace);
    }
    for (i, &d) in diag.iter().enumerate() {
        if d <= 0.0 {
            return Err(Error::NonPositiveDiagonal { index: i, value: d });
        }
    }
    // Neumaier-compensated running sum of the diagonal.
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut breakpoints = Vec::with_capacity(m);
    for &d in diag.iter() {
        let t = sum + d;
        if sum.abs() >= d.abs() {
            comp += (sum - t) + d;
        } else {
            comp += (d - t) + sum;
        }
        sum = t;
        breakpoints.push((sum + comp) / trace);
    }
    *breakpoints.last_mut().unwrap() = 1.0;
    IntervalPartition::from_breakpoints(breakpoints)
}

/// Smallest `Ω` such that the matrix is `(Ω, ζ)`-dominant:
/// `max_j C_jj / tr(C) ≤ Ω / m^ζ`.
pub fn dominance_check(cov: &CovarianceModel, zeta: f64) -> Result<f64> {
    if !(zeta > 2.0 / 3.0 && zeta <= 1.0) {
        return Err(Error::DominanceExponent(zeta));
    }
    let trace = cov.trace();
    if trace <= 0.0 {
        return Err(Error::ZeroTrace);
    }
    let m = cov.dim() as f64;
    let max_diag = cov.matrix().diagonal().max();
    Ok(m.powf(zeta) * max_diag / trace)
}

// ---------------------------------------------------------------------------
// Graphon spectra
// ---------------------------------------------------------------------------

/// Closed-form basis function on [0,1] with unit L2 norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Eigenfunction {
    /// φ(u) = 1
    Constant,
    /// φ(u) = √2 cos(jπu)
    Cosine { index: u32 },
    /// φ(u) = √3 u
    Linear,
}

impl Eigenfunction {
    pub fn evaluate(&self, u: f64) -> f64 {
        match self {
            Eigenfunction::Constant => 1.0,
            Eigenfunction::Cosine { index } => {
                (2.0_f64).sqrt() * (*index as f64 * std::f64::consts::PI * u).cos()
            }
            Eigenfunction::Linear => (3.0_f64).sqrt() * u,
        }
    }

    fn sup(&self) -> f64 {
        match self {
            Eigenfunction::Constant => 1.0,
            Eigenfunction::Cosine { .. } => (2.0_f64).sqrt(),
            Eigenfunction::Linear => (3.0_f64).sqrt(),
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            Eigenfunction::Constant => 0.0,
            Eigenfunction::Cosine { index } => {
                (2.0_f64).sqrt() * *index as f64 * std::f64::consts::PI
            }
            Eigenfunction::Linear => (3.0_f64).sqrt(),
        }
    }
}

/// One spectral mode of a graphon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphonMode {
    pub eigenvalue: f64,
    pub basis: Eigenfunction,
}

/// A Lipschitz graphon given by a finite nonnegative spectral expansion
/// `W(u,v) = Σ_k η_k φ_k(u) φ_k(v)`.
///
/// Nonnegative eigenvalues make every sampled matrix positive semidefinite
/// by construction, and the finite expansion gives an explicit Lipschitz
/// constant, so the transferability assumptions are checkable instead of
/// assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphonSpec {
    modes: Vec<GraphonMode>,
    lipschitz: f64,
}

pub const GRAPHON_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GraphonDocument {
    format_version: u32,
    modes: Vec<GraphonMode>,
    lipschitz_constant: f64,
}

impl GraphonSpec {
    pub fn new(modes: Vec<GraphonMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::EmptyInput("graphon modes".into()));
        }
        let mut bound = 0.0;
        for mode in &modes {
            if !(mode.eigenvalue >= 0.0 && mode.eigenvalue.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "graphon eigenvalues must be nonnegative, got {}",
                    mode.eigenvalue
                )));
            }
            bound += mode.eigenvalue * mode.basis.sup() * mode.basis.sup();
        }
        if bound > 1.0 + 1e-12 {
            return Err(Error::InvalidData(format!(
                "spectral expansion exceeds the [-1,1] range bound: {bound:.4}"
            )));
        }
        let lipschitz =
            modes.iter().map(|m| m.eigenvalue * m.basis.sup() * m.basis.lipschitz()).sum();
        Ok(Self { modes, lipschitz })
    }

    /// Named presets: `constant`, `cosine<N>` (N smooth cosine modes over a
    /// constant background), and `linear` (W(u,v) = uv).
    pub fn preset(name: &str) -> Result<Self> {
        if name == "constant" {
            return Self::new(vec![GraphonMode {
                eigenvalue: 0.8,
                basis: Eigenfunction::Constant,
            }]);
        }
        if name == "linear" {
            return Self::new(vec![GraphonMode {
                eigenvalue: 1.0 / 3.0,
                basis: Eigenfunction::Linear,
            }]);
        }
        if let Some(n_str) = name.strip_prefix("cosine") {
            if let Ok(n) = n_str.parse::<u32>() {
                if (1..=16).contains(&n) {
                    let mut modes =
                        vec![GraphonMode { eigenvalue: 0.5, basis: Eigenfunction::Constant }];
                    // Cosine weights decay as 1/j² and are scaled so the
                    // range bound Σ η·sup² stays at 0.95.
                    let inv_sq_sum: f64 = (1..=n).map(|j| 1.0 / (j as f64 * j as f64)).sum();
                    let scale = 0.45 / (2.0 * inv_sq_sum);
                    for j in 1..=n {
                        modes.push(GraphonMode {
                            eigenvalue: scale / (j as f64 * j as f64),
                            basis: Eigenfunction::Cosine { index: j },
                        });
                    }
                    return Self::new(modes);
                }
            }
        }
        Err(Error::UnknownGraphon(name.into()))
    }

    pub fn modes(&self) -> &[GraphonMode] {
        &self.modes
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz
    }

    pub fn evaluate(&self, u: f64, v: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| m.eigenvalue * m.basis.evaluate(u) * m.basis.evaluate(v))
            .sum()
    }

    /// Versioned text form: eigenvalue list, eigenfunction descriptors, α.
    pub fn to_text(&self) -> String {
        let doc = GraphonDocument {
            format_version: GRAPHON_FORMAT_VERSION,
            modes: self.modes.clone(),
            lipschitz_constant: self.lipschitz,
        };
        serde_json::to_string_pretty(&doc).expect("graphon document serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc: GraphonDocument =
            serde_json::from_str(text).map_err(|e| Error::MalformedDocument(e.to_string()))?;
        if doc.format_version > GRAPHON_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: doc.format_version,
                supported: GRAPHON_FORMAT_VERSION,
            });
        }
        Self::new(doc.modes)
    }
}

/// Raw covariance realization of a graphon at resolution `m`:
/// `C_ij = W(u_i, u_j)` for midpoints `u_i = (i - 1/2)/m`.
pub fn graphon_matrix(spec: &GraphonSpec, m: usize) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::EmptyInput("resolution".into()));
    }
    let midpoints: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
    // Rank-r evaluation keeps the matrix PSD exactly: C = Σ η φφᵀ.
    let mut c = DMatrix::zeros(m, m);
    for mode in &spec.modes {
        let phi = DVector::from_fn(m, |i, _| mode.basis.evaluate(midpoints[i]));
        for i in 0..m {
            for j in 0..m {
                c[(i, j)] += mode.eigenvalue * phi[i] * phi[j];
            }
        }
    }
    Ok(c)
}

/// Spectrum-normalized covariance realization at resolution `m`.
pub fn sample_covariance_from_graphon(spec: &GraphonSpec, m: usize) -> Result<CovarianceModel> {
    let c = graphon_matrix(spec, m)?;
    normalize_spectrum(&CovarianceModel::from_matrix(c)?)
}

// ---------------------------------------------------------------------------
// Step functions and kernels
// ---------------------------------------------------------------------------

/// Piecewise-constant function on [0,1] over an interval partition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    partition: IntervalPartition,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(partition: IntervalPartition, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.len() {
            return Err(Error::Shape {
                expected: format!("{} values", partition.len()),
                found: format!("{}", values.len()),
            });
        }
        Ok(Self { partition, values })
    }

    pub fn partition(&self) -> &IntervalPartition {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn evaluate(&self, u: f64) -> f64 {
        self.values[self.partition.locate(u)]
    }

    /// L2 norm `√(Σ v_i² w_i)`.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * v * self.partition.width(i))
            .sum::<f64>()
            .sqrt()
    }
}

/// Exact L2 distance between two step functions, integrated on the merged
/// breakpoint refinement (no quadrature error).
pub fn step_function_l2_distance(f: &StepFunction, g: &StepFunction) -> f64 {
    let fb = f.partition.breakpoints();
    let gb = g.partition.breakpoints();
    let mut acc = 0.0;
    let mut prev = 0.0;
    let mut fi = 0;
    let mut gi = 0;
    while prev < 1.0 {
        let next = fb[fi].min(gb[gi]);
        let d = f.values[fi] - g.values[gi];
        acc += d * d * (next - prev);
        if fb[fi] == next {
            fi = (fi + 1).min(fb.len() - 1);
        }
        if gb[gi] == next {
            gi = (gi + 1).min(gb.len() - 1);
        }
        prev = next;
    }
    acc.sqrt()
}

/// Piecewise-constant kernel on [0,1]² induced by a covariance matrix over
/// its trace-weighted partition: `W_C(u,v) = C_ij` for `u ∈ 𝒰_i, v ∈ 𝒰_j`.
#[derive(Debug, Clone)]
pub struct PiecewiseKernel {
    partition: IntervalPartition,
    matrix: DMatrix<f64>,
}

impl PiecewiseKernel {
    pub fn partition(&self) -> &IntervalPartition {
        &self.partition
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn evaluate(&self, u: f64, v: f64) -> f64 {
        self.matrix[(self.partition.locate(u), self.partition.locate(v))]
    }
}

/// Graphon approximation of a covariance matrix.
pub fn graphon_approximation(cov: &CovarianceModel) -> Result<PiecewiseKernel> {
    Ok(PiecewiseKernel { partition: interval_partition(cov)?, matrix: cov.matrix().clone() })
}

/// Midpoint-rule L2 distance between a piecewise kernel and a graphon on an
/// `n × n` grid; quadrature oracle for convergence checks.
pub fn kernel_graphon_l2_distance(kernel: &PiecewiseKernel, spec: &GraphonSpec, n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        let u = (i as f64 + 0.5) / n as f64;
        for j in 0..n {
            let v = (j as f64 + 0.5) / n as f64;
            let d = kernel.evaluate(u, v) - spec.evaluate(u, v);
            acc += d * d;
        }
    }
    (acc / (n * n) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Graphon signals
// ---------------------------------------------------------------------------

/// Lipschitz signal on [0,1] given by a finite expansion in the same basis
/// family as [`GraphonSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphonSignal {
    terms: Vec<(f64, Eigenfunction)>,
    lipschitz: f64,
}

impl GraphonSignal {
    pub fn new(terms: Vec<(f64, Eigenfunction)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyInput("signal terms".into()));
        }
        if terms.iter().any(|(c, _)| !c.is_finite()) {
            return Err(Error::InvalidData("non-finite signal coefficient".into()));
        }
        let lipschitz = terms.iter().map(|(c, b)| c.abs() * b.lipschitz()).sum();
        Ok(Self { terms, lipschitz })
    }

    /// Seeded smooth signal: constant term plus `modes` cosine terms with
    /// 1/j²-decaying random coefficients.
    pub fn random_smooth<R: Rng>(modes: u32, scale: f64, rng: &mut R) -> Self {
        let mut terms = vec![(rng.random_range(0.5..1.5) * scale, Eigenfunction::Constant)];
        for j in 1..=modes {
            let amp = scale / (j as f64 * j as f64);
            terms.push((rng.random_range(-amp..amp), Eigenfunction::Cosine { index: j }));
        }
        Self::new(terms).expect("finite coefficients")
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz
    }

    pub fn evaluate(&self, u: f64) -> f64 {
        self.terms.iter().map(|(c, b)| c * b.evaluate(u)).sum()
    }

    /// Discretize over a partition by sampling at the right endpoints, so
    /// the induced step function agrees with the signal there.
    pub fn discretize(&self, partition: &IntervalPartition) -> DVector<f64> {
        DVector::from_fn(partition.len(), |i, _| self.evaluate(partition.breakpoints()[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn partition_hand_case() {
        let cov = CovarianceModel::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 1.0, 2.0,
        ])))
        .unwrap();
        let p = interval_partition(&cov).unwrap();
        assert_abs_diff_eq!(p.breakpoints()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p.breakpoints()[1], 0.5, epsilon = 1e-15);
        assert_eq!(p.breakpoints()[2], 1.0);
    }

    #[test]
    fn identity_partition_is_uniform() {
        let cov = CovarianceModel::from_matrix(DMatrix::identity(4, 4)).unwrap();
        let p = interval_partition(&cov).unwrap();
        let expect = [0.25, 0.5, 0.75, 1.0];
        for (b, e) in p.breakpoints().iter().zip(expect) {
            assert_abs_diff_eq!(*b, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_trace_is_rejected() {
        let cov = CovarianceModel::from_matrix(DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(interval_partition(&cov), Err(Error::ZeroTrace)));
    }

    #[test]
    fn widths_telescope_to_one_exactly() {
        let mut rng = crate::rng::stream(3, "graphon-test", 0);
        for trial in 0..20 {
            let m = 5 + trial;
            let diag = DVector::from_fn(m, |_, _| rng.random_range(0.01..3.0));
            let p = partition_from_diagonal(&diag).unwrap();
            let total: f64 = (0..p.len()).map(|i| p.width(i)).sum();
            assert!((total - 1.0).abs() < 1e-12);
            // Last breakpoint is pinned, so the telescoped sum is exact.
            assert_eq!(*p.breakpoints().last().unwrap(), 1.0);
        }
    }

    #[test]
    fn dominance_hand_cases() {
        let identity = CovarianceModel::from_matrix(DMatrix::identity(7, 7)).unwrap();
        assert_abs_diff_eq!(dominance_check(&identity, 1.0).unwrap(), 1.0, epsilon = 1e-12);

        let diag = CovarianceModel::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 1.0, 2.0,
        ])))
        .unwrap();
        assert_abs_diff_eq!(dominance_check(&diag, 1.0).unwrap(), 1.5, epsilon = 1e-12);

        let one = CovarianceModel::from_matrix(DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_abs_diff_eq!(dominance_check(&one, 1.0).unwrap(), 1.0, epsilon = 1e-12);

        assert!(matches!(dominance_check(&one, 0.5), Err(Error::DominanceExponent(_))));
    }

    #[test]
    fn dominance_stays_bounded_along_the_sequence() {
        for preset in ["cosine2", "linear"] {
            let spec = GraphonSpec::preset(preset).unwrap();
            let mut omegas = Vec::new();
            for &m in &[16usize, 32, 64, 128, 256] {
                let cov = sample_covariance_from_graphon(&spec, m).unwrap();
                omegas.push(dominance_check(&cov, 1.0).unwrap());
            }
            assert!(
                omegas.iter().all(|&o| o < 5.0),
                "{preset}: dominance constants {omegas:?} should stay bounded"
            );
        }
    }

    #[test]
    fn graphon_presets_are_valid_and_lipschitz() {
        let mut rng = crate::rng::stream(5, "graphon-test", 1);
        for preset in ["constant", "cosine1", "cosine2", "cosine3", "linear"] {
            let spec = GraphonSpec::preset(preset).unwrap();
            let alpha = spec.lipschitz_constant();
            for _ in 0..10_000 {
                let (u1, v1) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                let (u2, v2) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                let lhs = (spec.evaluate(u1, v1) - spec.evaluate(u2, v2)).abs();
                let rhs = alpha * ((u1 - u2).abs() + (v1 - v2).abs());
                assert!(
                    lhs <= rhs + 1e-12,
                    "{preset}: |ΔW| = {lhs:.3e} exceeds α·(|Δu|+|Δv|) = {rhs:.3e}"
                );
                let w = spec.evaluate(u1, v1);
                assert!((-1.0..=1.0).contains(&w), "{preset}: W out of range: {w}");
            }
        }
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(matches!(GraphonSpec::preset("nope"), Err(Error::UnknownGraphon(_))));
    }

    #[test]
    fn linear_graphon_midpoint_matrix_hand_case() {
        // W(u,v) = uv at m = 2: midpoints 0.25, 0.75.
        let spec = GraphonSpec::preset("linear").unwrap();
        let c = graphon_matrix(&spec, 2).unwrap();
        assert_abs_diff_eq!(c[(0, 0)], 0.0625, epsilon = 1e-12);
        assert_abs_diff_eq!(c[(0, 1)], 0.1875, epsilon = 1e-12);
        assert_abs_diff_eq!(c[(1, 0)], 0.1875, epsilon = 1e-12);
        assert_abs_diff_eq!(c[(1, 1)], 0.5625, epsilon = 1e-12);
    }

    #[test]
    fn constant_graphon_sample_is_rank_one() {
        let spec = GraphonSpec::preset("constant").unwrap();
        let cov = sample_covariance_from_graphon(&spec, 5).unwrap();
        let first = cov.matrix()[(0, 0)];
        assert!(first > 0.0);
        for v in cov.matrix().iter() {
            assert_abs_diff_eq!(*v, first, epsilon = 1e-12);
        }
        assert!(cov.eigenvalues().iter().skip(1).all(|&l| l.abs() < 1e-10));
    }

    #[test]
    fn sampled_matrices_are_psd() {
        for preset in ["cosine3", "linear"] {
            let spec = GraphonSpec::preset(preset).unwrap();
            let cov = sample_covariance_from_graphon(&spec, 24).unwrap();
            assert!(cov.eigenvalues().iter().all(|&l| l > -1e-10));
            assert!(cov.is_normalized());
        }
    }

    #[test]
    fn zero_resolution_is_an_error() {
        let spec = GraphonSpec::preset("constant").unwrap();
        assert!(sample_covariance_from_graphon(&spec, 0).is_err());
    }

    #[test]
    fn kernel_evaluation_respects_right_closed_intervals() {
        let cov = CovarianceModel::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 1.0, 2.0,
        ])))
        .unwrap();
        let kernel = graphon_approximation(&cov).unwrap();
        let p = kernel.partition().clone();
        for i in 0..3 {
            for j in 0..3 {
                let u = p.breakpoints()[i];
                let v = p.breakpoints()[j];
                assert_eq!(kernel.evaluate(u, v), cov.matrix()[(i, j)]);
            }
        }
        // m = 1 kernel is constant everywhere.
        let single = CovarianceModel::from_matrix(DMatrix::from_element(1, 1, 0.7)).unwrap();
        let k1 = graphon_approximation(&single).unwrap();
        assert_eq!(k1.evaluate(0.0, 0.9), 0.7);
    }

    #[test]
    fn kernel_l2_distance_decreases_with_resolution() {
        let spec = GraphonSpec::preset("cosine2").unwrap();
        let mut last = f64::INFINITY;
        for &m in &[8usize, 16, 32] {
            let raw = graphon_matrix(&spec, m).unwrap();
            let cov = CovarianceModel::from_matrix(raw).unwrap();
            let kernel = graphon_approximation(&cov).unwrap();
            let d = kernel_graphon_l2_distance(&kernel, &spec, 400);
            assert!(d < last, "m={m}: distance {d} did not decrease from {last}");
            last = d;
        }
    }

    #[test]
    fn step_function_distance_hand_case() {
        let whole = IntervalPartition::from_breakpoints(vec![1.0]).unwrap();
        let halves = IntervalPartition::from_breakpoints(vec![0.5, 1.0]).unwrap();
        let f = StepFunction::new(whole, vec![1.0]).unwrap();
        let g = StepFunction::new(halves, vec![0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(step_function_l2_distance(&f, &g), 0.5_f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(step_function_l2_distance(&g, &f), 0.5_f64.sqrt(), epsilon = 1e-15);
        assert_eq!(step_function_l2_distance(&f, &f), 0.0);
    }

    #[test]
    fn step_function_distance_is_symmetric_on_random_pairs() {
        let mut rng = crate::rng::stream(9, "graphon-test", 2);
        for _ in 0..20 {
            let d1 = DVector::from_fn(4, |_, _| rng.random_range(0.1..2.0));
            let d2 = DVector::from_fn(7, |_, _| rng.random_range(0.1..2.0));
            let p1 = partition_from_diagonal(&d1).unwrap();
            let p2 = partition_from_diagonal(&d2).unwrap();
            let f =
                StepFunction::new(p1, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap();
            let g =
                StepFunction::new(p2, (0..7).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap();
            let fg = step_function_l2_distance(&f, &g);
            let gf = step_function_l2_distance(&g, &f);
            assert_abs_diff_eq!(fg, gf, epsilon = 1e-14);
        }
    }

    #[test]
    fn step_function_norm_matches_definition() {
        let p = IntervalPartition::from_breakpoints(vec![0.25, 1.0]).unwrap();
        let f = StepFunction::new(p, vec![2.0, -1.0]).unwrap();
        // ∫ f² = 4·0.25 + 1·0.75 = 1.75
        assert_abs_diff_eq!(f.norm(), 1.75_f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn graphon_text_round_trip() {
        let spec = GraphonSpec::preset("cosine2").unwrap();
        let text = spec.to_text();
        let back = GraphonSpec::from_text(&text).unwrap();
        assert_eq!(spec, back);
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(
            GraphonSpec::from_text(&bumped),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn signal_discretization_matches_right_endpoints() {
        let mut rng = crate::rng::stream(13, "graphon-test", 3);
        let signal = GraphonSignal::random_smooth(3, 1.0, &mut rng);
        let p = IntervalPartition::uniform(8).unwrap();
        let x = signal.discretize(&p);
        for i in 0..8 {
            assert_eq!(x[i], signal.evaluate(p.breakpoints()[i]));
        }
        // Lipschitz bound holds numerically.
        let alpha = signal.lipschitz_constant();
        for _ in 0..1000 {
            let a = rng.random_range(0.0..1.0);
            let b = rng.random_range(0.0..1.0);
            assert!(
                (signal.evaluate(a) - signal.evaluate(b)).abs() <= alpha * (a - b).abs() + 1e-12
            );
        }
    }
}
