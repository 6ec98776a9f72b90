//! Interpretable brain-age pipeline: regional residuals, age-bias
//! correction, group-difference scans, robustness counting over model
//! ensembles, eigenvector alignment, and covariance-composition
//! perturbation.

pub mod synthetic;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{estimate_sample_covariance, normalize_spectrum, CovarianceModel, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{forward_batch, VnnArchitecture, VnnParameters};
use crate::stats;
use crate::training::TrainedEnsemble;

/// Significance level for the regional scan (applied Bonferroni-corrected
/// to the ANOVA p and uncorrected to the ANCOVA p).
pub const SCAN_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl Sex {
    /// 0/1 indicator used as the ANCOVA covariate.
    pub fn indicator(self) -> f64 {
        match self {
            Sex::F => 0.0,
            Sex::M => 1.0,
        }
    }
}

impl std::fmt::Display for Sex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
        })
    }
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            other => Err(Error::InvalidData(format!("sex must be F or M, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnosis {
    Hc,
    D,
}

impl std::fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Diagnosis::Hc => "HC",
            Diagnosis::D => "D",
        })
    }
}

impl std::str::FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HC" => Ok(Diagnosis::Hc),
            "D" => Ok(Diagnosis::D),
            other => Err(Error::InvalidData(format!("diagnosis must be HC or D, got `{other}`"))),
        }
    }
}

/// One cohort row: features plus phenotype.
#[derive(Debug, Clone)]
pub struct Subject {
    pub subject_id: String,
    pub features: Vec<f64>,
    pub age: f64,
    pub sex: Sex,
    pub diagnosis: Diagnosis,
    pub severity: Option<f64>,
}

/// Per-subject features and phenotype; input to training and to the
/// brain-age analyses.
#[derive(Debug, Clone)]
pub struct CohortTable {
    subjects: Vec<Subject>,
    feature_names: Vec<String>,
}

impl CohortTable {
    pub fn new(subjects: Vec<Subject>, feature_names: Vec<String>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::EmptyInput("cohort".into()));
        }
        let m = feature_names.len();
        let mut seen = std::collections::HashSet::new();
        for s in &subjects {
            if s.features.len() != m {
                return Err(Error::Shape {
                    expected: format!("{m} features for subject {}", s.subject_id),
                    found: format!("{}", s.features.len()),
                });
            }
            if !(s.age > 0.0) {
                return Err(Error::InvalidData(format!(
                    "subject {} has non-positive age {}",
                    s.subject_id, s.age
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "subject {} has a non-finite feature",
                    s.subject_id
                )));
            }
            if !seen.insert(s.subject_id.clone()) {
                return Err(Error::DuplicateSubject(s.subject_id.clone()));
            }
        }
        Ok(Self { subjects, feature_names })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn subjects_mut(&mut self) -> &mut [Subject] {
        &mut self.subjects
    }

    pub fn hc_indices(&self) -> Vec<usize> {
        (0..self.subjects.len()).filter(|&i| self.subjects[i].diagnosis == Diagnosis::Hc).collect()
    }

    pub fn d_indices(&self) -> Vec<usize> {
        (0..self.subjects.len()).filter(|&i| self.subjects[i].diagnosis == Diagnosis::D).collect()
    }

    /// All rows as a subjects-by-features matrix.
    pub fn features_matrix(&self) -> FeatureMatrix {
        self.features_matrix_of(&(0..self.n_subjects()).collect::<Vec<_>>())
    }

    /// Selected rows as a subjects-by-features matrix.
    pub fn features_matrix_of(&self, indices: &[usize]) -> FeatureMatrix {
        let mat = DMatrix::from_fn(indices.len(), self.n_features(), |r, j| {
            self.subjects[indices[r]].features[j]
        });
        FeatureMatrix::new(mat, self.feature_names.clone()).expect("cohort rows are validated")
    }

    /// Sub-cohort of only healthy controls.
    pub fn healthy_only(&self) -> Result<CohortTable> {
        let subjects: Vec<Subject> = self
            .subjects
            .iter()
            .filter(|s| s.diagnosis == Diagnosis::Hc)
            .cloned()
            .collect();
        CohortTable::new(subjects, self.feature_names.clone())
    }

    /// Pooled covariance over the given rows, spectrum-normalized.
    pub fn pooled_covariance(&self, indices: &[usize]) -> Result<CovarianceModel> {
        normalize_spectrum(&estimate_sample_covariance(&self.features_matrix_of(indices))?)
    }

    /// Column-standardized copy: every feature gets zero mean and unit
    /// variance across the whole cohort. Training on raw features is the
    /// default; this is the opt-in preprocessing variant.
    pub fn standardized(&self) -> Result<CohortTable> {
        let m = self.n_features();
        let mut mean = vec![0.0; m];
        let mut sd = vec![0.0; m];
        for j in 0..m {
            let vals: Vec<f64> = self.subjects.iter().map(|s| s.features[j]).collect();
            mean[j] = crate::stats::mean(&vals);
            let v = crate::stats::variance(&vals);
            if v <= 0.0 {
                return Err(Error::ZeroVariance(format!("feature column {j}")));
            }
            sd[j] = v.sqrt();
        }
        let subjects = self
            .subjects
            .iter()
            .map(|s| {
                let features =
                    s.features.iter().enumerate().map(|(j, v)| (v - mean[j]) / sd[j]).collect();
                Subject { features, ..s.clone() }
            })
            .collect();
        CohortTable::new(subjects, self.feature_names.clone())
    }
}

// ---------------------------------------------------------------------------
// Per-subject outputs
// ---------------------------------------------------------------------------

/// Batched per-subject pipeline outputs for one model.
#[derive(Debug, Clone)]
pub struct SubjectOutputs {
    /// Scalar readout per subject.
    pub predictions: Vec<f64>,
    /// Regional contribution vectors, one row per subject.
    pub contributions: DMatrix<f64>,
    /// Regional residuals `r = p - ŷ`, one row per subject.
    pub residuals: DMatrix<f64>,
}

/// Run a model over every subject and collect readouts, contributions, and
/// residuals.
pub fn evaluate_cohort(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cov: &CovarianceModel,
    features: &FeatureMatrix,
) -> Result<SubjectOutputs> {
    let input = features.values().transpose();
    let cache = forward_batch(arch, params, cov, &input)?;
    let f_last = cache.outputs.len() as f64;
    let (m, n) = (input.nrows(), input.ncols());
    let mut contributions = DMatrix::zeros(n, m);
    for channel in &cache.outputs {
        for s in 0..n {
            for j in 0..m {
                contributions[(s, j)] += channel[(j, s)] / f_last;
            }
        }
    }
    let mut predictions = vec![0.0; n];
    let mut residuals = contributions.clone();
    for s in 0..n {
        let mut acc = 0.0;
        for j in 0..m {
            acc += contributions[(s, j)];
        }
        let pred = acc / m as f64;
        predictions[s] = pred;
        for j in 0..m {
            residuals[(s, j)] -= pred;
        }
    }
    Ok(SubjectOutputs { predictions, contributions, residuals })
}

/// Regional residuals of a single subject: `r[a] = p[a] - ŷ`.
pub fn regional_residuals(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cov_combined: &CovarianceModel,
    features: &DVector<f64>,
) -> Result<DVector<f64>> {
    let output = crate::model::forward(arch, params, cov_combined, features)?;
    let p = crate::model::regional_contributions(&output)?;
    let readout = crate::model::readout_mean(&output)?;
    Ok(p.map(|v| v - readout))
}

// ---------------------------------------------------------------------------
// Age-bias correction
// ---------------------------------------------------------------------------

/// Least-squares fit of the prediction gap on age over healthy controls:
/// `ŷ - y = a·y + b`. Returns `(a, b)`.
pub fn age_bias_fit(hc_predictions: &[f64], hc_ages: &[f64]) -> Result<(f64, f64)> {
    if hc_predictions.len() != hc_ages.len() {
        return Err(Error::Shape {
            expected: format!("{} ages", hc_predictions.len()),
            found: format!("{}", hc_ages.len()),
        });
    }
    if hc_ages.len() < 3 {
        return Err(Error::InsufficientGroup("age-bias fit".into(), 3));
    }
    let my = stats::mean(hc_ages);
    let gaps: Vec<f64> = hc_predictions.iter().zip(hc_ages).map(|(p, y)| p - y).collect();
    let mg = stats::mean(&gaps);
    let mut syy = 0.0;
    let mut syg = 0.0;
    for (y, g) in hc_ages.iter().zip(&gaps) {
        syy += (y - my) * (y - my);
        syg += (y - my) * (g - mg);
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("healthy-control ages".into()));
    }
    let a = syg / syy;
    let b = mg - a * my;
    Ok((a, b))
}

/// Brain-age gap after bias correction:
/// `ŷ_B = ŷ - (a·y + b)`, `Δ = ŷ_B - y`.
pub fn delta_age(prediction: f64, age: f64, a_bias: f64, b_bias: f64) -> f64 {
    let corrected = prediction - (a_bias * age + b_bias);
    corrected - age
}

// ---------------------------------------------------------------------------
// Regional scan
// ---------------------------------------------------------------------------

/// Scan outcome for one region.
#[derive(Debug, Clone, Serialize)]
pub struct RegionRow {
    pub region: String,
    pub f_statistic: f64,
    pub anova_p: f64,
    /// Bonferroni-corrected ANOVA p: `min(1, p·m)`.
    pub corrected_p: f64,
    /// Uncorrected diagnosis p from the ANCOVA with age and sex covariates.
    pub ancova_p: f64,
    pub elevated_in_d: bool,
    /// Corrected ANOVA p < 0.05, ANCOVA p < 0.05, and elevated in disease.
    pub significant: bool,
    pub hc_mean: f64,
    pub hc_sd: f64,
    pub d_mean: f64,
    pub d_sd: f64,
}

/// Group-difference scan over every region.
#[derive(Debug, Clone, Serialize)]
pub struct RegionalResidualReport {
    pub regions: Vec<RegionRow>,
}

impl RegionalResidualReport {
    pub fn significant_set(&self) -> Vec<usize> {
        (0..self.regions.len()).filter(|&i| self.regions[i].significant).collect()
    }
}

/// Inputs to the regional scan: residual populations with covariates.
pub struct ScanGroups<'a> {
    pub hc_residuals: &'a DMatrix<f64>,
    pub d_residuals: &'a DMatrix<f64>,
    pub hc_ages: &'a [f64],
    pub d_ages: &'a [f64],
    pub hc_sex: &'a [f64],
    pub d_sex: &'a [f64],
    pub region_names: &'a [String],
}

/// Per-region one-way ANOVA on diagnosis with Bonferroni correction over
/// the regions, plus an ANCOVA with age and sex covariates; a region is
/// significant when both tests pass and the disease mean is elevated.
pub fn group_difference_scan(groups: &ScanGroups<'_>) -> Result<RegionalResidualReport> {
    let m = groups.region_names.len();
    let (n_hc, n_d) = (groups.hc_residuals.nrows(), groups.d_residuals.nrows());
    if n_hc < 2 || n_d < 2 {
        return Err(Error::InsufficientGroup("scan group".into(), 2));
    }
    if groups.hc_residuals.ncols() != m || groups.d_residuals.ncols() != m {
        return Err(Error::Shape {
            expected: format!("{m} regions"),
            found: format!(
                "{} / {}",
                groups.hc_residuals.ncols(),
                groups.d_residuals.ncols()
            ),
        });
    }
    let mut ages: Vec<f64> = Vec::with_capacity(n_hc + n_d);
    ages.extend_from_slice(groups.hc_ages);
    ages.extend_from_slice(groups.d_ages);
    let mut sexes: Vec<f64> = Vec::with_capacity(n_hc + n_d);
    sexes.extend_from_slice(groups.hc_sex);
    sexes.extend_from_slice(groups.d_sex);
    let group_col: Vec<f64> =
        (0..n_hc).map(|_| 0.0).chain((0..n_d).map(|_| 1.0)).collect();

    let mut regions = Vec::with_capacity(m);
    for j in 0..m {
        let hc: Vec<f64> = (0..n_hc).map(|i| groups.hc_residuals[(i, j)]).collect();
        let d: Vec<f64> = (0..n_d).map(|i| groups.d_residuals[(i, j)]).collect();
        let hc_mean = stats::mean(&hc);
        let d_mean = stats::mean(&d);
        let elevated = d_mean > hc_mean;
        // Degenerate residual populations (e.g. a dead model) carry no group
        // signal; report them as plain non-findings instead of failing.
        let (f_statistic, anova_p, ancova_p) = match stats::oneway_anova(&[&hc, &d]) {
            Ok((f, p)) => {
                let outcome: Vec<f64> = hc.iter().chain(d.iter()).copied().collect();
                let ancova = stats::ancova(&outcome, &group_col, &[&ages, &sexes])?;
                (f, p, ancova.p_group)
            }
            Err(Error::ZeroVariance(_)) => (0.0, 1.0, 1.0),
            Err(e) => return Err(e),
        };
        let corrected_p = stats::bonferroni(anova_p, m);
        regions.push(RegionRow {
            region: groups.region_names[j].clone(),
            f_statistic,
            anova_p,
            corrected_p,
            ancova_p,
            elevated_in_d: elevated,
            significant: corrected_p < SCAN_ALPHA && ancova_p < SCAN_ALPHA && elevated,
            hc_mean,
            hc_sd: stats::variance(&hc).sqrt(),
            d_mean,
            d_sd: stats::variance(&d).sqrt(),
        });
    }
    Ok(RegionalResidualReport { regions })
}

/// Run one model over the cohort (combined covariance) and scan.
pub fn scan_model(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cov_combined: &CovarianceModel,
    cohort: &CohortTable,
) -> Result<RegionalResidualReport> {
    let outputs = evaluate_cohort(arch, params, cov_combined, &cohort.features_matrix())?;
    let hc = cohort.hc_indices();
    let d = cohort.d_indices();
    let take = |rows: &[usize]| -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cohort.n_features(), |r, j| outputs.residuals[(rows[r], j)])
    };
    let hc_res = take(&hc);
    let d_res = take(&d);
    let hc_ages: Vec<f64> = hc.iter().map(|&i| cohort.subjects()[i].age).collect();
    let d_ages: Vec<f64> = d.iter().map(|&i| cohort.subjects()[i].age).collect();
    let hc_sex: Vec<f64> = hc.iter().map(|&i| cohort.subjects()[i].sex.indicator()).collect();
    let d_sex: Vec<f64> = d.iter().map(|&i| cohort.subjects()[i].sex.indicator()).collect();
    group_difference_scan(&ScanGroups {
        hc_residuals: &hc_res,
        d_residuals: &d_res,
        hc_ages: &hc_ages,
        d_ages: &d_ages,
        hc_sex: &hc_sex,
        d_sex: &d_sex,
        region_names: cohort.feature_names(),
    })
}

/// Number of ensemble members flagging each region as significant.
pub fn robustness_count(
    ensemble: &TrainedEnsemble,
    cohort: &CohortTable,
    cov_combined: &CovarianceModel,
) -> Result<Vec<usize>> {
    let params: Vec<&VnnParameters> = ensemble.members.iter().map(|m| &m.params).collect();
    robustness_count_models(&ensemble.arch, &params, cohort, cov_combined)
}

/// Same count over bare parameter sets (for models loaded from disk).
pub fn robustness_count_models(
    arch: &VnnArchitecture,
    params: &[&VnnParameters],
    cohort: &CohortTable,
    cov_combined: &CovarianceModel,
) -> Result<Vec<usize>> {
    if params.is_empty() {
        return Err(Error::EmptyInput("ensemble".into()));
    }
    let reports: Vec<RegionalResidualReport> = params
        .par_iter()
        .map(|p| scan_model(arch, p, cov_combined, cohort))
        .collect::<Result<Vec<_>>>()?;
    let m = cohort.n_features();
    let mut counts = vec![0usize; m];
    for report in &reports {
        for idx in report.significant_set() {
            counts[idx] += 1;
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Delta-age report
// ---------------------------------------------------------------------------

/// Per-subject brain-age record.
#[derive(Debug, Clone, Serialize)]
pub struct SubjectDelta {
    pub subject_id: String,
    pub diagnosis: Diagnosis,
    pub age: f64,
    pub prediction: f64,
    pub corrected_prediction: f64,
    pub delta_age: f64,
    pub severity: Option<f64>,
}

/// Cohort-level brain-age summary after age-bias correction.
#[derive(Debug, Clone, Serialize)]
pub struct DeltaAgeReport {
    pub a_bias: f64,
    pub b_bias: f64,
    pub subjects: Vec<SubjectDelta>,
    pub hc_mean_delta: f64,
    pub hc_sd_delta: f64,
    pub d_mean_delta: f64,
    pub d_sd_delta: f64,
    pub cohens_d: f64,
    pub ancova_p: f64,
    pub partial_eta_sq: f64,
    /// Pearson correlation (and p) between delta-age and severity over the
    /// disease subjects that carry a severity score.
    pub severity_pearson: Option<(f64, f64)>,
}

/// Fit the age bias on healthy controls only, correct everyone, and compare
/// the groups.
pub fn delta_age_report(cohort: &CohortTable, predictions: &[f64]) -> Result<DeltaAgeReport> {
    if predictions.len() != cohort.n_subjects() {
        return Err(Error::Shape {
            expected: format!("{} predictions", cohort.n_subjects()),
            found: format!("{}", predictions.len()),
        });
    }
    let hc = cohort.hc_indices();
    let d = cohort.d_indices();
    let hc_preds: Vec<f64> = hc.iter().map(|&i| predictions[i]).collect();
    let hc_ages: Vec<f64> = hc.iter().map(|&i| cohort.subjects()[i].age).collect();
    let (a_bias, b_bias) = age_bias_fit(&hc_preds, &hc_ages)?;

    let subjects: Vec<SubjectDelta> = cohort
        .subjects()
        .iter()
        .zip(predictions)
        .map(|(s, &pred)| {
            let corrected = pred - (a_bias * s.age + b_bias);
            SubjectDelta {
                subject_id: s.subject_id.clone(),
                diagnosis: s.diagnosis,
                age: s.age,
                prediction: pred,
                corrected_prediction: corrected,
                delta_age: corrected - s.age,
                severity: s.severity,
            }
        })
        .collect();

    let hc_delta: Vec<f64> = hc.iter().map(|&i| subjects[i].delta_age).collect();
    let d_delta: Vec<f64> = d.iter().map(|&i| subjects[i].delta_age).collect();

    let (cohen, ancova_p, partial_eta) = if d_delta.len() >= 2 {
        let outcome: Vec<f64> = hc_delta.iter().chain(d_delta.iter()).copied().collect();
        let group: Vec<f64> =
            (0..hc_delta.len()).map(|_| 0.0).chain((0..d_delta.len()).map(|_| 1.0)).collect();
        let ages: Vec<f64> = hc
            .iter()
            .chain(d.iter())
            .map(|&i| cohort.subjects()[i].age)
            .collect();
        let sexes: Vec<f64> = hc
            .iter()
            .chain(d.iter())
            .map(|&i| cohort.subjects()[i].sex.indicator())
            .collect();
        let ancova = stats::ancova(&outcome, &group, &[&ages, &sexes])?;
        (
            stats::cohens_d(&d_delta, &hc_delta)?,
            ancova.p_group,
            ancova.partial_eta_sq,
        )
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };

    // Severity association, disease group only.
    let with_severity: Vec<(f64, f64)> = d
        .iter()
        .filter_map(|&i| cohort.subjects()[i].severity.map(|s| (subjects[i].delta_age, s)))
        .collect();
    let severity_pearson = if with_severity.len() >= 3 {
        let deltas: Vec<f64> = with_severity.iter().map(|(d, _)| *d).collect();
        let sevs: Vec<f64> = with_severity.iter().map(|(_, s)| *s).collect();
        stats::pearson_test(&deltas, &sevs).ok()
    } else {
        None
    };

    let sd = |xs: &[f64]| if xs.len() > 1 { stats::variance(xs).sqrt() } else { f64::NAN };
    Ok(DeltaAgeReport {
        a_bias,
        b_bias,
        hc_mean_delta: stats::mean(&hc_delta),
        hc_sd_delta: sd(&hc_delta),
        d_mean_delta: if d_delta.is_empty() { f64::NAN } else { stats::mean(&d_delta) },
        d_sd_delta: sd(&d_delta),
        cohens_d: cohen,
        ancova_p,
        partial_eta_sq: partial_eta,
        severity_pearson,
        subjects,
    })
}

// ---------------------------------------------------------------------------
// Eigenvector alignment
// ---------------------------------------------------------------------------

/// Mean absolute cosine between a population of vectors (normalized to unit
/// length) and each covariance eigenvector. Eigenvectors whose alignment
/// population has a coefficient of variation above `cov_threshold` are
/// masked to zero.
pub fn eigen_alignment(
    vectors: &[DVector<f64>],
    cov: &CovarianceModel,
    cov_threshold: f64,
) -> Result<Vec<f64>> {
    if vectors.is_empty() {
        return Err(Error::EmptyInput("alignment population".into()));
    }
    let m = cov.dim();
    let mut normalized = Vec::with_capacity(vectors.len());
    for v in vectors {
        if v.len() != m {
            return Err(Error::Shape {
                expected: format!("vectors of length {m}"),
                found: format!("{}", v.len()),
            });
        }
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVariance("alignment vector".into()));
        }
        normalized.push(v.scale(1.0 / norm));
    }
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let eig = cov.eigenvector(i);
        let inner: Vec<f64> = normalized.iter().map(|v| v.dot(&eig).abs()).collect();
        let mean = stats::mean(&inner);
        let sd = if inner.len() > 1 { stats::variance(&inner).sqrt() } else { 0.0 };
        let masked = mean <= 1e-12 || (sd / mean) > cov_threshold;
        out.push(if masked { 0.0 } else { mean });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Composition perturbation
// ---------------------------------------------------------------------------

/// One point of the covariance-composition sweep.
#[derive(Debug, Clone, Serialize)]
pub struct CompositionPoint {
    pub n_hc_included: usize,
    pub n_d_included: usize,
    /// Fraction of the baseline significant set recovered at this
    /// composition (1.0 when the baseline set is empty).
    pub overlap_with_baseline: f64,
    pub significant_regions: Vec<usize>,
}

/// Re-estimate the combined covariance from partial group compositions and
/// re-run the scan; reports the overlap of each significant set with the
/// full-composition baseline.
pub fn composition_perturbation(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cohort: &CohortTable,
    schedule: &[(usize, usize)],
) -> Result<Vec<CompositionPoint>> {
    if schedule.is_empty() {
        return Err(Error::EmptyInput("inclusion schedule".into()));
    }
    let hc = cohort.hc_indices();
    let d = cohort.d_indices();

    let full_cov = cohort.pooled_covariance(&(0..cohort.n_subjects()).collect::<Vec<_>>())?;
    let baseline: std::collections::HashSet<usize> =
        scan_model(arch, params, &full_cov, cohort)?.significant_set().into_iter().collect();

    let mut points = Vec::with_capacity(schedule.len());
    for &(n_hc, n_d) in schedule {
        if n_hc > hc.len() || n_d > d.len() {
            return Err(Error::Config(format!(
                "schedule point ({n_hc}, {n_d}) exceeds group sizes ({}, {})",
                hc.len(),
                d.len()
            )));
        }
        if n_hc + n_d < 2 {
            return Err(Error::EmptyInput("covariance composition".into()));
        }
        let mut rows: Vec<usize> = hc[..n_hc].to_vec();
        rows.extend_from_slice(&d[..n_d]);
        let cov = cohort.pooled_covariance(&rows)?;
        let set = scan_model(arch, params, &cov, cohort)?.significant_set();
        let overlap = if baseline.is_empty() {
            1.0
        } else {
            set.iter().filter(|i| baseline.contains(i)).count() as f64 / baseline.len() as f64
        };
        points.push(CompositionPoint {
            n_hc_included: n_hc,
            n_d_included: n_d,
            overlap_with_baseline: overlap,
            significant_regions: set,
        });
    }
    Ok(points)
}
