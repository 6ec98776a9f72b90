//! Synthetic cohort generators.
//!
//! Features are Gaussian draws around a baseline with a graphon-derived
//! covariance, thinned linearly with age along a fixed direction. The
//! planted cohort additionally shifts a known set of regions in the disease
//! group along a chosen covariance eigenvector, so the ground-truth
//! contributing regions are known exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::brainage::{CohortTable, Diagnosis, Sex, Subject};
use crate::covariance::CovarianceModel;
use crate::error::Result;
use crate::graphon::{graphon_matrix, GraphonSpec};

/// Configuration of the regression toy task.
///
/// Targets are `offset·mean(x)/base + noise` scaled by `signal_weight`:
/// at weight 1 the target is exactly a mean readout of the features, at
/// weight 0 it is the constant `target_offset`.
#[derive(Debug, Clone)]
pub struct LinearTaskConfig {
    pub n_subjects: usize,
    pub n_features: usize,
    /// 1.0 ties the target to the feature mean; 0.0 makes it constant.
    pub signal_weight: f64,
    pub target_offset: f64,
    pub noise_sd: f64,
    /// Scale of the covariance-structured feature fluctuations.
    pub fluctuation_scale: f64,
    pub seed: u64,
}

impl Default for LinearTaskConfig {
    fn default() -> Self {
        Self {
            n_subjects: 200,
            n_features: 10,
            signal_weight: 1.0,
            target_offset: 60.0,
            noise_sd: 0.5,
            fluctuation_scale: 0.5,
            seed: 1,
        }
    }
}

fn spectral_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let model = CovarianceModel::from_matrix(cov.clone()).expect("valid covariance");
    let sqrt_diag =
        DMatrix::from_diagonal(&model.eigenvalues().map(|l| l.max(0.0).sqrt()));
    model.eigenvectors() * sqrt_diag * model.eigenvectors().transpose()
}

/// Cohort whose ages are an affine function of the feature mean.
pub fn linear_task_cohort(config: &LinearTaskConfig) -> Result<CohortTable> {
    let m = config.n_features;
    let base = 2.0;
    let spec = GraphonSpec::preset("cosine2")?;
    let base_cov = graphon_matrix(&spec, m)?;
    let factor = spectral_factor(&base_cov).scale(config.fluctuation_scale);
    let mut rng = crate::rng::stream(config.seed, "linear-task", 0);

    let mut subjects = Vec::with_capacity(config.n_subjects);
    for i in 0..config.n_subjects {
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fluct = &factor * z;
        let noise: f64 = rng.sample::<f64, _>(StandardNormal);
        let age = config.target_offset
            + config.signal_weight * (config.target_offset / base) * fluct.mean()
            + config.noise_sd * noise;
        let features: Vec<f64> = (0..m).map(|j| base + fluct[j]).collect();
        subjects.push(Subject {
            subject_id: format!("s{:04}", i + 1),
            features,
            age,
            sex: if rng.random::<bool>() { Sex::F } else { Sex::M },
            diagnosis: Diagnosis::Hc,
            severity: None,
        });
    }
    let names = (0..m).map(|j| format!("region_{:03}", j + 1)).collect();
    CohortTable::new(subjects, names)
}

/// Configuration of the planted-effect cohort.
#[derive(Debug, Clone)]
pub struct PlantedCohortConfig {
    pub n_hc: usize,
    pub n_d: usize,
    pub n_features: usize,
    /// Graphon preset behind the feature covariance.
    pub graphon: String,
    /// How many regions carry the planted shift (the largest-magnitude
    /// entries of the chosen eigenvector). Zero plants nothing.
    pub planted_regions: usize,
    /// Shift size in pooled healthy-population standard deviations.
    pub shift_sd_multiples: f64,
    /// Which covariance eigenvector shapes the shift profile.
    pub eigenvector_index: usize,
    pub age_range: (f64, f64),
    /// Feature decrease per year along the aging direction.
    pub age_slope: f64,
    /// Scale of the covariance-structured fluctuations.
    pub fluctuation_scale: f64,
    /// Per-subject severity multiplier range (mean should stay near 1).
    pub severity_range: (f64, f64),
    pub seed: u64,
}

impl Default for PlantedCohortConfig {
    fn default() -> Self {
        Self {
            n_hc: 400,
            n_d: 150,
            n_features: 48,
            graphon: "cosine3".into(),
            planted_regions: 10,
            shift_sd_multiples: 2.0,
            eigenvector_index: 2,
            age_range: (50.0, 90.0),
            age_slope: 0.02,
            fluctuation_scale: 0.35,
            severity_range: (0.2, 1.8),
            seed: 0,
        }
    }
}

/// A generated cohort plus its ground truth: which regions were shifted and
/// along which profile.
#[derive(Debug, Clone)]
pub struct PlantedCohort {
    pub cohort: CohortTable,
    pub planted_regions: Vec<usize>,
    /// Per-region shift applied per unit severity (zero off the designated
    /// regions).
    pub shift_profile: DVector<f64>,
}

/// Generate a two-group cohort with a known disease effect.
///
/// Healthy features drift linearly with age along a uniform direction:
/// `x = base + age_slope·(age - mid) + fluctuations`. The disease group's
/// designated regions are pushed further along the same drift — an
/// accelerated-aging effect — with per-region magnitudes shaped by the
/// chosen covariance eigenvector (its largest-magnitude entries define the
/// designated set) and scaled to `shift_sd_multiples` pooled healthy SDs at
/// the profile peak.
pub fn planted_cohort(config: &PlantedCohortConfig) -> Result<PlantedCohort> {
    let m = config.n_features;
    let spec = GraphonSpec::preset(&config.graphon)?;
    let base_cov = graphon_matrix(&spec, m)?;
    let factor = spectral_factor(&base_cov).scale(config.fluctuation_scale);
    let model = CovarianceModel::from_matrix(base_cov)?;
    let mut rng = crate::rng::stream(config.seed, "planted-cohort", 0);

    let mid_age = 0.5 * (config.age_range.0 + config.age_range.1);
    let base = 2.5;

    let draw_subject = |rng: &mut rand_chacha::ChaCha8Rng| -> (f64, Sex, DVector<f64>) {
        let age = rng.random_range(config.age_range.0..config.age_range.1);
        let sex = if rng.random::<bool>() { Sex::F } else { Sex::M };
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = &factor * z;
        for j in 0..m {
            x[j] += base + config.age_slope * (age - mid_age);
        }
        (age, sex, x)
    };

    // Healthy group first; its empirical SDs calibrate the shift.
    let mut hc_rows: Vec<(f64, Sex, DVector<f64>)> = Vec::with_capacity(config.n_hc);
    for _ in 0..config.n_hc {
        hc_rows.push(draw_subject(&mut rng));
    }
    let mut sds = DVector::zeros(m);
    for j in 0..m {
        let vals: Vec<f64> = hc_rows.iter().map(|(_, _, x)| x[j]).collect();
        sds[j] = crate::stats::variance(&vals).sqrt();
    }

    // Shift profile: magnitudes follow the chosen eigenvector on its
    // largest-magnitude entries; the sign is uniform so every designated
    // region moves along the aging drift.
    let (planted, profile) = if config.planted_regions == 0 {
        (Vec::new(), DVector::zeros(m))
    } else {
        let v = model.eigenvector(config.eigenvector_index.min(m - 1));
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| v[b].abs().partial_cmp(&v[a].abs()).unwrap());
        let mut planted: Vec<usize> = order[..config.planted_regions.min(m)].to_vec();
        planted.sort_unstable();
        let vmax = planted.iter().map(|&j| v[j].abs()).fold(0.0f64, f64::max);
        let mut profile = DVector::zeros(m);
        for &j in &planted {
            profile[j] = config.shift_sd_multiples * sds[j] * v[j].abs() / vmax;
        }
        (planted, profile)
    };

    let mut subjects = Vec::with_capacity(config.n_hc + config.n_d);
    for (i, (age, sex, x)) in hc_rows.into_iter().enumerate() {
        subjects.push(Subject {
            subject_id: format!("hc{:04}", i + 1),
            features: x.iter().copied().collect(),
            age,
            sex,
            diagnosis: Diagnosis::Hc,
            severity: None,
        });
    }
    for i in 0..config.n_d {
        let (age, sex, mut x) = draw_subject(&mut rng);
        let severity = rng.random_range(config.severity_range.0..config.severity_range.1);
        for j in 0..m {
            x[j] += severity * profile[j];
        }
        subjects.push(Subject {
            subject_id: format!("d{:04}", i + 1),
            features: x.iter().copied().collect(),
            age,
            sex,
            diagnosis: Diagnosis::D,
            // CDR-like score: monotone in the planted severity.
            severity: Some(4.0 * severity),
        });
    }

    let names = (0..m).map(|j| format!("region_{:03}", j + 1)).collect();
    Ok(PlantedCohort {
        cohort: CohortTable::new(subjects, names)?,
        planted_regions: planted,
        shift_profile: profile,
    })
}
