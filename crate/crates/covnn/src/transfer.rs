//! Transfer and stability experiments: apply trained taps across covariance
//! matrices of different sizes, sweep sample counts, and summarize
//! convergence.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{estimate_sample_covariance, normalize_spectrum, CovarianceModel, FeatureMatrix};
use crate::error::{Error, Result};
use crate::graphon::{
    cut_distance_overlay, graphon_matrix, interval_partition, sample_covariance_from_graphon,
    step_function_l2_distance, GraphonSignal, GraphonSpec, StepFunction,
};
use crate::model::{forward, readout_mean, regional_contributions, VnnArchitecture, VnnParameters};

// ---------------------------------------------------------------------------
// Sweep reports
// ---------------------------------------------------------------------------

/// Error statistics at one sweep point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub axis: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Axis, per-point statistics, and the fitted log-log slope of the medians.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis_label: String,
    pub points: Vec<SweepPoint>,
    pub fitted_slope: f64,
    pub samples_per_point: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

fn point_stats(axis: f64, samples: &[f64]) -> SweepPoint {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    SweepPoint {
        axis,
        median: quantile(&sorted, 0.5),
        q25: quantile(&sorted, 0.25),
        q75: quantile(&sorted, 0.75),
    }
}

/// Least-squares slope of `ln y` on `ln x` over points with positive `y`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pairs.len() < 2 {
        return f64::NAN;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    sxy / sxx
}

// ---------------------------------------------------------------------------
// Transferring a model
// ---------------------------------------------------------------------------

/// Outputs of a model applied, unchanged, on a new covariance.
#[derive(Debug, Clone)]
pub struct TransferOutput {
    pub readout: f64,
    pub contributions: DVector<f64>,
    /// One step function per final-layer output channel, over the target's
    /// trace-weighted partition.
    pub step_outputs: Vec<StepFunction>,
}

/// Apply trained taps on a target covariance of any size.
pub fn transfer_model(
    params: &VnnParameters,
    arch: &VnnArchitecture,
    cov_target: &CovarianceModel,
    x_target: &DVector<f64>,
) -> Result<TransferOutput> {
    if !cov_target.is_normalized() {
        return Err(Error::UnnormalizedSpectrum);
    }
    let output = forward(arch, params, cov_target, x_target)?;
    let partition = interval_partition(cov_target)?;
    let step_outputs = (0..output.ncols())
        .map(|f| {
            StepFunction::new(partition.clone(), output.column(f).iter().copied().collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferOutput {
        readout: readout_mean(&output)?,
        contributions: regional_contributions(&output)?,
        step_outputs,
    })
}

// ---------------------------------------------------------------------------
// Transferability sweep (resolution axis)
// ---------------------------------------------------------------------------

/// Results of running fixed taps across graphon resolutions.
#[derive(Debug, Clone, Serialize)]
pub struct TransferSweep {
    pub sizes: Vec<usize>,
    /// Per consecutive pair, the step-function L2 distance of every output
    /// channel.
    pub pair_output_distances: Vec<Vec<f64>>,
    /// |ŷ_{m1} - ŷ_{m2}| per consecutive pair.
    pub readout_gaps: Vec<f64>,
    pub readouts: Vec<f64>,
    /// Log-log slope of the median per-output distance against the smaller
    /// resolution of each pair.
    pub fitted_slope: f64,
    pub report: SweepReport,
}

/// Evaluate the same signal and taps at every resolution and measure how the
/// continuous representations of the outputs converge.
pub fn transfer_sweep(
    spec: &GraphonSpec,
    signal: &GraphonSignal,
    arch: &VnnArchitecture,
    params: &VnnParameters,
    sizes: &[usize],
) -> Result<TransferSweep> {
    if sizes.len() < 3 {
        return Err(Error::Config(format!("transfer sweep needs ≥ 3 sizes, got {}", sizes.len())));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sizes must be strictly increasing".into()));
    }
    let mut outputs: Vec<(usize, f64, Vec<StepFunction>)> = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let cov = sample_covariance_from_graphon(spec, m)?;
        let partition = interval_partition(&cov)?;
        let x = signal.discretize(&partition);
        let transferred = transfer_model(params, arch, &cov, &x)?;
        outputs.push((m, transferred.readout, transferred.step_outputs));
    }

    let mut pair_output_distances = Vec::new();
    let mut readout_gaps = Vec::new();
    let mut points = Vec::new();
    for pair in outputs.windows(2) {
        let (m1, y1, ref f1) = pair[0];
        let (_m2, y2, ref f2) = pair[1];
        let distances: Vec<f64> = f1
            .iter()
            .zip(f2.iter())
            .map(|(a, b)| step_function_l2_distance(a, b))
            .collect();
        points.push(point_stats(m1 as f64, &distances));
        pair_output_distances.push(distances);
        readout_gaps.push((y1 - y2).abs());
    }
    let axis: Vec<f64> = points.iter().map(|p| p.axis).collect();
    let medians: Vec<f64> = points.iter().map(|p| p.median).collect();
    let fitted_slope = log_log_slope(&axis, &medians);
    Ok(TransferSweep {
        sizes: sizes.to_vec(),
        pair_output_distances,
        readout_gaps,
        readouts: outputs.iter().map(|(_, y, _)| *y).collect(),
        fitted_slope,
        report: SweepReport {
            axis_label: "resolution".into(),
            points,
            fitted_slope,
            samples_per_point: arch.output_channels(),
            seed: 0,
            warnings: Vec::new(),
        },
    })
}

// ---------------------------------------------------------------------------
// Stability sweep (sample-count axis)
// ---------------------------------------------------------------------------

/// Results of sweeping the number of samples behind the covariance
/// estimate.
#[derive(Debug, Clone, Serialize)]
pub struct StabilitySweep {
    pub sample_counts: Vec<usize>,
    /// Output-space error per point and trial.
    pub errors: Vec<Vec<f64>>,
    pub fitted_slope: f64,
    pub report: SweepReport,
}

/// Frobenius distance between the outputs at the estimated and the exact
/// covariance, `‖Φ(x; Ĉ_n) - Φ(x; C_m)‖`.
pub fn output_distance(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cov_reference: &CovarianceModel,
    cov_estimate: &CovarianceModel,
    x: &DVector<f64>,
) -> Result<f64> {
    let reference = forward(arch, params, cov_reference, x)?;
    let estimated = forward(arch, params, cov_estimate, x)?;
    Ok((estimated - reference).norm())
}

/// Treat the graphon realization at resolution `m` as the ensemble
/// covariance; for each sample count draw Gaussian data with that
/// covariance, re-estimate, and measure the output error of fixed taps.
pub fn stability_sweep(
    spec: &GraphonSpec,
    m: usize,
    arch: &VnnArchitecture,
    params: &VnnParameters,
    sample_counts: &[usize],
    trials: usize,
    seed: u64,
) -> Result<StabilitySweep> {
    if sample_counts.len() < 4 {
        return Err(Error::Config(format!(
            "stability sweep needs ≥ 4 sample counts, got {}",
            sample_counts.len()
        )));
    }
    if sample_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sample counts must be strictly increasing".into()));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    let cov = sample_covariance_from_graphon(spec, m)?;
    let partition = interval_partition(&cov)?;
    let probe =
        GraphonSignal::random_smooth(3, 1.0, &mut crate::rng::stream(seed, "stability-probe", 0));
    let x = probe.discretize(&partition);
    let reference = forward(arch, params, &cov, &x)?;

    // Spectral factor of the exact covariance for Gaussian sampling.
    let sqrt_diag = DMatrix::from_diagonal(&cov.eigenvalues().map(|l| l.max(0.0).sqrt()));
    let factor = cov.eigenvectors() * sqrt_diag;

    let mut warnings = Vec::new();
    for &n in sample_counts {
        if n <= m {
            warnings.push(format!(
                "sample count {n} ≤ dimension {m}: estimate will be rank-deficient"
            ));
        }
    }

    let mut errors = Vec::with_capacity(sample_counts.len());
    let mut points = Vec::with_capacity(sample_counts.len());
    for (point_idx, &n) in sample_counts.iter().enumerate() {
        let trial_errors: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| -> Result<f64> {
                let mut rng =
                    crate::rng::stream(seed, "stability-trial", (point_idx * 100_003 + t) as u64);
                let mut rows = DMatrix::zeros(n, m);
                for i in 0..n {
                    let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let sample = &factor * z;
                    for j in 0..m {
                        rows[(i, j)] = sample[j];
                    }
                }
                let estimate = normalize_spectrum(&estimate_sample_covariance(
                    &FeatureMatrix::from_rows(rows)?,
                )?)?;
                let est_out = forward(arch, params, &estimate, &x)?;
                Ok((est_out - &reference).norm())
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(point_stats(n as f64, &trial_errors));
        errors.push(trial_errors);
    }
    let axis: Vec<f64> = points.iter().map(|p| p.axis).collect();
    let medians: Vec<f64> = points.iter().map(|p| p.median).collect();
    let fitted_slope = log_log_slope(&axis, &medians);
    Ok(StabilitySweep {
        sample_counts: sample_counts.to_vec(),
        errors,
        fitted_slope,
        report: SweepReport {
            axis_label: "samples".into(),
            points,
            fitted_slope,
            samples_per_point: trials,
            seed,
            warnings,
        },
    })
}

// ---------------------------------------------------------------------------
// Convergence series
// ---------------------------------------------------------------------------

/// Consecutive overlay cut-distances along a graphon's realization series.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSeries {
    pub sizes: Vec<usize>,
    pub distances: Vec<f64>,
    pub exact: Vec<bool>,
    pub strictly_decreasing: bool,
}

/// Distances between consecutive realizations of a graphon. The overlay
/// derives its node weights from the diagonals; kernel values keep the
/// graphon's scale across resolutions.
pub fn convergence_series(spec: &GraphonSpec, sizes: &[usize]) -> Result<ConvergenceSeries> {
    if sizes.len() < 3 {
        return Err(Error::Config(format!(
            "convergence series needs ≥ 3 sizes, got {}",
            sizes.len()
        )));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sizes must be strictly increasing".into()));
    }
    let matrices: Vec<DMatrix<f64>> = sizes
        .iter()
        .map(|&m| graphon_matrix(spec, m))
        .collect::<Result<Vec<_>>>()?;
    let mut distances = Vec::new();
    let mut exact = Vec::new();
    for pair in matrices.windows(2) {
        let d = cut_distance_overlay(&pair[0], &pair[1])?;
        distances.push(d.value);
        exact.push(d.exact);
    }
    let strictly_decreasing = distances.windows(2).all(|w| w[1] < w[0]);
    Ok(ConvergenceSeries { sizes: sizes.to_vec(), distances, exact, strictly_decreasing })
}

/// Overlay cut-distance between same-resolution realizations of two
/// different graphons.
pub fn cross_graphon_distance(a: &GraphonSpec, b: &GraphonSpec, m: usize) -> Result<f64> {
    let ca = graphon_matrix(a, m)?;
    let cb = graphon_matrix(b, m)?;
    Ok(cut_distance_overlay(&ca, &cb)?.value)
}
