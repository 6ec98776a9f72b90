//! Drivers behind the `covnn` binary: one function per subcommand, each
//! writing deterministic CSV/JSON outputs into an output directory.
//!
//! Every driver takes a plain options struct that can also be populated
//! from a TOML config file (unknown keys rejected); explicit flags win over
//! file values, file values win over defaults.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::brainage::synthetic::{planted_cohort, PlantedCohortConfig};
use crate::brainage::{delta_age_report, robustness_count_models, scan_model};
use crate::covariance::{estimate_sample_covariance, normalize_spectrum, CovarianceModel};
use crate::error::{Error, Result};
use crate::graphon::{GraphonSignal, GraphonSpec};
use crate::io;
use crate::model::{ModelMeta, Nonlinearity, VnnArchitecture, VnnParameters};
use crate::training::{self, TrainConfig};
use crate::transfer;

/// Parse an optional TOML config file into a command's option bag.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{p:?}: {e}")))
        }
    }
}

/// Parse `"1x8x3,8x8x3,8x1x2"` into layer triples.
pub fn parse_arch(text: &str) -> Result<Vec<(usize, usize, usize)>> {
    let mut layers = Vec::new();
    for part in text.split(',') {
        let dims: Vec<&str> = part.trim().split('x').collect();
        if dims.len() != 3 {
            return Err(Error::Config(format!(
                "layer `{part}` must be f_in x f_out x taps"
            )));
        }
        let parse = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Config(format!("bad layer dimension `{s}`")))
        };
        layers.push((parse(dims[0])?, parse(dims[1])?, parse(dims[2])?));
    }
    if layers.is_empty() {
        return Err(Error::Config("empty architecture".into()));
    }
    Ok(layers)
}

/// Parse `"8,16,32"` into a list of counts.
pub fn parse_counts(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| Error::Config(format!("bad count `{s}`")))
        })
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

macro_rules! merge_fields {
    ($base:ident, $over:ident; $($field:ident),+ $(,)?) => {{
        $( if $over.$field.is_some() { $base.$field = $over.$field; } )+
        $base
    }};
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Options for cohort synthesis.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOptions {
    pub graphon: Option<String>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub disease: Option<usize>,
    pub planted_regions: Option<usize>,
    pub shift: Option<f64>,
    pub eigenvector: Option<usize>,
    pub seed: Option<u64>,
}

impl SynthOptions {
    pub fn merge(mut self, over: SynthOptions) -> SynthOptions {
        merge_fields!(self, over; graphon, m, n, disease, planted_regions, shift, eigenvector, seed)
    }
}

#[derive(Serialize)]
struct SynthSummary {
    graphon: String,
    n_features: usize,
    n_hc: usize,
    n_d: usize,
    planted_regions: Vec<usize>,
    seed: u64,
}

/// Generate a synthetic cohort and write `features.csv`, `phenotype.csv`,
/// the graphon description, and the planted ground truth.
pub fn run_synth(opts: &SynthOptions, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let n_d = opts.disease.unwrap_or(0);
    let config = PlantedCohortConfig {
        n_hc: opts.n.unwrap_or(400),
        n_d,
        n_features: opts.m.unwrap_or(48),
        graphon: opts.graphon.clone().unwrap_or_else(|| "cosine3".into()),
        planted_regions: if n_d == 0 { 0 } else { opts.planted_regions.unwrap_or(10) },
        shift_sd_multiples: opts.shift.unwrap_or(2.0),
        eigenvector_index: opts.eigenvector.unwrap_or(2),
        seed: opts.seed.unwrap_or(0),
        ..PlantedCohortConfig::default()
    };
    let planted = planted_cohort(&config)?;
    io::write_cohort(out, &planted.cohort)?;
    fs::write(out.join("graphon.json"), GraphonSpec::preset(&config.graphon)?.to_text())?;
    io::write_json(
        &out.join("summary.json"),
        &SynthSummary {
            graphon: config.graphon.clone(),
            n_features: config.n_features,
            n_hc: config.n_hc,
            n_d: config.n_d,
            planted_regions: planted.planted_regions.clone(),
            seed: config.seed,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub features: Option<PathBuf>,
    pub phenotype: Option<PathBuf>,
    pub arch: Option<String>,
    pub nonlinearity: Option<String>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub learning_rate: Option<f64>,
    pub ensemble: Option<usize>,
    pub seed: Option<u64>,
    pub standardize: Option<bool>,
    pub train_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
    pub test_fraction: Option<f64>,
}

impl TrainOptions {
    pub fn merge(mut self, over: TrainOptions) -> TrainOptions {
        merge_fields!(self, over; features, phenotype, arch, nonlinearity, epochs, batch,
            learning_rate, ensemble, seed, standardize, train_fraction, val_fraction,
            test_fraction)
    }
}

#[derive(Serialize)]
struct TrainSummary {
    arch: Vec<[usize; 3]>,
    nonlinearity: String,
    parameter_count: usize,
    ensemble_size: usize,
    seed: u64,
    covariance_digest: String,
    median_test_mae: f64,
    median_test_pearson: f64,
    mean_full_mae: f64,
}

fn require<T: Clone>(opt: &Option<T>, name: &str) -> Result<T> {
    opt.clone().ok_or_else(|| Error::Config(format!("missing required option `{name}`")))
}

fn median_of(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if xs.is_empty() {
        f64::NAN
    } else {
        xs[xs.len() / 2]
    }
}

/// Train a permutation ensemble and persist the models, the training
/// covariance, per-member metrics, and a summary.
pub fn run_train(opts: &TrainOptions, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let mut cohort = io::load_cohort(
        &require(&opts.features, "features")?,
        &require(&opts.phenotype, "phenotype")?,
    )?;
    if opts.standardize.unwrap_or(false) {
        cohort = cohort.standardized()?;
    }
    let triples = parse_arch(&opts.arch.clone().unwrap_or_else(|| "1x4x2,4x4x2,4x1x2".into()))?;
    let nonlinearity: Nonlinearity =
        opts.nonlinearity.clone().unwrap_or_else(|| "relu".into()).parse()?;
    let arch = VnnArchitecture::from_triples(&triples, nonlinearity)?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        max_epochs: opts.epochs.unwrap_or(defaults.max_epochs),
        batch_size: opts.batch.unwrap_or(defaults.batch_size),
        learning_rate: opts.learning_rate.unwrap_or(defaults.learning_rate),
        ensemble_size: opts.ensemble.unwrap_or(defaults.ensemble_size),
        seed: opts.seed.unwrap_or(defaults.seed),
        train_fraction: opts.train_fraction.unwrap_or(defaults.train_fraction),
        val_fraction: opts.val_fraction.unwrap_or(defaults.val_fraction),
        test_fraction: opts.test_fraction.unwrap_or(defaults.test_fraction),
        ..defaults
    };
    let ensemble = training::train_ensemble(&cohort, &arch, &config)?;
    let cov = training::training_covariance(&cohort, &config)?;

    let models_dir = out.join("models");
    ensure_dir(&models_dir)?;
    for (i, member) in ensemble.members.iter().enumerate() {
        let meta = ModelMeta {
            covariance_digest: ensemble.covariance_digest.clone(),
            seed: member.permutation_seed,
            epochs: member.metrics.epochs_run,
            loss: member.validation_mse,
        };
        io::save_model(
            &models_dir.join(format!("member_{i:03}.model")),
            &arch,
            &member.params,
            &meta,
        )?;
    }
    io::save_covariance(&out.join("covariance.json"), &cov)?;

    // Whole-file MAE per member at the shared training covariance; `predict
    // --covariance` on the same file reproduces these numbers exactly.
    let features = cohort.features_matrix();
    let ages: Vec<f64> = cohort.subjects().iter().map(|s| s.age).collect();
    let full_mae: Vec<f64> = ensemble
        .members
        .par_iter()
        .map(|member| {
            let preds = training::predict(&arch, &member.params, &cov, &features)?;
            Ok(preds.iter().zip(&ages).map(|(p, y)| (p - y).abs()).sum::<f64>()
                / ages.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_member_metrics_csv(&out.join("metrics.csv"), &ensemble, &full_mae)?;

    io::write_json(
        &out.join("summary.json"),
        &TrainSummary {
            arch: triples.iter().map(|&(a, b, c)| [a, b, c]).collect(),
            nonlinearity: nonlinearity.to_string(),
            parameter_count: arch.parameter_count(),
            ensemble_size: ensemble.members.len(),
            seed: config.seed,
            covariance_digest: ensemble.covariance_digest.clone(),
            median_test_mae: median_of(
                ensemble.members.iter().map(|m| m.metrics.test_mae).collect(),
            ),
            median_test_pearson: median_of(
                ensemble.members.iter().map(|m| m.metrics.test_pearson).collect(),
            ),
            mean_full_mae: full_mae.iter().sum::<f64>() / full_mae.len() as f64,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// predict / transfer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct PredictOptions {
    pub model: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub phenotype: Option<PathBuf>,
    pub covariance: Option<PathBuf>,
}

#[derive(Serialize)]
struct PredictSummary {
    n_subjects: usize,
    covariance_digest: String,
    covariance_source: String,
    mae: Option<f64>,
    pearson: Option<f64>,
}

fn covariance_from_features(features: &crate::covariance::FeatureMatrix) -> Result<CovarianceModel> {
    normalize_spectrum(&estimate_sample_covariance(features)?)
}

fn accuracy_against_phenotype(
    ids: &[String],
    predictions: &[f64],
    phenotype: Option<&Path>,
) -> Result<(Option<f64>, Option<f64>)> {
    let Some(path) = phenotype else { return Ok((None, None)) };
    let rows = io::ingest_phenotype(path)?;
    let by_id: std::collections::HashMap<&str, f64> =
        rows.iter().map(|r| (r.subject_id.as_str(), r.age)).collect();
    let mut pairs = Vec::new();
    for (id, &pred) in ids.iter().zip(predictions) {
        if let Some(&age) = by_id.get(id.as_str()) {
            pairs.push((pred, age));
        }
    }
    if pairs.is_empty() {
        return Ok((None, None));
    }
    let preds: Vec<f64> = pairs.iter().map(|(p, _)| *p).collect();
    let ages: Vec<f64> = pairs.iter().map(|(_, a)| *a).collect();
    let mae =
        preds.iter().zip(&ages).map(|(p, y)| (p - y).abs()).sum::<f64>() / preds.len() as f64;
    let pearson = crate::stats::pearson(&preds, &ages).ok();
    Ok((Some(mae), pearson))
}

/// Predict with a saved model. With `--covariance` the stored training
/// covariance is used (digest-checked); otherwise the covariance is
/// re-estimated from the given features.
pub fn run_predict(opts: &PredictOptions, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (arch, params, meta) = io::load_model(&require(&opts.model, "model")?)?;
    let (ids, features) = io::ingest_features(&require(&opts.features, "features")?)?;
    let (cov, source) = match &opts.covariance {
        Some(path) => {
            let cov = io::load_covariance(path)?;
            if cov.digest() != meta.covariance_digest {
                return Err(Error::InvalidData(format!(
                    "covariance digest {} differs from the model's training covariance {}",
                    cov.digest(),
                    meta.covariance_digest
                )));
            }
            (cov, "stored".to_string())
        }
        None => (covariance_from_features(&features)?, "estimated".to_string()),
    };
    if cov.dim() != features.n_features() {
        return Err(Error::Shape {
            expected: format!("{} features to match the covariance", cov.dim()),
            found: format!("{}", features.n_features()),
        });
    }
    let predictions = training::predict(&arch, &params, &cov, &features)?;
    io::write_predictions_csv(&out.join("predictions.csv"), &ids, &predictions)?;
    let (mae, pearson) =
        accuracy_against_phenotype(&ids, &predictions, opts.phenotype.as_deref())?;
    io::write_json(
        &out.join("summary.json"),
        &PredictSummary {
            n_subjects: ids.len(),
            covariance_digest: cov.digest(),
            covariance_source: source,
            mae,
            pearson,
        },
    )?;
    Ok(())
}

/// Transfer a saved model onto a dataset of (possibly) different
/// dimensionality: the covariance is always estimated from the target
/// features, the taps stay fixed.
pub fn run_transfer(opts: &PredictOptions, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (arch, params, _meta) = io::load_model(&require(&opts.model, "model")?)?;
    let (ids, features) = io::ingest_features(&require(&opts.features, "features")?)?;
    let cov = covariance_from_features(&features)?;
    let predictions = training::predict(&arch, &params, &cov, &features)?;
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericOverflow("transferred readout".into()));
    }
    io::write_predictions_csv(&out.join("predictions.csv"), &ids, &predictions)?;
    let (mae, pearson) =
        accuracy_against_phenotype(&ids, &predictions, opts.phenotype.as_deref())?;
    io::write_json(
        &out.join("summary.json"),
        &PredictSummary {
            n_subjects: ids.len(),
            covariance_digest: cov.digest(),
            covariance_source: "estimated".into(),
            mae,
            pearson,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySweepOptions {
    pub graphon: Option<String>,
    pub m: Option<usize>,
    pub samples: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub model: Option<PathBuf>,
    pub arch: Option<String>,
}

impl StabilitySweepOptions {
    pub fn merge(mut self, over: StabilitySweepOptions) -> StabilitySweepOptions {
        merge_fields!(self, over; graphon, m, samples, trials, seed, model, arch)
    }
}

fn model_or_random(
    model: &Option<PathBuf>,
    arch_text: &Option<String>,
    seed: u64,
) -> Result<(VnnArchitecture, VnnParameters)> {
    match model {
        Some(path) => {
            let (arch, params, _) = io::load_model(path)?;
            Ok((arch, params))
        }
        None => {
            let triples =
                parse_arch(arch_text.as_deref().unwrap_or("1x4x2,4x4x2,4x1x2"))?;
            let arch = VnnArchitecture::from_triples(&triples, Nonlinearity::Relu)?;
            let mut rng = crate::rng::stream(seed, "random-taps", 0);
            let params = VnnParameters::init_uniform(&arch, &mut rng);
            Ok((arch, params))
        }
    }
}

#[derive(Serialize)]
struct StabilitySummary {
    graphon: String,
    m: usize,
    sample_counts: Vec<usize>,
    trials: usize,
    seed: u64,
    fitted_slope: f64,
    warnings: Vec<String>,
}

/// Sweep the sample count behind the covariance estimate and record how the
/// output error decays.
pub fn run_sweep_stability(opts: &StabilitySweepOptions, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let graphon = opts.graphon.clone().unwrap_or_else(|| "cosine2".into());
    let spec = GraphonSpec::preset(&graphon)?;
    let m = opts.m.unwrap_or(40);
    let samples = parse_counts(opts.samples.as_deref().unwrap_or("100,400,1600,6400"))?;
    let trials = opts.trials.unwrap_or(20);
    let seed = opts.seed.unwrap_or(0);
    let (arch, params) = model_or_random(&opts.model, &opts.arch, seed)?;
    let sweep = transfer::stability_sweep(&spec, m, &arch, &params, &samples, trials, seed)?;
    io::write_sweep_csv(&out.join("stability.csv"), &sweep.report)?;
    io::write_json(
        &out.join("summary.json"),
        &StabilitySummary {
            graphon,
            m,
            sample_counts: samples,
            trials,
            seed,
            fitted_slope: sweep.fitted_slope,
            warnings: sweep.report.warnings.clone(),
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSweepOptions {
    pub graphon: Option<String>,
    pub sizes: Option<String>,
    pub seed: Option<u64>,
    pub signal_modes: Option<u32>,
    pub model: Option<PathBuf>,
    pub arch: Option<String>,
}

impl TransferSweepOptions {
    pub fn merge(mut self, over: TransferSweepOptions) -> TransferSweepOptions {
        merge_fields!(self, over; graphon, sizes, seed, signal_modes, model, arch)
    }
}

#[derive(Serialize)]
struct TransferSweepSummary {
    graphon: String,
    sizes: Vec<usize>,
    fitted_slope: f64,
    readout_gaps: Vec<f64>,
    readouts: Vec<f64>,
}

/// Evaluate fixed taps across graphon resolutions and record convergence of
/// the continuous output representations.
pub fn run_sweep_transfer(opts: &TransferSweepOptions, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let graphon = opts.graphon.clone().unwrap_or_else(|| "cosine2".into());
    let spec = GraphonSpec::preset(&graphon)?;
    let sizes = parse_counts(opts.sizes.as_deref().unwrap_or("32,64,128,256"))?;
    let seed = opts.seed.unwrap_or(0);
    let (arch, params) = model_or_random(&opts.model, &opts.arch, seed)?;
    let signal = GraphonSignal::random_smooth(
        opts.signal_modes.unwrap_or(3),
        1.0,
        &mut crate::rng::stream(seed, "sweep-signal", 0),
    );
    let sweep = transfer::transfer_sweep(&spec, &signal, &arch, &params, &sizes)?;
    io::write_sweep_csv(&out.join("transfer.csv"), &sweep.report)?;
    let mut detail = String::from("size_lo,size_hi,output,distance\n");
    for (k, pair) in sizes.windows(2).enumerate() {
        for (f, d) in sweep.pair_output_distances[k].iter().enumerate() {
            detail.push_str(&format!("{},{},{f},{}\n", pair[0], pair[1], io::fmt_f64(*d)));
        }
    }
    fs::write(out.join("distances.csv"), detail)?;
    io::write_json(
        &out.join("summary.json"),
        &TransferSweepSummary {
            graphon,
            sizes,
            fitted_slope: sweep.fitted_slope,
            readout_gaps: sweep.readout_gaps.clone(),
            readouts: sweep.readouts.clone(),
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// cutdist
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutDistOptions {
    pub graphon: Option<String>,
    pub sizes: Option<String>,
    pub cross: Option<String>,
}

impl CutDistOptions {
    pub fn merge(mut self, over: CutDistOptions) -> CutDistOptions {
        merge_fields!(self, over; graphon, sizes, cross)
    }
}

#[derive(Serialize)]
struct CutDistSummary {
    graphon: String,
    sizes: Vec<usize>,
    distances: Vec<f64>,
    strictly_decreasing: bool,
    cross_graphon: Option<String>,
    cross_distance: Option<f64>,
}

/// Consecutive overlay cut-distances along a realization series, plus an
/// optional cross-graphon comparison at the largest size.
pub fn run_cutdist(opts: &CutDistOptions, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let graphon = opts.graphon.clone().unwrap_or_else(|| "cosine2".into());
    let spec = GraphonSpec::preset(&graphon)?;
    let sizes = parse_counts(opts.sizes.as_deref().unwrap_or("8,16,32,64"))?;
    let series = transfer::convergence_series(&spec, &sizes)?;
    let mut table = String::from("size_lo,size_hi,distance,exact\n");
    for (k, pair) in sizes.windows(2).enumerate() {
        table.push_str(&format!(
            "{},{},{},{}\n",
            pair[0],
            pair[1],
            io::fmt_f64(series.distances[k]),
            series.exact[k]
        ));
    }
    fs::write(out.join("cutdist.csv"), table)?;
    let cross_distance = match &opts.cross {
        Some(name) => Some(transfer::cross_graphon_distance(
            &spec,
            &GraphonSpec::preset(name)?,
            *sizes.last().unwrap(),
        )?),
        None => None,
    };
    io::write_json(
        &out.join("summary.json"),
        &CutDistSummary {
            graphon,
            sizes,
            distances: series.distances.clone(),
            strictly_decreasing: series.strictly_decreasing,
            cross_graphon: opts.cross.clone(),
            cross_distance,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// brainage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrainAgeOptions {
    pub features: Option<PathBuf>,
    pub phenotype: Option<PathBuf>,
    /// A `.model` file or a directory of them.
    pub models: Option<PathBuf>,
}

impl BrainAgeOptions {
    pub fn merge(mut self, over: BrainAgeOptions) -> BrainAgeOptions {
        merge_fields!(self, over; features, phenotype, models)
    }
}

#[derive(Serialize)]
struct BrainAgeSummary {
    n_models: usize,
    n_hc: usize,
    n_d: usize,
    covariance_digest: String,
    a_bias: f64,
    b_bias: f64,
    hc_mean_delta: f64,
    hc_sd_delta: f64,
    d_mean_delta: f64,
    d_sd_delta: f64,
    cohens_d: f64,
    ancova_p: f64,
    partial_eta_sq: f64,
    severity_pearson: Option<(f64, f64)>,
    significant_regions_first_model: Vec<String>,
}

fn collect_models(path: &Path) -> Result<Vec<(VnnArchitecture, VnnParameters, ModelMeta)>> {
    let mut files: Vec<PathBuf> = if path.is_dir() {
        fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "model").unwrap_or(false))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no .model files under {path:?}")));
    }
    files.iter().map(|p| io::load_model(p)).collect()
}

/// The full brain-age pipeline with pre-trained models: combined-cohort
/// covariance, per-model regional scans with robustness counts, ensemble
/// delta-age with bias correction, and CSV/JSON reports.
pub fn run_brainage(opts: &BrainAgeOptions, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let cohort = io::load_cohort(
        &require(&opts.features, "features")?,
        &require(&opts.phenotype, "phenotype")?,
    )?;
    let models = collect_models(&require(&opts.models, "models")?)?;
    let arch = models[0].0.clone();
    for (a, _, _) in &models {
        if *a != arch {
            return Err(Error::InvalidData(
                "ensemble members disagree on the architecture".into(),
            ));
        }
    }
    if cohort.d_indices().is_empty() {
        return Err(Error::InsufficientGroup("disease group".into(), 2));
    }

    // Combined-population covariance: both groups shape the graph.
    let all_rows: Vec<usize> = (0..cohort.n_subjects()).collect();
    let cov_combined = cohort.pooled_covariance(&all_rows)?;

    let params_list: Vec<&VnnParameters> = models.iter().map(|(_, p, _)| p).collect();
    let features = cohort.features_matrix();
    let per_model_predictions: Vec<Vec<f64>> = params_list
        .par_iter()
        .map(|params| training::predict(&arch, params, &cov_combined, &features))
        .collect::<Result<Vec<_>>>()?;
    let n = cohort.n_subjects();
    let mean_predictions: Vec<f64> = (0..n)
        .map(|i| {
            per_model_predictions.iter().map(|p| p[i]).sum::<f64>()
                / per_model_predictions.len() as f64
        })
        .collect();

    let delta = delta_age_report(&cohort, &mean_predictions)?;
    io::write_delta_age_csv(&out.join("delta_age.csv"), &delta)?;

    let first_scan = scan_model(&arch, params_list[0], &cov_combined, &cohort)?;
    io::write_regions_csv(&out.join("regions.csv"), &first_scan)?;

    let counts = robustness_count_models(&arch, &params_list, &cohort, &cov_combined)?;
    io::write_robustness_csv(&out.join("robustness.csv"), cohort.feature_names(), &counts)?;

    io::write_json(
        &out.join("summary.json"),
        &BrainAgeSummary {
            n_models: models.len(),
            n_hc: cohort.hc_indices().len(),
            n_d: cohort.d_indices().len(),
            covariance_digest: cov_combined.digest(),
            a_bias: delta.a_bias,
            b_bias: delta.b_bias,
            hc_mean_delta: delta.hc_mean_delta,
            hc_sd_delta: delta.hc_sd_delta,
            d_mean_delta: delta.d_mean_delta,
            d_sd_delta: delta.d_sd_delta,
            cohens_d: delta.cohens_d,
            ancova_p: delta.ancova_p,
            partial_eta_sq: delta.partial_eta_sq,
            severity_pearson: delta.severity_pearson,
            significant_regions_first_model: first_scan
                .significant_set()
                .into_iter()
                .map(|i| cohort.feature_names()[i].clone())
                .collect(),
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct InspectSummary {
    format_version: u32,
    nonlinearity: String,
    layers: Vec<[usize; 3]>,
    parameter_count: usize,
    covariance_digest: String,
    seed: u64,
    epochs: usize,
    loss: f64,
}

/// Human-readable description of a model document.
pub fn run_inspect(model: &Path) -> Result<String> {
    let (arch, _params, meta) = io::load_model(model)?;
    let summary = InspectSummary {
        format_version: crate::model::MODEL_FORMAT_VERSION,
        nonlinearity: arch.nonlinearity().to_string(),
        layers: arch.layers().iter().map(|l| [l.f_in, l.f_out, l.num_taps]).collect(),
        parameter_count: arch.parameter_count(),
        covariance_digest: meta.covariance_digest,
        seed: meta.seed,
        epochs: meta.epochs,
        loss: meta.loss,
    };
    serde_json::to_string_pretty(&summary).map_err(|e| Error::MalformedDocument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_string_round_trip() {
        let triples = parse_arch("1x26x2,26x26x2,26x1x2").unwrap();
        assert_eq!(triples, vec![(1, 26, 2), (26, 26, 2), (26, 1, 2)]);
        assert!(parse_arch("1x2").is_err());
        assert!(parse_arch("axbxc").is_err());
        assert_eq!(parse_counts("8,16,32").unwrap(), vec![8, 16, 32]);
    }

    #[test]
    fn synth_is_byte_deterministic() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let opts = SynthOptions {
            graphon: Some("cosine2".into()),
            m: Some(12),
            n: Some(20),
            disease: Some(8),
            seed: Some(7),
            ..SynthOptions::default()
        };
        run_synth(&opts, dir1.path()).unwrap();
        run_synth(&opts, dir2.path()).unwrap();
        for file in ["features.csv", "phenotype.csv", "summary.json"] {
            let a = fs::read(dir1.path().join(file)).unwrap();
            let b = fs::read(dir2.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    #[test]
    fn config_file_merges_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("config.toml");
        fs::write(&config_path, "graphon = \"cosine1\"\nm = 9\nseed = 3\n").unwrap();
        let from_file: SynthOptions = load_config(Some(&config_path)).unwrap();
        let flags = SynthOptions { m: Some(11), ..SynthOptions::default() };
        let merged = from_file.merge(flags);
        assert_eq!(merged.graphon.as_deref(), Some("cosine1"));
        assert_eq!(merged.m, Some(11));
        assert_eq!(merged.seed, Some(3));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("config.toml");
        fs::write(&config_path, "graphon = \"cosine1\"\nbogus = 1\n").unwrap();
        let result: Result<SynthOptions> = load_config(Some(&config_path));
        assert!(matches!(result, Err(Error::Config(_))));
    }
}
