//! Command-line surface over the library: synthesize cohorts, train and
//! apply models, run the stability/transferability sweeps, compare graphon
//! realizations, and run the brain-age pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use covnn::commands::{self, BrainAgeOptions, CutDistOptions, PredictOptions, StabilitySweepOptions, SynthOptions, TrainOptions, TransferSweepOptions};
use covnn::io::resolve_out_dir;

#[derive(Parser)]
#[command(name = "covnn", version, about = "covariance neural networks: training, transfer, and brain-age experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Output directory (overrides COVNN_OUT_DIR; defaults to ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML config file for this command; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort from a graphon preset.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Graphon preset: constant | cosine<N> | linear.
        #[arg(long)]
        graphon: Option<String>,
        /// Number of features (regions).
        #[arg(long)]
        m: Option<usize>,
        /// Number of healthy subjects.
        #[arg(long)]
        n: Option<usize>,
        /// Number of disease subjects (0 for a healthy-only cohort).
        #[arg(long)]
        disease: Option<usize>,
        /// Number of regions carrying the planted effect.
        #[arg(long)]
        planted_regions: Option<usize>,
        /// Planted shift in pooled-SD multiples.
        #[arg(long)]
        shift: Option<f64>,
        /// Covariance eigenvector shaping the planted profile.
        #[arg(long)]
        eigenvector: Option<usize>,
    },
    /// Train a permutation ensemble of models.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        phenotype: Option<PathBuf>,
        /// Layer chain, e.g. 1x8x3,8x8x3,8x1x2.
        #[arg(long)]
        arch: Option<String>,
        /// relu | tanh | identity.
        #[arg(long)]
        nonlinearity: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Number of ensemble members (training-set permutations).
        #[arg(long)]
        ensemble: Option<usize>,
        /// Standardize feature columns before covariance estimation.
        #[arg(long)]
        standardize: bool,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        val_fraction: Option<f64>,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Predict with a saved model.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Optional phenotype file for accuracy reporting.
        #[arg(long)]
        phenotype: Option<PathBuf>,
        /// Reuse a stored training covariance (digest-checked).
        #[arg(long)]
        covariance: Option<PathBuf>,
    },
    /// Apply a model to a dataset of different dimensionality.
    Transfer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        phenotype: Option<PathBuf>,
    },
    /// Sweep the sample count behind the covariance estimate.
    SweepStability {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        graphon: Option<String>,
        #[arg(long)]
        m: Option<usize>,
        /// Comma-separated sample counts, e.g. 100,400,1600,6400.
        #[arg(long)]
        samples: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        arch: Option<String>,
    },
    /// Sweep graphon resolutions with fixed taps.
    SweepTransfer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        graphon: Option<String>,
        /// Comma-separated resolutions, e.g. 32,64,128,256.
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        signal_modes: Option<u32>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        arch: Option<String>,
    },
    /// Cut-distance series between graphon realizations.
    Cutdist {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        graphon: Option<String>,
        #[arg(long)]
        sizes: Option<String>,
        /// Second graphon preset for a cross-family comparison.
        #[arg(long)]
        cross: Option<String>,
    },
    /// Regional residuals, robustness counts, and delta-age reports.
    Brainage {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        phenotype: Option<PathBuf>,
        /// A .model file or a directory of them.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Describe a saved model document.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn run() -> covnn::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { common, graphon, m, n, disease, planted_regions, shift, eigenvector } => {
            let file: SynthOptions = commands::load_config(common.config.as_deref())?;
            let flags = SynthOptions {
                graphon,
                m,
                n,
                disease,
                planted_regions,
                shift,
                eigenvector,
                seed: common.seed,
            };
            commands::run_synth(&file.merge(flags), &resolve_out_dir(common.out.as_deref()))
        }
        Command::Train {
            common,
            features,
            phenotype,
            arch,
            nonlinearity,
            epochs,
            batch,
            learning_rate,
            ensemble,
            standardize,
            train_fraction,
            val_fraction,
            test_fraction,
        } => {
            let file: TrainOptions = commands::load_config(common.config.as_deref())?;
            let flags = TrainOptions {
                features,
                phenotype,
                arch,
                nonlinearity,
                epochs,
                batch,
                learning_rate,
                ensemble,
                seed: common.seed,
                standardize: if standardize { Some(true) } else { None },
                train_fraction,
                val_fraction,
                test_fraction,
            };
            commands::run_train(&file.merge(flags), &resolve_out_dir(common.out.as_deref()))
        }
        Command::Predict { common, model, features, phenotype, covariance } => {
            let opts = PredictOptions {
                model: Some(model),
                features: Some(features),
                phenotype,
                covariance,
            };
            commands::run_predict(&opts, &resolve_out_dir(common.out.as_deref()))
        }
        Command::Transfer { common, model, features, phenotype } => {
            let opts = PredictOptions {
                model: Some(model),
                features: Some(features),
                phenotype,
                covariance: None,
            };
            commands::run_transfer(&opts, &resolve_out_dir(common.out.as_deref()))
        }
        Command::SweepStability { common, graphon, m, samples, trials, model, arch } => {
            let file: StabilitySweepOptions = commands::load_config(common.config.as_deref())?;
            let flags = StabilitySweepOptions {
                graphon,
                m,
                samples,
                trials,
                seed: common.seed,
                model,
                arch,
            };
            commands::run_sweep_stability(
                &file.merge(flags),
                &resolve_out_dir(common.out.as_deref()),
            )
        }
        Command::SweepTransfer { common, graphon, sizes, signal_modes, model, arch } => {
            let file: TransferSweepOptions = commands::load_config(common.config.as_deref())?;
            let flags = TransferSweepOptions {
                graphon,
                sizes,
                seed: common.seed,
                signal_modes,
                model,
                arch,
            };
            commands::run_sweep_transfer(
                &file.merge(flags),
                &resolve_out_dir(common.out.as_deref()),
            )
        }
        Command::Cutdist { common, graphon, sizes, cross } => {
            let file: CutDistOptions = commands::load_config(common.config.as_deref())?;
            let flags = CutDistOptions { graphon, sizes, cross };
            commands::run_cutdist(&file.merge(flags), &resolve_out_dir(common.out.as_deref()))
        }
        Command::Brainage { common, features, phenotype, models } => {
            let file: BrainAgeOptions = commands::load_config(common.config.as_deref())?;
            let flags = BrainAgeOptions { features, phenotype, models };
            commands::run_brainage(&file.merge(flags), &resolve_out_dir(common.out.as_deref()))
        }
        Command::Inspect { model } => {
            println!("{}", commands::run_inspect(&model)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
