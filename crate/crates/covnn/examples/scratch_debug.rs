use covnn::brainage::synthetic::{linear_task_cohort, LinearTaskConfig};
use covnn::graphon::{GraphonSignal, GraphonSpec};
use covnn::model::{Nonlinearity, VnnArchitecture};
use covnn::training::{train_model, TrainConfig};
use covnn::transfer::{stability_sweep, transfer_sweep};
use std::time::Instant;

fn main() {
    // Criterion 4 scale: stability sweep at m=40, n in {100..6400}, 20 trials.
    let t0 = Instant::now();
    let spec = GraphonSpec::preset("cosine2").unwrap();
    let arch =
        VnnArchitecture::from_triples(&[(1, 4, 2), (4, 4, 2), (4, 1, 2)], Nonlinearity::Relu)
            .unwrap();
    let mut rng = covnn::rng::stream(3, "probe", 0);
    let params = covnn::model::VnnParameters::init_uniform(&arch, &mut rng);
    let sweep =
        stability_sweep(&spec, 40, &arch, &params, &[100, 400, 1600, 6400], 20, 7).unwrap();
    println!(
        "stability: slope {:.3} medians {:?} ({:.1?})",
        sweep.fitted_slope,
        sweep.report.points.iter().map(|p| (p.median * 1e4).round() / 1e4).collect::<Vec<_>>(),
        t0.elapsed()
    );

    // Criterion 5 scale: train at m=32 on a graphon cohort, sweep {32,64,128,256}.
    let t1 = Instant::now();
    let cohort = linear_task_cohort(&LinearTaskConfig {
        n_subjects: 300,
        n_features: 32,
        ..LinearTaskConfig::default()
    })
    .unwrap();
    let train_config = TrainConfig {
        batch_size: 32,
        max_epochs: 60,
        learning_rate: 0.05,
        ensemble_size: 1,
        seed: 9,
        ..TrainConfig::default()
    };
    let trained = train_model(&cohort, &arch, &train_config, 4).unwrap();
    println!(
        "trained at m=32: test MAE {:.3} baseline {:.3} ({:.1?})",
        trained.metrics.test_mae,
        trained.metrics.baseline_test_mae,
        t1.elapsed()
    );

    let t2 = Instant::now();
    let signal =
        GraphonSignal::random_smooth(3, 1.0, &mut covnn::rng::stream(5, "probe-signal", 0));
    let sweep =
        transfer_sweep(&spec, &signal, &arch, &trained.params, &[32, 64, 128, 256]).unwrap();
    println!("transfer: slope {:.3} ({:.1?})", sweep.fitted_slope, t2.elapsed());
    for (k, pair) in sweep.pair_output_distances.iter().enumerate() {
        println!(
            "  pair {k}: distances {:?} readout gap {:.5}",
            pair.iter().map(|d| (d * 1e4).round() / 1e4).collect::<Vec<_>>(),
            sweep.readout_gaps[k]
        );
    }
}
