//! MSE regression training: reverse-accumulation gradients through the
//! filter banks, Adam updates, the train/validation/test protocol, and the
//! permutation ensemble.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::brainage::CohortTable;
use crate::covariance::{estimate_sample_covariance, normalize_spectrum, CovarianceModel, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{forward_batch, ForwardCache, VnnArchitecture, VnnParameters};

/// Gradients are clipped to this global L2 norm before every update.
pub const GRADIENT_CLIP_NORM: f64 = 10.0;

/// Training hyperparameters and split fractions.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Fraction of the cohort used for gradient updates.
    pub train_fraction: f64,
    /// Fraction carved out per permutation for epoch selection.
    pub val_fraction: f64,
    /// Held-out fraction, fixed across ensemble members.
    pub test_fraction: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub ensemble_size: usize,
    /// Master seed: fixes the test split, member seeds, and initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.792,
            val_fraction: 0.108,
            test_fraction: 0.1,
            batch_size: 32,
            max_epochs: 100,
            learning_rate: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            ensemble_size: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("val_fraction", self.val_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {f}")));
            }
        }
        let total = self.train_fraction + self.val_fraction + self.test_fraction;
        if total > 1.0 + 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {total} > 1")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean squared error `(1/n) Σ (ŷ_i - y_i)²`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("mse loss".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Shape {
            expected: format!("{} targets", predictions.len()),
            found: format!("{}", targets.len()),
        });
    }
    let n = predictions.len() as f64;
    Ok(predictions.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n)
}

fn mae(predictions: &[f64], targets: &[f64]) -> f64 {
    predictions.iter().zip(targets).map(|(p, y)| (p - y).abs()).sum::<f64>()
        / predictions.len() as f64
}

/// Readout per batch column: mean over rows and channels.
pub fn batch_readouts(cache: &ForwardCache) -> Vec<f64> {
    let f_last = cache.outputs.len();
    let (m, b) = (cache.outputs[0].nrows(), cache.outputs[0].ncols());
    let scale = 1.0 / (f_last * m) as f64;
    let mut preds = vec![0.0; b];
    for channel in &cache.outputs {
        for col in 0..b {
            let mut acc = 0.0;
            for row in 0..m {
                acc += channel[(row, col)];
            }
            preds[col] += acc;
        }
    }
    for p in &mut preds {
        *p *= scale;
    }
    preds
}

/// Batched predictions for a subjects-by-features matrix.
pub fn predict(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cov: &CovarianceModel,
    features: &FeatureMatrix,
) -> Result<Vec<f64>> {
    let input = features.values().transpose();
    let cache = forward_batch(arch, params, cov, &input)?;
    Ok(batch_readouts(&cache))
}

/// Exact gradient of the mean batch MSE with respect to every tap, by
/// reverse accumulation through the forward cache. Returns the gradients
/// and the batch loss.
pub fn backward(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cov: &CovarianceModel,
    cache: &ForwardCache,
    targets: &[f64],
) -> Result<(VnnParameters, f64)> {
    let sigma = arch.nonlinearity();
    let f_last = cache.outputs.len();
    let (m, b) = (cache.outputs[0].nrows(), cache.outputs[0].ncols());
    if targets.len() != b {
        return Err(Error::Shape {
            expected: format!("{b} targets"),
            found: format!("{}", targets.len()),
        });
    }
    let preds = batch_readouts(cache);
    let loss = mse_loss(&preds, targets)?;

    // d loss / d output entry: constant per column.
    let col_grad: Vec<f64> = preds
        .iter()
        .zip(targets)
        .map(|(p, y)| 2.0 * (p - y) / (b as f64 * (f_last * m) as f64))
        .collect();
    let seed_grad = DMatrix::from_fn(m, b, |_, col| col_grad[col]);
    let mut grad_x: Vec<DMatrix<f64>> = vec![seed_grad; f_last];

    let mut grads = VnnParameters::zeros(arch);
    for layer in (0..arch.layers().len()).rev() {
        let spec = arch.layers()[layer];
        let acts = &cache.layers[layer];
        let taps = &params.layers()[layer];

        // δ_f = (dL/dx_f) ⊙ σ'(u_f)
        let deltas: Vec<DMatrix<f64>> = (0..spec.f_out)
            .map(|f| {
                grad_x[f].zip_map(&acts.preactivations[f], |g, u| g * sigma.derivative(u))
            })
            .collect();

        // Tap gradients: ⟨δ_f, C^k x_{prev}[g]⟩.
        for f in 0..spec.f_out {
            for g in 0..spec.f_in {
                for k in 0..spec.num_taps {
                    let dot = deltas[f]
                        .iter()
                        .zip(acts.hops[g][k].iter())
                        .map(|(d, h)| d * h)
                        .sum::<f64>();
                    grads.layers_mut()[layer].set(f, g, k, dot);
                }
            }
        }

        // Propagate to the previous layer: Σ_f Σ_k h_{fg}[k] C^k δ_f.
        if layer > 0 {
            let mut next: Vec<DMatrix<f64>> =
                vec![DMatrix::zeros(m, b); spec.f_in];
            for (f, delta) in deltas.iter().enumerate() {
                let mut hop = delta.clone();
                for k in 0..spec.num_taps {
                    if k > 0 {
                        hop = cov.matrix() * hop;
                    }
                    for (g, acc) in next.iter_mut().enumerate() {
                        let coef = taps.get(f, g, k);
                        acc.iter_mut().zip(hop.iter()).for_each(|(a, h)| *a += coef * h);
                    }
                }
            }
            grad_x = next;
        }
    }

    if !grads.is_finite() {
        return Err(Error::NumericOverflow("gradient".into()));
    }
    Ok((grads, loss))
}

/// Scale gradients down to the global-norm cap, if they exceed it.
pub fn clip_gradients(grads: &mut VnnParameters, max_norm: f64) {
    let norm = grads.flat_iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.flat_iter_mut() {
            *g *= scale;
        }
    }
}

/// Adam moment estimates; shapes mirror the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<f64>,
    second: Vec<f64>,
    step: usize,
}

impl AdamState {
    pub fn new(params: &VnnParameters) -> Self {
        Self { first: vec![0.0; params.flat_len()], second: vec![0.0; params.flat_len()], step: 0 }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn first_moments(&self) -> &[f64] {
        &self.first
    }
}

/// One Adam update with bias correction; deterministic given the state.
pub fn adam_step(
    params: &mut VnnParameters,
    grads: &VnnParameters,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.flat_len() != grads.flat_len() || params.flat_len() != state.first.len() {
        return Err(Error::Shape {
            expected: format!("{} parameters", params.flat_len()),
            found: format!("{} gradients", grads.flat_len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);
    for ((p, g), (m1, m2)) in params
        .flat_iter_mut()
        .zip(grads.flat_iter())
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        *m1 = config.beta1 * *m1 + (1.0 - config.beta1) * g;
        *m2 = config.beta2 * *m2 + (1.0 - config.beta2) * g * g;
        let m_hat = *m1 / bias1;
        let v_hat = *m2 / bias2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Per-model training record.
#[derive(Debug, Clone)]
pub struct TrainMetrics {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_mae: f64,
    pub val_mse: f64,
    pub test_mae: f64,
    /// Pearson correlation between test predictions and targets; NaN when
    /// the test set is too small or degenerate.
    pub test_pearson: f64,
    /// Test MAE of the intercept-only predictor (train-mean).
    pub baseline_test_mae: f64,
    /// Mean minibatch loss per epoch.
    pub loss_history: Vec<f64>,
    pub covariance_digest: String,
}

/// A trained model: selected parameters plus metrics.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: VnnParameters,
    pub metrics: TrainMetrics,
}

/// One ensemble member.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub params: VnnParameters,
    pub validation_mse: f64,
    pub permutation_seed: u64,
    pub metrics: TrainMetrics,
}

/// Models trained on permutations of the same training pool, sharing the
/// architecture and the covariance (test rows never touch it).
#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub arch: VnnArchitecture,
    pub members: Vec<EnsembleMember>,
    pub covariance_digest: String,
}

/// Deterministic cohort split shared by every ensemble member: the test
/// rows come from the master seed only.
fn split_test(n: usize, config: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::stream(config.seed, "test-split", 0);
    order.shuffle(&mut rng);
    let n_test = ((n as f64 * config.test_fraction).round() as usize).clamp(1, n - 2);
    let test: Vec<usize> = order[..n_test].to_vec();
    let mut pool: Vec<usize> = order[n_test..].to_vec();
    // Canonical order so the pool covariance is identical across members.
    pool.sort_unstable();
    (pool, test)
}

struct PreparedData {
    features: DMatrix<f64>, // m × n, possibly standardized
    targets: Vec<f64>,
    pool: Vec<usize>,
    test: Vec<usize>,
    cov: CovarianceModel,
}

fn prepare(cohort: &CohortTable, config: &TrainConfig) -> Result<PreparedData> {
    config.validate()?;
    let n = cohort.n_subjects();
    if n < 4 {
        return Err(Error::DegenerateSplit(format!("cohort of {n} subjects cannot be split")));
    }
    let (pool, test) = split_test(n, config);
    let train_rows = pool.len() - pool.len().min(val_count(pool.len(), config));
    if train_rows < 3 * config.batch_size {
        return Err(Error::DegenerateSplit(format!(
            "{train_rows} training rows < 3·batch_size = {}",
            3 * config.batch_size
        )));
    }

    let raw = cohort.features_matrix();
    let features = DMatrix::from_fn(cohort.n_features(), n, |j, i| raw.values()[(i, j)]);

    // Covariance from the non-test rows only, then spectrum-normalized.
    let pool_rows = DMatrix::from_fn(pool.len(), cohort.n_features(), |r, j| {
        features[(j, pool[r])]
    });
    let cov = normalize_spectrum(&estimate_sample_covariance(&FeatureMatrix::new(
        pool_rows,
        raw.feature_names().to_vec(),
    )?)?)?;

    let targets: Vec<f64> = cohort.subjects().iter().map(|s| s.age).collect();
    Ok(PreparedData { features, targets, pool, test, cov })
}

fn val_count(pool_len: usize, config: &TrainConfig) -> usize {
    let within = config.val_fraction / (config.train_fraction + config.val_fraction);
    ((pool_len as f64 * within).round() as usize).clamp(1, pool_len - 2)
}

fn column_submatrix(features: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(features.nrows(), cols.len(), |r, c| features[(r, cols[c])])
}

fn gather(targets: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| targets[i]).collect()
}

/// Train one model on a permutation of the training pool; the parameters at
/// the epoch of minimum validation MSE are returned.
pub fn train_model(
    cohort: &CohortTable,
    arch: &VnnArchitecture,
    config: &TrainConfig,
    permutation_seed: u64,
) -> Result<TrainedModel> {
    let data = prepare(cohort, config)?;
    train_prepared(&data, arch, config, permutation_seed)
}

/// Flip the sign of any filter whose rectifier never fires on the probe
/// inputs. Networks without bias terms can start with a channel's
/// pre-activation negative on every sample, and the zero subgradient then
/// freezes it forever; a sign flip (which leaves the symmetric uniform init
/// distribution unchanged) makes the channel trainable.
fn revive_dead_channels(
    arch: &VnnArchitecture,
    params: &mut VnnParameters,
    cov: &CovarianceModel,
    probe: &DMatrix<f64>,
) -> Result<()> {
    if arch.nonlinearity() != crate::model::Nonlinearity::Relu {
        return Ok(());
    }
    for layer in 0..arch.layers().len() {
        // Re-run the forward pass after each layer's repair so later layers
        // see the revived signals.
        let cache = forward_batch(arch, params, cov, probe)?;
        let spec = arch.layers()[layer];
        for f in 0..spec.f_out {
            let dead = cache.layers[layer].preactivations[f].iter().all(|&u| u <= 0.0);
            if dead {
                let tensor = &mut params.layers_mut()[layer];
                for g in 0..spec.f_in {
                    for k in 0..spec.num_taps {
                        let v = tensor.get(f, g, k);
                        tensor.set(f, g, k, -v);
                    }
                }
            }
        }
    }
    Ok(())
}

fn train_prepared(
    data: &PreparedData,
    arch: &VnnArchitecture,
    config: &TrainConfig,
    permutation_seed: u64,
) -> Result<TrainedModel> {
    let mut member_rng = crate::rng::stream(permutation_seed, "member", 0);
    let mut pool = data.pool.clone();
    pool.shuffle(&mut member_rng);
    let n_val = val_count(pool.len(), config);
    let val_idx: Vec<usize> = pool[..n_val].to_vec();
    let train_idx: Vec<usize> = pool[n_val..].to_vec();

    let mut params = VnnParameters::init_uniform(arch, &mut member_rng);
    let probe = column_submatrix(&data.features, &train_idx);
    revive_dead_channels(arch, &mut params, &data.cov, &probe)?;
    let mut state = AdamState::new(&params);

    let val_matrix = column_submatrix(&data.features, &val_idx);
    let val_targets = gather(&data.targets, &val_idx);

    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut loss_history = Vec::with_capacity(config.max_epochs);
    let mut shuffled = train_idx.clone();

    for epoch in 1..=config.max_epochs {
        shuffled.shuffle(&mut member_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in shuffled.chunks(config.batch_size) {
            let input = column_submatrix(&data.features, chunk);
            let targets = gather(&data.targets, chunk);
            let cache = forward_batch(arch, &params, &data.cov, &input)?;
            let (mut grads, loss) = backward(arch, &params, &data.cov, &cache, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss });
            }
            clip_gradients(&mut grads, GRADIENT_CLIP_NORM);
            adam_step(&mut params, &grads, &mut state, config)?;
            epoch_loss += loss;
            batches += 1;
        }
        epoch_loss /= batches as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, loss: epoch_loss });
        }
        loss_history.push(epoch_loss);

        let val_cache = forward_batch(arch, &params, &data.cov, &val_matrix)?;
        let val_mse = mse_loss(&batch_readouts(&val_cache), &val_targets)?;
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }

    // Evaluate the selected parameters.
    let train_matrix = column_submatrix(&data.features, &train_idx);
    let train_targets = gather(&data.targets, &train_idx);
    let train_preds =
        batch_readouts(&forward_batch(arch, &best_params, &data.cov, &train_matrix)?);
    let test_matrix = column_submatrix(&data.features, &data.test);
    let test_targets = gather(&data.targets, &data.test);
    let test_preds =
        batch_readouts(&forward_batch(arch, &best_params, &data.cov, &test_matrix)?);

    let train_mean = crate::stats::mean(&train_targets);
    let baseline: Vec<f64> = vec![train_mean; test_targets.len()];
    let test_pearson = crate::stats::pearson(&test_preds, &test_targets).unwrap_or(f64::NAN);

    Ok(TrainedModel {
        params: best_params,
        metrics: TrainMetrics {
            best_epoch,
            epochs_run: config.max_epochs,
            train_mae: mae(&train_preds, &train_targets),
            val_mse: best_val,
            test_mae: mae(&test_preds, &test_targets),
            test_pearson,
            baseline_test_mae: mae(&baseline, &test_targets),
            loss_history,
            covariance_digest: data.cov.digest(),
        },
    })
}

/// Train `ensemble_size` models over independent permutations of the
/// training pool. Members run in parallel; each sees only its own seeded
/// stream, so results do not depend on scheduling.
pub fn train_ensemble(
    cohort: &CohortTable,
    arch: &VnnArchitecture,
    config: &TrainConfig,
) -> Result<TrainedEnsemble> {
    let data = prepare(cohort, config)?;
    let seeds: Vec<u64> = (0..config.ensemble_size)
        .map(|i| crate::rng::stream(config.seed, "member-seed", i as u64).random())
        .collect();
    let members: Vec<EnsembleMember> = seeds
        .par_iter()
        .map(|&seed| {
            train_prepared(&data, arch, config, seed).map(|trained| EnsembleMember {
                validation_mse: trained.metrics.val_mse,
                permutation_seed: seed,
                metrics: trained.metrics.clone(),
                params: trained.params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedEnsemble {
        arch: arch.clone(),
        covariance_digest: data.cov.digest(),
        members,
    })
}

/// The covariance every ensemble member trains against (non-test rows of
/// the master split, spectrum-normalized).
pub fn training_covariance(cohort: &CohortTable, config: &TrainConfig) -> Result<CovarianceModel> {
    Ok(prepare(cohort, config)?.cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brainage::synthetic::{linear_task_cohort, LinearTaskConfig};
    use crate::model::{forward, Nonlinearity};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn small_cov(m: usize, seed: u64) -> CovarianceModel {
        let mut rng = crate::rng::stream(seed, "train-test", 0);
        let raw = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        normalize_spectrum(
            &CovarianceModel::from_matrix(&raw * raw.transpose() + DMatrix::identity(m, m).scale(0.3))
                .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn mse_hand_cases() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        let mut rng = crate::rng::stream(1, "train-test", 1);
        let p: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut naive = 0.0;
        for i in 0..7 {
            naive += (p[i] - y[i]) * (p[i] - y[i]);
        }
        assert_abs_diff_eq!(mse_loss(&p, &y).unwrap(), naive / 7.0, epsilon = 1e-15);
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let arch = VnnArchitecture::from_triples(&[(1, 2, 2)], Nonlinearity::Relu).unwrap();
        let mut rng = crate::rng::stream(3, "train-test", 2);
        let mut params = VnnParameters::init_uniform(&arch, &mut rng);
        let before: Vec<f64> = params.flat_iter().collect();
        let grads = VnnParameters::zeros(&arch);
        let mut state = AdamState::new(&params);
        // Prime the moments with one non-zero step so decay is observable.
        let mut primer = VnnParameters::zeros(&arch);
        for g in primer.flat_iter_mut() {
            *g = 1.0;
        }
        adam_step(&mut params, &primer, &mut state, &TrainConfig::default()).unwrap();
        let m_after_one = state.first_moments()[0];
        let snapshot: Vec<f64> = params.flat_iter().collect();
        adam_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap();
        // Moments decay toward zero, parameters still move along the decayed
        // first moment (standard Adam), monotonically shrinking per step.
        assert!(state.first_moments()[0].abs() < m_after_one.abs());
        let _ = before;
        let moved: Vec<f64> = params.flat_iter().collect();
        assert!(moved.iter().zip(&snapshot).all(|(a, b)| (a - b).abs() < 0.1));
    }

    #[test]
    fn adam_single_step_matches_hand_computation() {
        let arch = VnnArchitecture::from_triples(&[(1, 1, 2)], Nonlinearity::Identity).unwrap();
        let mut params = VnnParameters::zeros(&arch);
        let mut grads = VnnParameters::zeros(&arch);
        let g = [0.5, -2.0];
        for (slot, v) in grads.flat_iter_mut().zip(g) {
            *slot = v;
        }
        let mut state = AdamState::new(&params);
        let config = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
        adam_step(&mut params, &grads, &mut state, &config).unwrap();
        // From zero state: m̂ = g, v̂ = g², update = -lr·g/(|g|+ε).
        let got: Vec<f64> = params.flat_iter().collect();
        for (p, gi) in got.iter().zip(g) {
            let expect = -0.1 * gi / (gi.abs() + config.epsilon);
            assert_abs_diff_eq!(*p, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn adam_two_steps_match_sequential_oracle() {
        let arch = VnnArchitecture::from_triples(&[(1, 1, 1)], Nonlinearity::Identity).unwrap();
        let mut params = VnnParameters::zeros(&arch);
        let mut grads = VnnParameters::zeros(&arch);
        for slot in grads.flat_iter_mut() {
            *slot = 0.7;
        }
        let config = TrainConfig { learning_rate: 0.05, ..TrainConfig::default() };
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &config).unwrap();
        adam_step(&mut params, &grads, &mut state, &config).unwrap();

        // Hand-rolled two iterations.
        let g = 0.7;
        let (b1, b2, eps, lr) = (config.beta1, config.beta2, config.epsilon, config.learning_rate);
        let mut p = 0.0;
        let mut m = 0.0;
        let mut v = 0.0;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        let got: Vec<f64> = params.flat_iter().collect();
        assert_abs_diff_eq!(got[0], p, epsilon = 1e-15);
    }

    #[test]
    fn dead_relu_network_has_zero_gradient() {
        let arch =
            VnnArchitecture::from_triples(&[(1, 2, 2), (2, 1, 2)], Nonlinearity::Relu).unwrap();
        let params = VnnParameters::zeros(&arch);
        let cov = small_cov(4, 11);
        let input = DMatrix::from_fn(4, 3, |i, j| (i + j) as f64 - 2.0);
        let cache = forward_batch(&arch, &params, &cov, &input).unwrap();
        let (grads, _) = backward(&arch, &params, &cov, &cache, &[1.0, -1.0, 2.0]).unwrap();
        assert!(grads.flat_iter().all(|g| g == 0.0));
    }

    #[test]
    fn single_linear_layer_gradient_matches_closed_form() {
        // Identity activation, one layer, taps (h0, h1):
        // ŷ = h0·mean(x) + h1·mean(Cx); loss = (ŷ - y)², so
        // ∂loss/∂h0 = 2(ŷ-y)·mean(x), ∂loss/∂h1 = 2(ŷ-y)·mean(Cx).
        let arch = VnnArchitecture::from_triples(&[(1, 1, 2)], Nonlinearity::Identity).unwrap();
        let mut params = VnnParameters::zeros(&arch);
        params.layers_mut()[0].set(0, 0, 0, 0.4);
        params.layers_mut()[0].set(0, 0, 1, -0.3);
        let cov = small_cov(5, 13);
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64 * 0.5 - 1.0);
        let y = [2.0];
        let cache = forward_batch(&arch, &params, &cov, &x).unwrap();
        let (grads, _) = backward(&arch, &params, &cov, &cache, &y).unwrap();

        let mean_x = x.column(0).sum() / 5.0;
        let cx = cov.matrix() * x.column(0);
        let mean_cx = cx.sum() / 5.0;
        let pred = 0.4 * mean_x - 0.3 * mean_cx;
        let factor = 2.0 * (pred - y[0]);
        assert_abs_diff_eq!(grads.layers()[0].get(0, 0, 0), factor * mean_x, epsilon = 1e-12);
        assert_abs_diff_eq!(grads.layers()[0].get(0, 0, 1), factor * mean_cx, epsilon = 1e-12);
    }

    /// Central finite differences over every tap.
    fn numeric_gradient(
        arch: &VnnArchitecture,
        params: &VnnParameters,
        cov: &CovarianceModel,
        input: &DMatrix<f64>,
        targets: &[f64],
        step: f64,
    ) -> Vec<f64> {
        let loss_at = |p: &VnnParameters| -> f64 {
            let cache = forward_batch(arch, p, cov, input).unwrap();
            mse_loss(&batch_readouts(&cache), targets).unwrap()
        };
        let flat: Vec<f64> = params.flat_iter().collect();
        let mut grad = Vec::with_capacity(flat.len());
        for i in 0..flat.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            for (j, (a, b)) in plus.flat_iter_mut().zip(minus.flat_iter_mut()).enumerate() {
                if j == i {
                    *a += step;
                    *b -= step;
                }
            }
            grad.push((loss_at(&plus) - loss_at(&minus)) / (2.0 * step));
        }
        grad
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(17, "train-test", 3);
        for trial in 0..6 {
            let m = 4 + trial % 3;
            let nonlin = match trial % 3 {
                0 => Nonlinearity::Tanh,
                1 => Nonlinearity::Identity,
                _ => Nonlinearity::Relu,
            };
            let arch = VnnArchitecture::from_triples(&[(1, 3, 2), (3, 1, 2)], nonlin).unwrap();
            let params = VnnParameters::init_uniform(&arch, &mut rng);
            let cov = small_cov(m, 50 + trial as u64);
            let input = DMatrix::from_fn(m, 4, |_, _| rng.random_range(-1.0..1.0));
            let targets: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cache = forward_batch(&arch, &params, &cov, &input).unwrap();
            let (grads, _) = backward(&arch, &params, &cov, &cache, &targets).unwrap();
            let numeric = numeric_gradient(&arch, &params, &cov, &input, &targets, 1e-5);
            for (a, n) in grads.flat_iter().zip(numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(rel < 1e-4, "trial {trial}: analytic {a} vs numeric {n} (rel {rel:.2e})");
            }
        }
    }

    #[test]
    fn clipping_caps_global_norm() {
        let arch = VnnArchitecture::from_triples(&[(1, 2, 3)], Nonlinearity::Relu).unwrap();
        let mut grads = VnnParameters::zeros(&arch);
        for g in grads.flat_iter_mut() {
            *g = 100.0;
        }
        clip_gradients(&mut grads, GRADIENT_CLIP_NORM);
        let norm = grads.flat_iter().map(|g| g * g).sum::<f64>().sqrt();
        assert_abs_diff_eq!(norm, GRADIENT_CLIP_NORM, epsilon = 1e-9);
    }

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_epochs: 60,
            learning_rate: 0.05,
            ensemble_size: 1,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_targets_are_fit() {
        let cohort = linear_task_cohort(&LinearTaskConfig {
            n_subjects: 150,
            n_features: 8,
            signal_weight: 0.0,
            target_offset: 5.0,
            noise_sd: 0.0,
            fluctuation_scale: 0.05,
            seed: 71,
        })
        .unwrap();
        let arch =
            VnnArchitecture::from_triples(&[(1, 2, 2), (2, 1, 2)], Nonlinearity::Relu).unwrap();
        let trained = train_model(&cohort, &arch, &quick_config(71), 9).unwrap();
        assert!(
            trained.metrics.test_mae < 0.05 * 5.0 + 0.05,
            "test MAE {} too large for constant targets",
            trained.metrics.test_mae
        );
    }

    #[test]
    fn linear_task_beats_intercept_baseline() {
        let cohort = linear_task_cohort(&LinearTaskConfig::default()).unwrap();
        let arch =
            VnnArchitecture::from_triples(&[(1, 3, 2), (3, 1, 2)], Nonlinearity::Relu).unwrap();
        let trained = train_model(&cohort, &arch, &quick_config(5), 3).unwrap();
        assert!(
            trained.metrics.test_mae < 0.8 * trained.metrics.baseline_test_mae,
            "test MAE {} not 20% below baseline {}",
            trained.metrics.test_mae,
            trained.metrics.baseline_test_mae
        );
    }

    #[test]
    fn fixed_seed_reproduces_taps_bit_for_bit() {
        let cohort = linear_task_cohort(&LinearTaskConfig {
            n_subjects: 120,
            ..LinearTaskConfig::default()
        })
        .unwrap();
        let arch =
            VnnArchitecture::from_triples(&[(1, 2, 2), (2, 1, 2)], Nonlinearity::Relu).unwrap();
        let config = quick_config(13);
        let a = train_model(&cohort, &arch, &config, 21).unwrap();
        let b = train_model(&cohort, &arch, &config, 21).unwrap();
        let ta: Vec<f64> = a.params.flat_iter().collect();
        let tb: Vec<f64> = b.params.flat_iter().collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn test_rows_never_touch_the_covariance() {
        let mut cohort = linear_task_cohort(&LinearTaskConfig {
            n_subjects: 120,
            ..LinearTaskConfig::default()
        })
        .unwrap();
        let config = quick_config(29);
        let arch =
            VnnArchitecture::from_triples(&[(1, 2, 2), (2, 1, 2)], Nonlinearity::Relu).unwrap();
        let before = train_model(&cohort, &arch, &config, 7).unwrap();

        // Perturb exactly the test rows; the covariance digest must not move.
        let (pool, test) = split_test(cohort.n_subjects(), &config);
        for &i in &test {
            for v in cohort.subjects_mut()[i].features.iter_mut() {
                *v += 123.0;
            }
        }
        let after = train_model(&cohort, &arch, &config, 7).unwrap();
        assert_eq!(before.metrics.covariance_digest, after.metrics.covariance_digest);
        assert!(!pool.is_empty());
    }

    #[test]
    fn ensemble_of_one_reduces_to_train_model() {
        let cohort = linear_task_cohort(&LinearTaskConfig {
            n_subjects: 120,
            ..LinearTaskConfig::default()
        })
        .unwrap();
        let arch =
            VnnArchitecture::from_triples(&[(1, 2, 2), (2, 1, 2)], Nonlinearity::Relu).unwrap();
        let config = quick_config(31);
        let ensemble = train_ensemble(&cohort, &arch, &config).unwrap();
        assert_eq!(ensemble.members.len(), 1);
        let seed = ensemble.members[0].permutation_seed;
        let single = train_model(&cohort, &arch, &config, seed).unwrap();
        let ta: Vec<f64> = ensemble.members[0].params.flat_iter().collect();
        let tb: Vec<f64> = single.params.flat_iter().collect();
        assert_eq!(ta, tb);
        assert_eq!(ensemble.covariance_digest, single.metrics.covariance_digest);
    }

    #[test]
    fn ensemble_is_reproducible_and_members_beat_target_variance() {
        let cohort = linear_task_cohort(&LinearTaskConfig {
            n_subjects: 140,
            ..LinearTaskConfig::default()
        })
        .unwrap();
        // Wide enough that no member starts with every rectifier path dead.
        let arch =
            VnnArchitecture::from_triples(&[(1, 4, 2), (4, 1, 2)], Nonlinearity::Relu).unwrap();
        let config = TrainConfig { ensemble_size: 5, ..quick_config(37) };
        let e1 = train_ensemble(&cohort, &arch, &config).unwrap();
        let e2 = train_ensemble(&cohort, &arch, &config).unwrap();
        let seeds1: Vec<u64> = e1.members.iter().map(|m| m.permutation_seed).collect();
        let seeds2: Vec<u64> = e2.members.iter().map(|m| m.permutation_seed).collect();
        assert_eq!(seeds1, seeds2);

        let ages: Vec<f64> = cohort.subjects().iter().map(|s| s.age).collect();
        let target_var = crate::stats::variance(&ages);
        for member in &e1.members {
            assert!(
                member.validation_mse <= target_var,
                "member val MSE {} above target variance {target_var}",
                member.validation_mse
            );
        }
    }

    #[test]
    fn median_training_loss_decreases() {
        // Median epoch-50 loss below median epoch-1 loss across 10 seeds.
        let cohort = linear_task_cohort(&LinearTaskConfig {
            n_subjects: 120,
            ..LinearTaskConfig::default()
        })
        .unwrap();
        let arch =
            VnnArchitecture::from_triples(&[(1, 4, 2), (4, 1, 2)], Nonlinearity::Relu).unwrap();
        let mut first = Vec::new();
        let mut fiftieth = Vec::new();
        for seed in 0..10u64 {
            let config = TrainConfig {
                batch_size: 16,
                max_epochs: 50,
                learning_rate: 0.05,
                ensemble_size: 1,
                seed: 100 + seed,
                ..TrainConfig::default()
            };
            let trained = train_model(&cohort, &arch, &config, seed).unwrap();
            first.push(trained.metrics.loss_history[0]);
            fiftieth.push(trained.metrics.loss_history[49]);
        }
        let median = |xs: &mut Vec<f64>| {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs[xs.len() / 2]
        };
        assert!(median(&mut fiftieth) < median(&mut first));
    }

    #[test]
    fn forward_cache_is_required_shape() {
        let arch = VnnArchitecture::from_triples(&[(1, 1, 2)], Nonlinearity::Relu).unwrap();
        let params = VnnParameters::zeros(&arch);
        let cov = small_cov(3, 77);
        let x = nalgebra::DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let out = forward(&arch, &params, &cov, &x).unwrap();
        assert_eq!(out.nrows(), 3);
        assert_eq!(out.ncols(), 1);
    }
}
