//! Multi-layer MIMO covariance neural network: forward evaluation, mean
//! readout, regional contribution vectors, parameter counting, and the
//! versioned model document.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};

/// Pointwise nonlinearity applied after each filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Tanh,
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative; the ReLU subgradient at 0 is taken as 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Nonlinearity::Identity => 1.0,
        }
    }
}

impl std::fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Identity => "identity",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Nonlinearity::Relu),
            "tanh" => Ok(Nonlinearity::Tanh),
            "identity" => Ok(Nonlinearity::Identity),
            other => Err(Error::Config(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

/// One layer of filter banks: `f_in` input channels, `f_out` output
/// channels, `num_taps` polynomial coefficients per filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub f_in: usize,
    pub f_out: usize,
    pub num_taps: usize,
}

/// The layer chain of a network. Dimension-free: nothing here depends on the
/// number of features the network will eventually process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VnnArchitecture {
    layers: Vec<LayerSpec>,
    nonlinearity: Nonlinearity,
}

impl VnnArchitecture {
    pub fn new(layers: Vec<LayerSpec>, nonlinearity: Nonlinearity) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("architecture layers".into()));
        }
        if layers[0].f_in != 1 {
            return Err(Error::Config(format!(
                "first layer must take 1 input channel, got {}",
                layers[0].f_in
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.f_in == 0 || layer.f_out == 0 || layer.num_taps == 0 {
                return Err(Error::Config(format!("layer {i} has a zero-sized dimension")));
            }
        }
        for w in layers.windows(2) {
            if w[0].f_out != w[1].f_in {
                return Err(Error::Config(format!(
                    "layer chain mismatch: {} outputs feed {} inputs",
                    w[0].f_out, w[1].f_in
                )));
            }
        }
        Ok(Self { layers, nonlinearity })
    }

    /// Convenience constructor from `(f_in, f_out, num_taps)` triples.
    pub fn from_triples(triples: &[(usize, usize, usize)], nonlinearity: Nonlinearity) -> Result<Self> {
        let layers = triples
            .iter()
            .map(|&(f_in, f_out, num_taps)| LayerSpec { f_in, f_out, num_taps })
            .collect();
        Self::new(layers, nonlinearity)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().unwrap().f_out
    }

    /// Total number of learnable taps: `Σ_ℓ f_in·f_out·num_taps`.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.f_in * l.f_out * l.num_taps).sum()
    }
}

/// The tap tensor of one layer, indexed `(f_out, f_in, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TapTensor {
    f_out: usize,
    f_in: usize,
    num_taps: usize,
    data: Vec<f64>,
}

impl TapTensor {
    fn zeros(spec: &LayerSpec) -> Self {
        Self {
            f_out: spec.f_out,
            f_in: spec.f_in,
            num_taps: spec.num_taps,
            data: vec![0.0; spec.f_out * spec.f_in * spec.num_taps],
        }
    }

    #[inline]
    fn idx(&self, f: usize, g: usize, k: usize) -> usize {
        (f * self.f_in + g) * self.num_taps + k
    }

    #[inline]
    pub fn get(&self, f: usize, g: usize, k: usize) -> f64 {
        self.data[self.idx(f, g, k)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, g: usize, k: usize, value: f64) {
        let i = self.idx(f, g, k);
        self.data[i] = value;
    }

    pub fn num_taps(&self) -> usize {
        self.num_taps
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// The full learnable state: one tap tensor per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct VnnParameters {
    layers: Vec<TapTensor>,
}

impl VnnParameters {
    pub fn zeros(arch: &VnnArchitecture) -> Self {
        Self { layers: arch.layers().iter().map(TapTensor::zeros).collect() }
    }

    /// Seeded uniform init in `[-1/√(f_in·K), +1/√(f_in·K)]` per layer.
    pub fn init_uniform<R: Rng>(arch: &VnnArchitecture, rng: &mut R) -> Self {
        let mut params = Self::zeros(arch);
        for (tensor, spec) in params.layers.iter_mut().zip(arch.layers()) {
            let bound = 1.0 / ((spec.f_in * spec.num_taps) as f64).sqrt();
            for v in tensor.data.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn layers(&self) -> &[TapTensor] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [TapTensor] {
        &mut self.layers
    }

    pub fn matches(&self, arch: &VnnArchitecture) -> bool {
        self.layers.len() == arch.layers().len()
            && self.layers.iter().zip(arch.layers()).all(|(t, s)| {
                t.f_in == s.f_in && t.f_out == s.f_out && t.num_taps == s.num_taps
            })
    }

    pub fn flat_len(&self) -> usize {
        self.layers.iter().map(|t| t.data.len()).sum()
    }

    pub fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn flat_iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.flat_iter().all(|v| v.is_finite())
    }
}

/// Per-layer forward cache kept for gradient computation: the hop signals
/// `C^k x` for every input channel and the pre-activation of every output
/// channel. Batched, so each signal is an `m×B` matrix.
pub struct LayerActivations {
    /// `hops[g][k] = C^k · input_g`, k = 0..num_taps.
    pub hops: Vec<Vec<DMatrix<f64>>>,
    /// Pre-activation of each output channel.
    pub preactivations: Vec<DMatrix<f64>>,
}

/// Forward cache over all layers plus the final output channels.
pub struct ForwardCache {
    pub layers: Vec<LayerActivations>,
    pub outputs: Vec<DMatrix<f64>>,
}

fn check_forward_inputs(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cov: &CovarianceModel,
    rows: usize,
) -> Result<()> {
    if !cov.is_normalized() {
        return Err(Error::UnnormalizedSpectrum);
    }
    if !params.matches(arch) {
        return Err(Error::Shape {
            expected: "parameters matching architecture".into(),
            found: "mismatched tap tensors".into(),
        });
    }
    if rows != cov.dim() {
        return Err(Error::Shape {
            expected: format!("signal with {} rows", cov.dim()),
            found: format!("{rows}"),
        });
    }
    Ok(())
}

/// Batched forward pass. `input` holds one column per sample; the cache it
/// returns carries everything the backward pass needs.
pub fn forward_batch(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cov: &CovarianceModel,
    input: &DMatrix<f64>,
) -> Result<ForwardCache> {
    check_forward_inputs(arch, params, cov, input.nrows())?;
    let sigma = arch.nonlinearity();
    let mut signals: Vec<DMatrix<f64>> = vec![input.clone()];
    let mut layer_caches = Vec::with_capacity(arch.layers().len());

    for (spec, tensor) in arch.layers().iter().zip(params.layers()) {
        debug_assert_eq!(signals.len(), spec.f_in);
        let mut hops: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(spec.f_in);
        for signal in &signals {
            let mut chain = Vec::with_capacity(spec.num_taps);
            chain.push(signal.clone());
            for k in 1..spec.num_taps {
                let next = cov.matrix() * &chain[k - 1];
                chain.push(next);
            }
            hops.push(chain);
        }
        let mut preactivations = Vec::with_capacity(spec.f_out);
        let mut outputs = Vec::with_capacity(spec.f_out);
        for f in 0..spec.f_out {
            let mut pre = DMatrix::zeros(input.nrows(), input.ncols());
            for g in 0..spec.f_in {
                for k in 0..spec.num_taps {
                    let coef = tensor.get(f, g, k);
                    pre.iter_mut().zip(hops[g][k].iter()).for_each(|(p, h)| *p += coef * h);
                }
            }
            let out = pre.map(|v| sigma.apply(v));
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow("layer activation".into()));
            }
            preactivations.push(pre);
            outputs.push(out);
        }
        layer_caches.push(LayerActivations { hops, preactivations });
        signals = outputs;
    }

    Ok(ForwardCache { layers: layer_caches, outputs: signals })
}

/// Forward pass for a single signal; returns the final layer as an
/// `m × F_last` matrix.
pub fn forward(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    cov: &CovarianceModel,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let input = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    let cache = forward_batch(arch, params, cov, &input)?;
    let m = x.len();
    let f_last = cache.outputs.len();
    let mut out = DMatrix::zeros(m, f_last);
    for (f, channel) in cache.outputs.iter().enumerate() {
        out.set_column(f, &channel.column(0));
    }
    Ok(out)
}

/// Per-feature mean over the output channels: `p[j] = (1/F) Σ_f out[j][f]`.
pub fn regional_contributions(output: &DMatrix<f64>) -> Result<DVector<f64>> {
    if output.nrows() == 0 || output.ncols() == 0 {
        return Err(Error::Shape { expected: "non-empty output".into(), found: "empty matrix".into() });
    }
    let f = output.ncols() as f64;
    let mut p = DVector::zeros(output.nrows());
    for j in 0..output.nrows() {
        let mut acc = 0.0;
        for c in 0..output.ncols() {
            acc += output[(j, c)];
        }
        p[j] = acc / f;
    }
    Ok(p)
}

/// Unweighted mean of the full output matrix. Computed as the mean of the
/// regional contributions so that `mean(p) == readout` holds exactly.
pub fn readout_mean(output: &DMatrix<f64>) -> Result<f64> {
    let p = regional_contributions(output)?;
    Ok(p.sum() / p.len() as f64)
}

// ---------------------------------------------------------------------------
// Model document
// ---------------------------------------------------------------------------

/// Current document format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Training provenance carried in the model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Digest of the covariance the taps were trained against.
    pub covariance_digest: String,
    pub seed: u64,
    pub epochs: usize,
    pub loss: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    nonlinearity: Nonlinearity,
    layers: Vec<LayerSpec>,
    taps: Vec<Vec<Vec<Vec<f64>>>>,
    covariance_digest: String,
    training: TrainingBlock,
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct TrainingBlock {
    seed: u64,
    epochs: usize,
    loss: f64,
}

fn document_checksum(
    version: u32,
    nonlinearity: Nonlinearity,
    layers: &[LayerSpec],
    taps: &[Vec<Vec<Vec<f64>>>],
    meta: &ModelMeta,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(version.to_le_bytes());
    hasher.update([match nonlinearity {
        Nonlinearity::Relu => 0u8,
        Nonlinearity::Tanh => 1,
        Nonlinearity::Identity => 2,
    }]);
    for l in layers {
        hasher.update((l.f_in as u64).to_le_bytes());
        hasher.update((l.f_out as u64).to_le_bytes());
        hasher.update((l.num_taps as u64).to_le_bytes());
    }
    for layer in taps {
        for filt in layer {
            for chan in filt {
                for &t in chan {
                    hasher.update(t.to_le_bytes());
                }
            }
        }
    }
    hasher.update(meta.covariance_digest.as_bytes());
    hasher.update(meta.seed.to_le_bytes());
    hasher.update((meta.epochs as u64).to_le_bytes());
    hasher.update(meta.loss.to_le_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialize a model to versioned, self-describing text (JSON). Tap values
/// survive the round trip bit for bit.
pub fn serialize_model(
    arch: &VnnArchitecture,
    params: &VnnParameters,
    meta: &ModelMeta,
) -> Result<String> {
    if !params.matches(arch) {
        return Err(Error::Shape {
            expected: "parameters matching architecture".into(),
            found: "mismatched tap tensors".into(),
        });
    }
    let taps: Vec<Vec<Vec<Vec<f64>>>> = arch
        .layers()
        .iter()
        .zip(params.layers())
        .map(|(spec, tensor)| {
            (0..spec.f_out)
                .map(|f| {
                    (0..spec.f_in)
                        .map(|g| (0..spec.num_taps).map(|k| tensor.get(f, g, k)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    let checksum = document_checksum(
        MODEL_FORMAT_VERSION,
        arch.nonlinearity(),
        arch.layers(),
        &taps,
        meta,
    );
    let doc = ModelDocument {
        format_version: MODEL_FORMAT_VERSION,
        nonlinearity: arch.nonlinearity(),
        layers: arch.layers().to_vec(),
        taps,
        covariance_digest: meta.covariance_digest.clone(),
        training: TrainingBlock { seed: meta.seed, epochs: meta.epochs, loss: meta.loss },
        checksum,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::MalformedDocument(e.to_string()))
}

/// Parse and verify a model document.
pub fn deserialize_model(text: &str) -> Result<(VnnArchitecture, VnnParameters, ModelMeta)> {
    let doc: ModelDocument =
        serde_json::from_str(text).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    if doc.format_version > MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: doc.format_version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let meta = ModelMeta {
        covariance_digest: doc.covariance_digest.clone(),
        seed: doc.training.seed,
        epochs: doc.training.epochs,
        loss: doc.training.loss,
    };
    let expected = document_checksum(
        doc.format_version,
        doc.nonlinearity,
        &doc.layers,
        &doc.taps,
        &meta,
    );
    if expected != doc.checksum {
        return Err(Error::ChecksumMismatch);
    }
    let arch = VnnArchitecture::new(doc.layers.clone(), doc.nonlinearity)?;
    if doc.taps.len() != doc.layers.len() {
        return Err(Error::MalformedDocument("tap tensor count differs from layer count".into()));
    }
    let mut params = VnnParameters::zeros(&arch);
    for (l, (spec, layer_taps)) in doc.layers.iter().zip(&doc.taps).enumerate() {
        if layer_taps.len() != spec.f_out {
            return Err(Error::MalformedDocument(format!("layer {l}: output channel count")));
        }
        for (f, filt) in layer_taps.iter().enumerate() {
            if filt.len() != spec.f_in {
                return Err(Error::MalformedDocument(format!("layer {l}: input channel count")));
            }
            for (g, chan) in filt.iter().enumerate() {
                if chan.len() != spec.num_taps {
                    return Err(Error::MalformedDocument(format!("layer {l}: tap count")));
                }
                for (k, &t) in chan.iter().enumerate() {
                    params.layers_mut()[l].set(f, g, k, t);
                }
            }
        }
    }
    Ok((arch, params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{normalize_spectrum, CovarianceModel};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn small_cov(m: usize, seed: u64) -> CovarianceModel {
        let mut rng = crate::rng::stream(seed, "model-test", 0);
        let raw = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let spd = &raw * raw.transpose() + DMatrix::identity(m, m).scale(0.3);
        normalize_spectrum(&CovarianceModel::from_matrix(spd).unwrap()).unwrap()
    }

    fn toy_arch() -> VnnArchitecture {
        VnnArchitecture::from_triples(&[(1, 2, 2), (2, 1, 2)], Nonlinearity::Relu).unwrap()
    }

    #[test]
    fn published_parameter_counts() {
        let a = VnnArchitecture::from_triples(
            &[(1, 26, 2), (26, 26, 2), (26, 1, 2)],
            Nonlinearity::Relu,
        )
        .unwrap();
        assert_eq!(a.parameter_count(), 1456);
        let b = VnnArchitecture::from_triples(
            &[(1, 27, 4), (27, 27, 2), (27, 1, 2)],
            Nonlinearity::Relu,
        )
        .unwrap();
        assert_eq!(b.parameter_count(), 1620);
        // Five-channel config with 6/10 taps and the same trailing stage.
        let c = VnnArchitecture::from_triples(
            &[(1, 5, 6), (5, 5, 10), (5, 1, 2)],
            Nonlinearity::Relu,
        )
        .unwrap();
        assert_eq!(c.parameter_count(), 290);
        let single = VnnArchitecture::from_triples(&[(1, 1, 1)], Nonlinearity::Relu).unwrap();
        assert_eq!(single.parameter_count(), 1);
    }

    #[test]
    fn chain_validation() {
        assert!(VnnArchitecture::from_triples(&[(1, 3, 2), (4, 1, 2)], Nonlinearity::Relu).is_err());
        assert!(VnnArchitecture::from_triples(&[(2, 3, 2)], Nonlinearity::Relu).is_err());
        assert!(VnnArchitecture::from_triples(&[(1, 0, 2)], Nonlinearity::Relu).is_err());
    }

    #[test]
    fn zero_taps_relu_gives_zero_output() {
        let arch = toy_arch();
        let params = VnnParameters::zeros(&arch);
        let cov = small_cov(3, 1);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let out = forward(&arch, &params, &cov, &x).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_passes_signal_through() {
        let arch =
            VnnArchitecture::from_triples(&[(1, 1, 1)], Nonlinearity::Identity).unwrap();
        let mut params = VnnParameters::zeros(&arch);
        params.layers_mut()[0].set(0, 0, 0, 1.0);
        let cov = small_cov(4, 2);
        let x = DVector::from_vec(vec![0.1, -0.7, 2.0, 1.5]);
        let out = forward(&arch, &params, &cov, &x).unwrap();
        for i in 0..4 {
            assert_eq!(out[(i, 0)], x[i]);
        }
    }

    #[test]
    fn forward_matches_scalar_reimplementation() {
        // Straight-line oracle: every filter output written out by hand with
        // explicit loops over taps and channels.
        let m = 3;
        let cov = small_cov(m, 3);
        let arch =
            VnnArchitecture::from_triples(&[(1, 2, 2), (2, 1, 2)], Nonlinearity::Tanh).unwrap();
        let mut params = VnnParameters::zeros(&arch);
        let values = [0.5, -0.3, 0.2, 0.7, -0.1, 0.4, 0.6, -0.5];
        for (slot, v) in params.flat_iter_mut().zip(values) {
            *slot = v;
        }
        let x = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let out = forward(&arch, &params, &cov, &x).unwrap();

        let c = cov.matrix();
        let t0 = &params.layers()[0];
        let cx = c * &x;
        let mut hidden = Vec::new();
        for f in 0..2 {
            let pre = x.scale(t0.get(f, 0, 0)) + cx.scale(t0.get(f, 0, 1));
            hidden.push(pre.map(|v| v.tanh()));
        }
        let t1 = &params.layers()[1];
        let mut pre = DVector::zeros(m);
        for (g, h) in hidden.iter().enumerate() {
            pre += h.scale(t1.get(0, g, 0)) + (c * h).scale(t1.get(0, g, 1));
        }
        let expect = pre.map(|v| v.tanh());
        for i in 0..m {
            assert_abs_diff_eq!(out[(i, 0)], expect[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_requires_normalized_covariance() {
        let arch = toy_arch();
        let params = VnnParameters::zeros(&arch);
        let cov = CovarianceModel::from_matrix(DMatrix::identity(3, 3).scale(2.0)).unwrap();
        let x = DVector::zeros(3);
        assert!(matches!(forward(&arch, &params, &cov, &x), Err(Error::UnnormalizedSpectrum)));
    }

    #[test]
    fn readout_and_contributions() {
        let constant = DMatrix::from_element(4, 3, 2.5);
        assert_eq!(readout_mean(&constant).unwrap(), 2.5);
        let p = regional_contributions(&constant).unwrap();
        assert!(p.iter().all(|&v| v == 2.5));

        let two = DMatrix::from_column_slice(2, 1, &[1.0, 3.0]);
        assert_eq!(readout_mean(&two).unwrap(), 2.0);

        let mut rng = crate::rng::stream(7, "model-test", 1);
        let random = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-4.0..4.0));
        let mut flat = 0.0;
        for v in random.iter() {
            flat += v;
        }
        // Flat mean agrees with the row-mean-of-means evaluation order.
        assert_abs_diff_eq!(readout_mean(&random).unwrap(), flat / 15.0, epsilon = 1e-12);
        let p = regional_contributions(&random).unwrap();
        for j in 0..5 {
            let row_mean = (random[(j, 0)] + random[(j, 1)] + random[(j, 2)]) / 3.0;
            assert_abs_diff_eq!(p[j], row_mean, epsilon = 1e-15);
        }
        // Exact identity, same arithmetic on both sides.
        assert_eq!(p.sum() / 5.0, readout_mean(&random).unwrap());

        let single = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let p = regional_contributions(&single).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn readout_of_empty_matrix_is_shape_error() {
        let empty = DMatrix::<f64>::zeros(0, 0);
        assert!(matches!(readout_mean(&empty), Err(Error::Shape { .. })));
    }

    #[test]
    fn permutation_invariance_of_readout() {
        let m = 6;
        let cov = small_cov(m, 5);
        let arch =
            VnnArchitecture::from_triples(&[(1, 3, 3), (3, 1, 2)], Nonlinearity::Relu).unwrap();
        let mut rng = crate::rng::stream(11, "model-test", 2);
        let params = VnnParameters::init_uniform(&arch, &mut rng);
        let x = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let base = readout_mean(&forward(&arch, &params, &cov, &x).unwrap()).unwrap();

        for trial in 0..10 {
            let mut perm: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let cov_p = cov.permuted(&perm).unwrap();
            let x_p = DVector::from_fn(m, |i, _| x[perm[i]]);
            let permuted = readout_mean(&forward(&arch, &params, &cov_p, &x_p).unwrap()).unwrap();
            assert!(
                (base - permuted).abs() < 1e-10,
                "trial {trial}: readout moved by {:.3e}",
                (base - permuted).abs()
            );
        }
    }

    #[test]
    fn identity_nonlinearity_is_linear_in_input() {
        let m = 5;
        let cov = small_cov(m, 8);
        let arch =
            VnnArchitecture::from_triples(&[(1, 2, 3), (2, 2, 2)], Nonlinearity::Identity).unwrap();
        let mut rng = crate::rng::stream(13, "model-test", 3);
        let params = VnnParameters::init_uniform(&arch, &mut rng);
        let x = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let fx = forward(&arch, &params, &cov, &x).unwrap();
        let fy = forward(&arch, &params, &cov, &y).unwrap();
        let fxy = forward(&arch, &params, &cov, &(&x + &y)).unwrap();
        assert!((fx + fy - fxy).norm() < 1e-10);
    }

    #[test]
    fn document_round_trip_is_bit_identical() {
        let arch = toy_arch();
        let mut rng = crate::rng::stream(17, "model-test", 4);
        let params = VnnParameters::init_uniform(&arch, &mut rng);
        let meta = ModelMeta {
            covariance_digest: "abc123".into(),
            seed: 42,
            epochs: 10,
            loss: 0.12345678901234567,
        };
        let text = serialize_model(&arch, &params, &meta).unwrap();
        let (arch2, params2, meta2) = deserialize_model(&text).unwrap();
        assert_eq!(arch, arch2);
        assert_eq!(meta, meta2);
        let a: Vec<f64> = params.flat_iter().collect();
        let b: Vec<f64> = params2.flat_iter().collect();
        assert_eq!(a, b, "taps must round-trip bit for bit");

        let cov = small_cov(3, 9);
        let x = DVector::from_vec(vec![0.2, -0.4, 1.1]);
        let out1 = forward(&arch, &params, &cov, &x).unwrap();
        let out2 = forward(&arch2, &params2, &cov, &x).unwrap();
        assert_eq!(out1, out2);
    }

    #[test]
    fn truncated_document_is_malformed() {
        let arch = toy_arch();
        let params = VnnParameters::zeros(&arch);
        let meta =
            ModelMeta { covariance_digest: "d".into(), seed: 1, epochs: 1, loss: 0.0 };
        let text = serialize_model(&arch, &params, &meta).unwrap();
        let truncated = &text[..text.len() / 2];
        assert!(matches!(deserialize_model(truncated), Err(Error::MalformedDocument(_))));
    }

    #[test]
    fn future_version_is_rejected() {
        let arch = toy_arch();
        let params = VnnParameters::zeros(&arch);
        let meta =
            ModelMeta { covariance_digest: "d".into(), seed: 1, epochs: 1, loss: 0.0 };
        let text = serialize_model(&arch, &params, &meta).unwrap();
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(
            deserialize_model(&bumped),
            Err(Error::VersionMismatch { found: 99, supported: 1 })
        ));
    }

    #[test]
    fn edited_taps_fail_the_checksum() {
        let arch = toy_arch();
        let mut rng = crate::rng::stream(19, "model-test", 5);
        let params = VnnParameters::init_uniform(&arch, &mut rng);
        let meta =
            ModelMeta { covariance_digest: "d".into(), seed: 1, epochs: 1, loss: 0.5 };
        let text = serialize_model(&arch, &params, &meta).unwrap();
        let tampered = text.replacen("\"loss\": 0.5", "\"loss\": 0.75", 1);
        assert!(matches!(deserialize_model(&tampered), Err(Error::ChecksumMismatch)));
    }
}
