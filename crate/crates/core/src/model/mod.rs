//! Age-conditioned encoder/decoder over embedding vectors.
//!
//! The encoder sees `[phi; t1/age_scale; t2/age_scale]` and maps it to a
//! `k`-dimensional latent code; the decoder maps the code back to `d`
//! dimensions. Every layer is fully connected with a bias and no activation,
//! so the whole model is one affine map of its conditioned input.

mod io;
mod train;

pub use io::{load_model, read_model_file, save_model, write_model_file, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    adam_step, build_pairs, gradients, loss, train, AdamState, Gradients, PairMoments, TrainConfig, TrainOutcome,
    TrainingPair, TrainingPairSet,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::vector;

pub const DEFAULT_AGE_SCALE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid layer spec: {0}")]
    InvalidLayerSpec(String),
    #[error("dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("dataset yields no genuine training pairs")]
    NoPairs,
    #[error("non-finite parameter after iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("model output has zero norm")]
    ZeroOutput,
    #[error("optimizer state does not match parameters: {0}")]
    ShapeMismatch(String),
    #[error("unsupported model file version {0}")]
    VersionMismatch(u8),
    #[error("corrupt model stream: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// `out_dim × in_dim`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Self {
        assert_eq!(weight.rows(), bias.len(), "bias length must equal output dimension");
        Self { weight, bias }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self::new(Matrix::zeros(out_dim, in_dim), vec![0.0; out_dim])
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.mul_vec(x);
        for (y, b) in y.iter_mut().zip(&self.bias) {
            *y += b;
        }
        y
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// The model starts as the identity on the feature block.
    Identity,
    /// Uniform in `±1/sqrt(fan_in)`, seeded.
    Random,
}

/// Shape and initialization of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    /// Latent width `k`; `None` means `k = d`.
    pub latent_dim: Option<usize>,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub age_scale: f64,
    pub init: InitMode,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            latent_dim: None,
            encoder_layers: 1,
            decoder_layers: 1,
            age_scale: DEFAULT_AGE_SCALE,
            init: InitMode::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgeProgressionModel {
    dim: usize,
    latent_dim: usize,
    age_scale: f64,
    encoder: Vec<LinearLayer>,
    decoder: Vec<LinearLayer>,
}

/// The composed model `phi_hat = W [phi; t1/s; t2/s] + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    /// `d × (d + 2)`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub age_scale: f64,
}

pub fn init_model(dim: usize, seed: u64, spec: &LayerSpec) -> Result<AgeProgressionModel, ModelError> {
    if dim == 0 {
        return Err(ModelError::InvalidLayerSpec("feature dimension must be at least 1".into()));
    }
    let k = spec.latent_dim.unwrap_or(dim);
    if k == 0 || spec.encoder_layers == 0 || spec.decoder_layers == 0 {
        return Err(ModelError::InvalidLayerSpec(
            "latent width and layer counts must be at least 1".into(),
        ));
    }
    if !(spec.age_scale.is_finite() && spec.age_scale > 0.0) {
        return Err(ModelError::InvalidLayerSpec(format!("age scale {} must be positive", spec.age_scale)));
    }
    if spec.init == InitMode::Identity && k < dim {
        return Err(ModelError::InvalidLayerSpec(format!(
            "identity initialization needs latent width ≥ {dim}, got {k}"
        )));
    }

    let shapes = chain_shapes(dim, k, spec.encoder_layers, spec.decoder_layers);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<LinearLayer> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(out_dim, in_dim))| match spec.init {
            InitMode::Identity => {
                let mut w = Matrix::zeros(out_dim, in_dim);
                // the first layer must not route the two age inputs forward
                let diag = if i == 0 { dim.min(out_dim) } else { out_dim.min(in_dim) };
                for j in 0..diag {
                    w[(j, j)] = 1.0;
                }
                LinearLayer::new(w, vec![0.0; out_dim])
            }
            InitMode::Random => {
                let bound = 1.0 / (in_dim as f64).sqrt();
                let w = (0..out_dim * in_dim).map(|_| rng.random_range(-bound..bound)).collect();
                let b = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
                LinearLayer::new(Matrix::from_vec(out_dim, in_dim, w), b)
            }
        })
        .collect();
    let decoder = layers.split_off(spec.encoder_layers);
    AgeProgressionModel::from_layers(dim, k, spec.age_scale, layers, decoder)
}

/// `(out, in)` for every layer: encoder `(d+2) → k → … → k`, decoder `k → … → k → d`.
pub(crate) fn chain_shapes(dim: usize, k: usize, n_enc: usize, n_dec: usize) -> Vec<(usize, usize)> {
    let mut shapes = Vec::with_capacity(n_enc + n_dec);
    for i in 0..n_enc {
        shapes.push((k, if i == 0 { dim + 2 } else { k }));
    }
    for i in 0..n_dec {
        shapes.push((if i + 1 == n_dec { dim } else { k }, k));
    }
    shapes
}

impl AgeProgressionModel {
    pub fn from_layers(
        dim: usize,
        latent_dim: usize,
        age_scale: f64,
        encoder: Vec<LinearLayer>,
        decoder: Vec<LinearLayer>,
    ) -> Result<Self, ModelError> {
        if dim == 0 || latent_dim == 0 || encoder.is_empty() || decoder.is_empty() {
            return Err(ModelError::InvalidLayerSpec("empty dimension or layer stack".into()));
        }
        if !(age_scale.is_finite() && age_scale > 0.0) {
            return Err(ModelError::InvalidLayerSpec(format!("age scale {age_scale} must be positive")));
        }
        let expected = chain_shapes(dim, latent_dim, encoder.len(), decoder.len());
        for (i, (layer, &(out_dim, in_dim))) in encoder.iter().chain(&decoder).zip(&expected).enumerate() {
            if layer.out_dim() != out_dim || layer.in_dim() != in_dim || layer.bias.len() != out_dim {
                return Err(ModelError::InvalidLayerSpec(format!(
                    "layer {i} is {}x{}, chain requires {out_dim}x{in_dim}",
                    layer.out_dim(),
                    layer.in_dim()
                )));
            }
            if !layer.is_finite() {
                return Err(ModelError::InvalidLayerSpec(format!("layer {i} has non-finite entries")));
            }
        }
        Ok(Self {
            dim,
            latent_dim,
            age_scale,
            encoder,
            decoder,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn age_scale(&self) -> f64 {
        self.age_scale
    }

    pub fn encoder(&self) -> &[LinearLayer] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[LinearLayer] {
        &self.decoder
    }

    /// Encoder then decoder layers, in evaluation order.
    pub fn layers(&self) -> impl Iterator<Item = &LinearLayer> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut LinearLayer> {
        self.encoder.iter_mut().chain(&mut self.decoder)
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(LinearLayer::is_finite)
    }

    /// The encoder input `[phi; t1/s; t2/s]`.
    pub fn condition(&self, phi: &[f64], t1: u16, t2: u16) -> Result<Vec<f64>, ModelError> {
        if phi.len() != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim,
                found: phi.len(),
            });
        }
        let mut u = Vec::with_capacity(self.dim + 2);
        u.extend_from_slice(phi);
        u.push(f64::from(t1) / self.age_scale);
        u.push(f64::from(t2) / self.age_scale);
        Ok(u)
    }

    /// Raw decoder output for `phi` captured at `t1`, progressed to `t2`.
    pub fn forward(&self, phi: &[f64], t1: u16, t2: u16) -> Result<Vec<f64>, ModelError> {
        let mut h = self.condition(phi, t1, t2)?;
        for layer in self.layers() {
            h = layer.apply(&h);
        }
        Ok(h)
    }

    /// [`forward`](Self::forward) projected onto the unit sphere, for scoring.
    pub fn forward_unit(&self, phi: &[f64], t1: u16, t2: u16) -> Result<Vec<f64>, ModelError> {
        let mut out = self.forward(phi, t1, t2)?;
        if !vector::normalize_in_place(&mut out) {
            return Err(ModelError::ZeroOutput);
        }
        Ok(out)
    }

    /// Multiplies the layer stack out into a single affine map.
    pub fn compose(&self) -> AffineMap {
        let mut layers = self.layers();
        let first = layers.next().expect("model has layers");
        let mut weight = first.weight.clone();
        let mut bias = first.bias.clone();
        for layer in layers {
            let mut b = layer.weight.mul_vec(&bias);
            for (b, lb) in b.iter_mut().zip(&layer.bias) {
                *b += lb;
            }
            weight = layer.weight.matmul(&weight);
            bias = b;
        }
        AffineMap {
            weight,
            bias,
            age_scale: self.age_scale,
        }
    }
}

impl AffineMap {
    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    /// `W_phi · phi + b`: the part of the output that does not depend on age.
    pub fn feature_part(&self, phi: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                let row = &self.weight.row(i)[..d];
                row.iter().zip(phi).map(|(w, x)| w * x).sum::<f64>() + self.bias[i]
            })
            .collect()
    }

    /// Adds the age columns to a precomputed [`feature_part`](Self::feature_part).
    pub fn add_age_part(&self, out: &mut [f64], t1: u16, t2: u16) {
        let d = self.dim();
        let a1 = f64::from(t1) / self.age_scale;
        let a2 = f64::from(t2) / self.age_scale;
        for (i, o) in out.iter_mut().enumerate() {
            *o = *o + self.weight[(i, d)] * a1 + self.weight[(i, d + 1)] * a2;
        }
    }

    pub fn apply(&self, phi: &[f64], t1: u16, t2: u16) -> Vec<f64> {
        let mut out = self.feature_part(phi);
        self.add_age_part(&mut out, t1, t2);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let mut v = v.to_vec();
        vector::normalize_exact(&mut v);
        v
    }

    #[test]
    fn identity_init_d3() {
        let m = init_model(3, 0, &LayerSpec::default()).unwrap();
        let enc = &m.encoder()[0].weight;
        assert_eq!((enc.rows(), enc.cols()), (3, 5));
        assert_eq!(
            enc.as_slice(),
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(m.decoder()[0].weight, Matrix::eye(3, 3));
        let phi = unit(&[0.2, -0.5, 0.7]);
        assert_eq!(m.forward(&phi, 5, 15).unwrap(), phi);
        assert_eq!(m.forward_unit(&phi, 5, 15).unwrap(), phi);
    }

    #[test]
    fn seed_is_irrelevant_for_identity_init() {
        let spec = LayerSpec::default();
        assert_eq!(init_model(6, 1, &spec).unwrap(), init_model(6, 99, &spec).unwrap());
    }

    #[test]
    fn deep_identity_stays_identity() {
        let spec = LayerSpec {
            latent_dim: Some(7),
            encoder_layers: 3,
            decoder_layers: 2,
            ..LayerSpec::default()
        };
        let m = init_model(4, 0, &spec).unwrap();
        let phi = unit(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.forward(&phi, 1, 90).unwrap(), phi);
    }

    #[test]
    fn random_init_is_finite_and_not_identity() {
        let spec = LayerSpec {
            init: InitMode::Random,
            ..LayerSpec::default()
        };
        let m = init_model(8, 5, &spec).unwrap();
        let phi = unit(&[1.0; 8]);
        let out = m.forward(&phi, 3, 30).unwrap();
        assert!(out.iter().all(|x| x.is_finite()));
        assert_ne!(out, phi);
        assert_ne!(m, init_model(8, 6, &spec).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let narrow = LayerSpec {
            latent_dim: Some(2),
            ..LayerSpec::default()
        };
        assert!(matches!(init_model(4, 0, &narrow), Err(ModelError::InvalidLayerSpec(_))));
        let none = LayerSpec {
            decoder_layers: 0,
            ..LayerSpec::default()
        };
        assert!(init_model(4, 0, &none).is_err());
        assert!(init_model(0, 0, &LayerSpec::default()).is_err());

        let bad_chain = AgeProgressionModel::from_layers(
            2,
            2,
            100.0,
            vec![LinearLayer::zeros(2, 3)],
            vec![LinearLayer::zeros(2, 2)],
        );
        assert!(matches!(bad_chain, Err(ModelError::InvalidLayerSpec(_))));
    }

    #[test]
    fn zero_map_passes_decoder_bias() {
        let b = vec![0.25, -0.5, 1.0];
        let m = AgeProgressionModel::from_layers(
            3,
            3,
            100.0,
            vec![LinearLayer::zeros(3, 5)],
            vec![LinearLayer::new(Matrix::zeros(3, 3), b.clone())],
        )
        .unwrap();
        assert_eq!(m.forward(&unit(&[1.0, 1.0, 0.0]), 4, 40).unwrap(), b);
        assert_eq!(m.forward(&unit(&[0.0, 0.0, 1.0]), 0, 0).unwrap(), b);
    }

    #[test]
    fn hand_built_two_dim_model() {
        let enc = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]]);
        let m = AgeProgressionModel::from_layers(
            2,
            2,
            100.0,
            vec![LinearLayer::new(enc, vec![0.0, 0.0])],
            vec![LinearLayer::new(Matrix::eye(2, 2), vec![0.0, 0.0])],
        )
        .unwrap();
        let out = m.forward(&[0.5, 0.5], 10, 20).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-15 && (out[1] - 0.6).abs() < 1e-15, "{out:?}");
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let m = init_model(3, 0, &LayerSpec::default()).unwrap();
        assert!(matches!(
            m.forward(&[1.0, 0.0], 1, 2),
            Err(ModelError::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn composed_map_matches_layered_forward() {
        let spec = LayerSpec {
            latent_dim: Some(5),
            encoder_layers: 2,
            decoder_layers: 3,
            init: InitMode::Random,
            ..LayerSpec::default()
        };
        let m = init_model(4, 17, &spec).unwrap();
        let affine = m.compose();
        let phi = unit(&[0.3, -0.1, 0.9, 0.2]);
        let a = m.forward(&phi, 7, 19).unwrap();
        let b = affine.apply(&phi, 7, 19);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_composition_is_exact() {
        let m = init_model(5, 0, &LayerSpec::default()).unwrap();
        let phi = unit(&[0.1, -0.2, 0.3, -0.4, 0.5]);
        assert_eq!(m.compose().apply(&phi, 2, 60), phi);
    }
}
