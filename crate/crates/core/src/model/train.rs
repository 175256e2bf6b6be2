use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{init_model, AgeProgressionModel, LayerSpec, LinearLayer, ModelError};
use crate::linalg::Matrix;
use crate::store::{EmbeddingRecord, LongitudinalDataset};

/// A genuine pair: `source` is progressed to `target.age` and regressed onto `target`.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub source: &'a EmbeddingRecord,
    pub target: &'a EmbeddingRecord,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingPairSet<'a> {
    pub pairs: Vec<TrainingPair<'a>>,
}

impl<'a> TrainingPairSet<'a> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn as_slice(&self) -> &[TrainingPair<'a>] {
        &self.pairs
    }
}

/// Every ordered within-subject pair. Both directions are kept, so the model
/// learns regression to younger ages as well as progression.
pub fn build_pairs(ds: &LongitudinalDataset, include_same_age: bool) -> TrainingPairSet<'_> {
    let mut pairs = Vec::new();
    for (_, recs) in ds.by_subject() {
        for (i, src) in recs.iter().enumerate() {
            for (j, dst) in recs.iter().enumerate() {
                if i == j || (src.age == dst.age && !include_same_age) {
                    continue;
                }
                pairs.push(TrainingPair { source: src, target: dst });
            }
        }
    }
    TrainingPairSet { pairs }
}

fn check_batch(m: &AgeProgressionModel, batch: &[TrainingPair<'_>]) -> Result<(), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    for p in batch {
        for v in [&p.source.vector, &p.target.vector] {
            if v.len() != m.dim() {
                return Err(ModelError::DimensionMismatch {
                    expected: m.dim(),
                    found: v.len(),
                });
            }
        }
    }
    Ok(())
}

/// Mean squared Euclidean distance between progressed sources and their targets.
pub fn loss(m: &AgeProgressionModel, batch: &[TrainingPair<'_>]) -> Result<f64, ModelError> {
    check_batch(m, batch)?;
    let mut total = 0.0;
    for p in batch {
        let out = m.forward(&p.source.vector, p.source.age, p.target.age)?;
        total += out
            .iter()
            .zip(&p.target.vector)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Per-parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LinearLayer>,
}

impl Gradients {
    fn zeros_like(m: &AgeProgressionModel) -> Self {
        Self {
            layers: m.layers().map(|l| LinearLayer::zeros(l.out_dim(), l.in_dim())).collect(),
        }
    }

    /// Weight then bias of each layer, encoder first.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .into_iter()
            .flatten()
            .fold(0.0f64, |acc, g| acc.max(g.abs()))
    }
}

/// Exact gradient of [`loss`] by backpropagation through each pair.
pub fn gradients(m: &AgeProgressionModel, batch: &[TrainingPair<'_>]) -> Result<Gradients, ModelError> {
    check_batch(m, batch)?;
    let layers: Vec<&LinearLayer> = m.layers().collect();
    let mut grads = Gradients::zeros_like(m);
    let scale = 2.0 / batch.len() as f64;

    for p in batch {
        let mut acts = vec![m.condition(&p.source.vector, p.source.age, p.target.age)?];
        for layer in &layers {
            let next = layer.apply(acts.last().unwrap());
            acts.push(next);
        }
        let mut delta: Vec<f64> = acts
            .last()
            .unwrap()
            .iter()
            .zip(&p.target.vector)
            .map(|(o, y)| scale * (o - y))
            .collect();

        for (li, layer) in layers.iter().enumerate().rev() {
            let input = &acts[li];
            let g = &mut grads.layers[li];
            for (r, &dr) in delta.iter().enumerate() {
                g.bias[r] += dr;
                for (c, &x) in input.iter().enumerate() {
                    g.weight[(r, c)] += dr * x;
                }
            }
            if li > 0 {
                let w = &layer.weight;
                delta = (0..w.cols())
                    .map(|c| delta.iter().enumerate().map(|(r, &dr)| w[(r, c)] * dr).sum())
                    .collect();
            }
        }
    }
    Ok(grads)
}

/// Second-order sufficient statistics of a pair batch.
///
/// With `ũ = [phi; t1/s; t2/s; 1]` and targets `y`, keeps
/// `S = mean(ũ ũᵀ)`, `C = mean(y ũᵀ)` and `mean(‖y‖²)`. Because the model is
/// affine, loss and gradients depend on the batch only through these, which
/// makes a training step independent of the batch size.
#[derive(Debug, Clone)]
pub struct PairMoments {
    dim: usize,
    age_scale: f64,
    input_second: Matrix,
    cross: Matrix,
    target_sq: f64,
}

impl PairMoments {
    pub fn from_pairs(pairs: &[TrainingPair<'_>], dim: usize, age_scale: f64) -> Result<Self, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let m = dim + 3;
        let mut s = Matrix::zeros(m, m);
        let mut c = Matrix::zeros(dim, m);
        let mut yy = 0.0;
        let mut u = vec![0.0; m];
        for p in pairs {
            if p.source.vector.len() != dim || p.target.vector.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    found: p.source.vector.len().max(p.target.vector.len()),
                });
            }
            u[..dim].copy_from_slice(&p.source.vector);
            u[dim] = f64::from(p.source.age) / age_scale;
            u[dim + 1] = f64::from(p.target.age) / age_scale;
            u[dim + 2] = 1.0;
            for i in 0..m {
                for j in i..m {
                    s[(i, j)] += u[i] * u[j];
                }
            }
            for (i, &y) in p.target.vector.iter().enumerate() {
                for (j, &uj) in u.iter().enumerate() {
                    c[(i, j)] += y * uj;
                }
                yy += y * y;
            }
        }
        let n = pairs.len() as f64;
        for i in 0..m {
            for j in i..m {
                let v = s[(i, j)] / n;
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        c.as_mut_slice().iter_mut().for_each(|x| *x /= n);
        Ok(Self {
            dim,
            age_scale,
            input_second: s,
            cross: c,
            target_sq: yy / n,
        })
    }

    /// Affine maps `h_i = Ã_i ũ` for the input and every layer output.
    fn augmented_maps(&self, m: &AgeProgressionModel) -> Vec<Matrix> {
        let aug = self.dim + 3;
        let mut maps = Vec::with_capacity(m.layers().count() + 1);
        maps.push(Matrix::eye(self.dim + 2, aug));
        for layer in m.layers() {
            let mut next = layer.weight.matmul(maps.last().unwrap());
            for (r, b) in layer.bias.iter().enumerate() {
                next[(r, aug - 1)] += b;
            }
            maps.push(next);
        }
        maps
    }

    fn check(&self, m: &AgeProgressionModel) -> Result<(), ModelError> {
        if m.dim() != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: m.dim(),
                found: self.dim,
            });
        }
        if m.age_scale() != self.age_scale {
            return Err(ModelError::ShapeMismatch("moments built with a different age scale".into()));
        }
        Ok(())
    }

    pub fn loss(&self, m: &AgeProgressionModel) -> Result<f64, ModelError> {
        self.check(m)?;
        let maps = self.augmented_maps(m);
        Ok(self.loss_from_output_map(maps.last().unwrap()))
    }

    fn loss_from_output_map(&self, out: &Matrix) -> f64 {
        let residual = out.matmul(&self.input_second);
        let quad: f64 = out
            .as_slice()
            .iter()
            .zip(residual.as_slice().iter().zip(self.cross.as_slice()))
            .map(|(a, (r, c))| a * (r - 2.0 * c))
            .sum();
        (quad + self.target_sq).max(0.0)
    }

    pub fn loss_and_gradients(&self, m: &AgeProgressionModel) -> Result<(f64, Gradients), ModelError> {
        self.check(m)?;
        let maps = self.augmented_maps(m);
        let out = maps.last().unwrap();
        let loss = self.loss_from_output_map(out);

        // G = mean(2 r ũᵀ) = 2 (Ã S − C)
        let mut g = out.matmul(&self.input_second);
        for (x, c) in g.as_mut_slice().iter_mut().zip(self.cross.as_slice()) {
            *x = 2.0 * (*x - c);
        }
        let layers: Vec<&LinearLayer> = m.layers().collect();
        let mut grads = Gradients::zeros_like(m);
        let last_col = self.dim + 2;
        for li in (0..layers.len()).rev() {
            grads.layers[li].weight = g.matmul_t(&maps[li]);
            for r in 0..g.rows() {
                grads.layers[li].bias[r] = g[(r, last_col)];
            }
            if li > 0 {
                g = layers[li].weight.t_matmul(&g);
            }
        }
        Ok((loss, grads))
    }
}

/// Adam with bias correction over any list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize], learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(m: &AgeProgressionModel, cfg: &TrainConfig) -> Self {
        let shapes: Vec<usize> = m
            .layers()
            .flat_map(|l| [l.weight.as_slice().len(), l.bias.len()])
            .collect();
        Self::new(&shapes, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), ModelError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} parameter groups, {} gradient groups, state has {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[i].len() {
                return Err(ModelError::ShapeMismatch(format!("group {i} length differs")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// One Adam update of every model parameter.
pub fn adam_step(m: &mut AgeProgressionModel, grads: &Gradients, state: &mut AdamState) -> Result<(), ModelError> {
    if grads.layers.len() != m.layers().count() {
        return Err(ModelError::ShapeMismatch("gradient layer count differs from model".into()));
    }
    let mut params: Vec<&mut [f64]> = m
        .layers_mut()
        .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
        .collect();
    state.update(&mut params, &grads.slices())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Pair sets up to this size train full-batch.
    pub full_batch_limit: usize,
    /// Mini-batch size above `full_batch_limit`.
    pub batch_size: usize,
    pub seed: u64,
    pub include_same_age: bool,
    pub layers: LayerSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 0.1,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
            full_batch_limit: 4096,
            batch_size: 256,
            seed: 0,
            include_same_age: false,
            layers: LayerSpec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AgeProgressionModel,
    /// Loss over the full pair set after each step; entry 0 is the initial model.
    pub loss_history: Vec<f64>,
    pub pair_count: usize,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history holds the initial loss")
    }
}

pub fn train(ds: &LongitudinalDataset, cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    let pairs = build_pairs(ds, cfg.include_same_age);
    if pairs.is_empty() {
        return Err(ModelError::NoPairs);
    }
    let mut model = init_model(ds.dim(), cfg.seed, &cfg.layers)?;
    let full = PairMoments::from_pairs(pairs.as_slice(), ds.dim(), model.age_scale())?;
    let mut adam = AdamState::for_model(&model, cfg);

    let minibatch = pairs.len() > cfg.full_batch_limit;
    let batch_size = cfg.batch_size.clamp(1, pairs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();

    let mut history = Vec::with_capacity(cfg.iterations + 1);
    history.push(full.loss(&model)?);
    for iteration in 1..=cfg.iterations {
        let grads = if minibatch {
            if cursor + batch_size > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let batch: Vec<TrainingPair<'_>> = order[cursor..cursor + batch_size]
                .iter()
                .map(|&i| pairs.pairs[i])
                .collect();
            cursor += batch_size;
            PairMoments::from_pairs(&batch, ds.dim(), model.age_scale())?
                .loss_and_gradients(&model)?
                .1
        } else {
            full.loss_and_gradients(&model)?.1
        };
        adam_step(&mut model, &grads, &mut adam)?;
        if !model.is_finite() {
            return Err(ModelError::NonFinite { iteration });
        }
        history.push(full.loss(&model)?);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
        pair_count: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitMode;
    use crate::vector;
    use rand::Rng;

    fn unit_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        vector::normalize_exact(&mut v);
        v
    }

    fn ds_from(recs: Vec<EmbeddingRecord>) -> LongitudinalDataset {
        let d = recs[0].vector.len();
        LongitudinalDataset::from_records(d, recs).unwrap()
    }

    #[test]
    fn pairs_both_directions() {
        let ds = ds_from(vec![
            EmbeddingRecord::new("a", 5, 0, vec![1.0, 0.0]),
            EmbeddingRecord::new("a", 11, 0, vec![0.0, 1.0]),
        ]);
        let pairs = build_pairs(&ds, false);
        let ages: Vec<(u16, u16)> = pairs.pairs.iter().map(|p| (p.source.age, p.target.age)).collect();
        assert_eq!(ages, vec![(5, 11), (11, 5)]);
    }

    #[test]
    fn single_record_subjects_have_no_pairs() {
        let ds = ds_from(vec![
            EmbeddingRecord::new("a", 5, 0, vec![1.0]),
            EmbeddingRecord::new("b", 6, 0, vec![1.0]),
        ]);
        assert!(build_pairs(&ds, true).is_empty());
    }

    #[test]
    fn pair_count_is_n_times_n_minus_one() {
        let recs = [3u16, 5, 12, 13]
            .iter()
            .map(|&a| EmbeddingRecord::new("s", a, 0, vec![1.0, a as f64]))
            .collect();
        let ds = ds_from(recs);
        let n = 4;
        let pairs = build_pairs(&ds, false);
        assert_eq!(pairs.len(), n * (n - 1));
        assert!(pairs.pairs.iter().all(|p| p.source.subject_id == p.target.subject_id));
    }

    #[test]
    fn same_age_pairs_only_when_flagged() {
        let ds = ds_from(vec![
            EmbeddingRecord::new("a", 5, 0, vec![1.0, 0.0]),
            EmbeddingRecord::new("a", 5, 1, vec![0.0, 1.0]),
            EmbeddingRecord::new("a", 9, 0, vec![1.0, 1.0]),
        ]);
        assert_eq!(build_pairs(&ds, false).len(), 4);
        assert_eq!(build_pairs(&ds, true).len(), 6);
    }

    #[test]
    fn loss_definition_cases() {
        let m = init_model(2, 0, &LayerSpec::default()).unwrap();
        let a = EmbeddingRecord::new("s", 4, 0, vec![1.0, 0.0]);
        let b = EmbeddingRecord::new("s", 9, 0, vec![1.0, 0.0]);
        assert_eq!(loss(&m, &[TrainingPair { source: &a, target: &b }]).unwrap(), 0.0);

        // ‖(1,0) − (0.5, 0.5)‖² = 0.5
        let c = EmbeddingRecord::new("s", 9, 0, vec![0.5, 0.5]);
        assert_eq!(loss(&m, &[TrainingPair { source: &a, target: &c }]).unwrap(), 0.5);
        assert!(matches!(loss(&m, &[]), Err(ModelError::EmptyBatch)));
        assert!(matches!(gradients(&m, &[]), Err(ModelError::EmptyBatch)));
    }

    #[test]
    fn loss_matches_elementwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = LayerSpec {
            init: InitMode::Random,
            ..LayerSpec::default()
        };
        let m = init_model(4, 9, &spec).unwrap();
        let recs: Vec<EmbeddingRecord> = (0..6)
            .map(|i| EmbeddingRecord::new("s", 2 * i as u16 + 1, 0, unit_vec(&mut rng, 4)))
            .collect();
        let batch: Vec<TrainingPair<'_>> = (0..3)
            .map(|i| TrainingPair {
                source: &recs[2 * i],
                target: &recs[2 * i + 1],
            })
            .collect();

        let mut expected = 0.0;
        for p in &batch {
            // explicit triple loops, no helpers from the model
            let mut u = p.source.vector.clone();
            u.push(p.source.age as f64 / 100.0);
            u.push(p.target.age as f64 / 100.0);
            let enc = &m.encoder()[0];
            let dec = &m.decoder()[0];
            let mut z = vec![0.0; 4];
            for r in 0..4 {
                z[r] = enc.bias[r];
                for c in 0..6 {
                    z[r] += enc.weight[(r, c)] * u[c];
                }
            }
            for r in 0..4 {
                let mut o = dec.bias[r];
                for c in 0..4 {
                    o += dec.weight[(r, c)] * z[c];
                }
                expected += (o - p.target.vector[r]).powi(2);
            }
        }
        expected /= 3.0;
        assert!((loss(&m, &batch).unwrap() - expected).abs() < 1e-12);
        let moments = PairMoments::from_pairs(&batch, 4, 100.0).unwrap();
        assert!((moments.loss(&m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let m = init_model(3, 0, &LayerSpec::default()).unwrap();
        let a = EmbeddingRecord::new("s", 4, 0, vec![0.6, 0.0, 0.8]);
        let b = EmbeddingRecord::new("s", 7, 0, vec![0.6, 0.0, 0.8]);
        let g = gradients(&m, &[TrainingPair { source: &a, target: &b }]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn decoder_bias_gradient_is_mean_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = LayerSpec {
            init: InitMode::Random,
            ..LayerSpec::default()
        };
        let m = init_model(3, 2, &spec).unwrap();
        let recs: Vec<EmbeddingRecord> = (0..4)
            .map(|i| EmbeddingRecord::new("s", i as u16 * 3, 0, unit_vec(&mut rng, 3)))
            .collect();
        let batch = [
            TrainingPair {
                source: &recs[0],
                target: &recs[1],
            },
            TrainingPair {
                source: &recs[2],
                target: &recs[3],
            },
        ];
        let g = gradients(&m, &batch).unwrap();
        let mut expected = [0.0; 3];
        for p in &batch {
            let out = m.forward(&p.source.vector, p.source.age, p.target.age).unwrap();
            for i in 0..3 {
                expected[i] += (2.0 / 2.0) * (out[i] - p.target.vector[i]);
            }
        }
        let bias = &g.layers[1].bias;
        for i in 0..3 {
            assert!((bias[i] - expected[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn moment_gradients_agree_with_backprop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = LayerSpec {
            latent_dim: Some(7),
            encoder_layers: 2,
            decoder_layers: 2,
            init: InitMode::Random,
            ..LayerSpec::default()
        };
        let m = init_model(5, 4, &spec).unwrap();
        let recs: Vec<EmbeddingRecord> = (0..10)
            .map(|i| EmbeddingRecord::new("s", (i * 7 % 40) as u16, 0, unit_vec(&mut rng, 5)))
            .collect();
        let batch: Vec<TrainingPair<'_>> = (0..9)
            .map(|i| TrainingPair {
                source: &recs[i],
                target: &recs[i + 1],
            })
            .collect();
        let direct = gradients(&m, &batch).unwrap();
        let (l, via_moments) = PairMoments::from_pairs(&batch, 5, 100.0)
            .unwrap()
            .loss_and_gradients(&m)
            .unwrap();
        assert!((l - loss(&m, &batch).unwrap()).abs() < 1e-12);
        for (a, b) in direct.slices().iter().zip(via_moments.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut state = AdamState::new(&[2], 0.1, 0.5, 0.9, 1e-8);
        let mut p = [0.3, -0.7];
        state.update(&mut [&mut p[..]], &[&[0.0, 0.0][..]]).unwrap();
        assert_eq!(p, [0.3, -0.7]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        let mut state = AdamState::new(&[1], 0.1, 0.5, 0.9, 1e-8);
        let mut theta = [0.0];
        state.update(&mut [&mut theta[..]], &[&[1.0][..]]).unwrap();
        // m_hat = 0.5/0.5 = 1, v_hat = 0.1/0.1 = 1
        assert!((theta[0] - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!(state.second_moment()[0][0] >= 0.0);
    }

    #[test]
    fn adam_descends_on_square() {
        let mut state = AdamState::new(&[1], 0.1, 0.5, 0.9, 1e-8);
        let mut theta = [1.0f64];
        let mut prev = theta[0].abs();
        for _ in 0..10 {
            let g = 2.0 * theta[0];
            state.update(&mut [&mut theta[..]], &[&[g][..]]).unwrap();
            assert!(theta[0].abs() < prev);
            prev = theta[0].abs();
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut state = AdamState::new(&[2], 0.1, 0.5, 0.9, 1e-8);
        let mut p = [0.0; 3];
        assert!(matches!(
            state.update(&mut [&mut p[..]], &[&[0.0; 3][..]]),
            Err(ModelError::ShapeMismatch(_))
        ));
        let mut model = init_model(2, 0, &LayerSpec::default()).unwrap();
        let other = init_model(3, 0, &LayerSpec::default()).unwrap();
        let grads = Gradients::zeros_like(&other);
        let mut st = AdamState::for_model(&model, &TrainConfig::default());
        assert!(adam_step(&mut model, &grads, &mut st).is_err());
    }

    #[test]
    fn age_independent_subjects_stay_at_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut recs = Vec::new();
        for s in 0..5 {
            let v = unit_vec(&mut rng, 4);
            for age in [3u16, 8, 14] {
                recs.push(EmbeddingRecord::new(format!("s{s}"), age, 0, v.clone()));
            }
        }
        let out = train(&ds_from(recs), &TrainConfig::default()).unwrap();
        // the gradient is exactly zero; the moment-form loss carries only summation rounding
        assert_eq!(out.model, init_model(4, 0, &LayerSpec::default()).unwrap());
        assert!(out.loss_history.iter().all(|&l| l < 1e-15), "{:?}", &out.loss_history[..5]);
    }

    #[test]
    fn no_pairs_is_an_error() {
        let ds = ds_from(vec![EmbeddingRecord::new("a", 5, 0, vec![1.0])]);
        assert!(matches!(train(&ds, &TrainConfig::default()), Err(ModelError::NoPairs)));
    }

    #[test]
    fn zero_iterations_returns_identity_model() {
        let ds = ds_from(vec![
            EmbeddingRecord::new("a", 5, 0, vec![1.0, 0.0]),
            EmbeddingRecord::new("a", 9, 0, vec![0.0, 1.0]),
        ]);
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let out = train(&ds, &cfg).unwrap();
        assert_eq!(out.model, init_model(2, 0, &LayerSpec::default()).unwrap());
        assert_eq!(out.loss_history.len(), 1);
    }
}
