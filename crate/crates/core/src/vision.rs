//! Simulated visual system: fixed per-object feature vectors and one
//! trainable two-layer classifier per attribute concept.
//!
//! Features are a fixed random embedding of the object's true attribute
//! values plus Gaussian noise. Each (concept, value name) pair owns its own
//! embedding vector derived from the experiment seed, so vocabularies that
//! share value names share embeddings.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{GraphMemory, VisualGraph};
use crate::nnet::{Activation, Checkpoint, Mlp2, NnetError, ParamStore, Tensor2};
use crate::scene::{AttributeSchema, BBox, Scene};
use crate::seeding::{derive_seed, derive_seed_str};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("noise scale must be finite and non-negative, got {0}")]
    Noise(f64),
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub noise_sigma: f64,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied after each image.
    pub lr_decay: f64,
    /// Gradient steps per training call.
    pub steps: usize,
    pub batch_size: usize,
    /// A head trains once its concept has this many labels per value.
    pub min_labels_per_value: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            hidden: 64,
            noise_sigma: 0.1,
            lr: 1e-4,
            lr_decay: 0.99,
            steps: 50,
            batch_size: 32,
            min_labels_per_value: 5,
        }
    }
}

/// Per-(concept, value) embedding vectors for one experiment.
#[derive(Debug, Clone)]
pub struct FeatureSpace {
    dim: usize,
    embeddings: Vec<Vec<Array1<f64>>>,
}

impl FeatureSpace {
    pub fn new(schema: &AttributeSchema, experiment_seed: u64, dim: usize) -> Self {
        let scale = 1.0 / (schema.num_concepts() as f64).sqrt();
        let embeddings = schema
            .concepts
            .iter()
            .map(|c| {
                c.values
                    .iter()
                    .map(|v| {
                        let seed = derive_seed_str("feature-embedding", experiment_seed, &[&c.name, v]);
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        Array1::from_shape_fn(dim, |_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z * scale
                        })
                    })
                    .collect()
            })
            .collect();
        Self { dim, embeddings }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, concept: usize, value: usize) -> &Array1<f64> {
        &self.embeddings[concept][value]
    }

    pub fn num_concepts(&self) -> usize {
        self.embeddings.len()
    }
}

/// `K x F` features; noise for object `k` is seeded from `(scene.seed, k)`.
pub fn featurize(scene: &Scene, space: &FeatureSpace, sigma: f64) -> Result<Tensor2, VisionError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(VisionError::Noise(sigma));
    }
    let mut out = Array2::zeros((scene.len(), space.dim()));
    let noise = Normal::new(0.0, sigma).map_err(|_| VisionError::Noise(sigma))?;
    for (k, obj) in scene.objects.iter().enumerate() {
        if obj.attributes.len() != space.num_concepts() {
            return Err(VisionError::Shape(format!(
                "object {k} has {} attributes, feature space {}",
                obj.attributes.len(),
                space.num_concepts()
            )));
        }
        let mut row = out.row_mut(k);
        for (c, &v) in obj.attributes.iter().enumerate() {
            row += space.embedding(c, v);
        }
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("feature-noise", &[scene.seed, k as u64]));
            for x in row.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Labelled feature rows accumulated from committed memory slots.
#[derive(Debug, Clone, Default)]
pub struct VisionDataset {
    rows: Vec<Vec<Vec<f64>>>,
    labels: Vec<Vec<usize>>,
}

impl VisionDataset {
    pub fn new(num_concepts: usize) -> Self {
        Self {
            rows: vec![Vec::new(); num_concepts],
            labels: vec![Vec::new(); num_concepts],
        }
    }

    pub fn push(&mut self, concept: usize, features: &[f64], label: usize) {
        self.rows[concept].push(features.to_vec());
        self.labels[concept].push(label);
    }

    /// Adds every committed slot of `mem` as a training example.
    pub fn add_memory(&mut self, features: &Tensor2, mem: &GraphMemory) -> Result<(), VisionError> {
        if features.nrows() != mem.num_objects() || mem.num_concepts() != self.rows.len() {
            return Err(VisionError::Shape(format!(
                "{} feature rows for {} objects",
                features.nrows(),
                mem.num_objects()
            )));
        }
        for k in 0..mem.num_objects() {
            for a in 0..mem.num_concepts() {
                if let Some(v) = mem.committed(k, a) {
                    self.push(a, features.row(k).as_slice().expect("contiguous"), v);
                }
            }
        }
        Ok(())
    }

    pub fn count(&self, concept: usize) -> usize {
        self.labels[concept].len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(Vec::is_empty)
    }

    fn batch(&self, concept: usize, idx: &[usize]) -> (Tensor2, Vec<usize>) {
        let dim = self.rows[concept][0].len();
        let mut x = Array2::zeros((idx.len(), dim));
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&self.rows[concept][i]));
        }
        (x, idx.iter().map(|&i| self.labels[concept][i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConceptTrainReport {
    pub concept: usize,
    pub labels: usize,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Row-wise softmax of a logits matrix.
pub fn softmax_rows(logits: &Tensor2) -> Tensor2 {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor2, labels: &[usize]) -> (f64, Tensor2) {
    let mut p = softmax_rows(logits);
    let n = labels.len() as f64;
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        loss -= p[[r, y]].max(1e-300).ln();
        p[[r, y]] -= 1.0;
    }
    p /= n;
    (loss / n, p)
}

/// Per-concept classifiers `F -> H (ReLU) -> n_a` with softmax outputs.
#[derive(Debug, Clone)]
pub struct AttributeHeads {
    pub config: VisionConfig,
    cardinalities: Vec<usize>,
    store: ParamStore,
    heads: Vec<Mlp2>,
    lr: f64,
}

impl AttributeHeads {
    pub fn new(cardinalities: &[usize], config: VisionConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("vision-init", &[seed]));
        let heads = cardinalities
            .iter()
            .enumerate()
            .map(|(a, &n)| {
                Mlp2::new(
                    &mut store,
                    &format!("vision.head{a}"),
                    [config.feature_dim, config.hidden, n],
                    Activation::Relu,
                    Activation::Linear,
                    &mut rng,
                )
            })
            .collect::<Vec<Mlp2>>();
        // small output weights keep fresh predictions close to uniform
        for h in &heads {
            store.get_mut(h.l2.w).mapv_inplace(|w| w * 0.1);
        }
        let lr = config.lr;
        Self {
            config,
            cardinalities: cardinalities.to_vec(),
            store,
            heads,
            lr,
        }
    }

    /// Fresh parameters, optimizer state and learning rate drawn from `seed`.
    pub fn reset(&mut self, seed: u64) {
        *self = Self::new(&self.cardinalities.clone(), self.config.clone(), seed);
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn decay_lr(&mut self) {
        self.lr *= self.config.lr_decay;
    }

    fn logits(&self, concept: usize, x: &Tensor2) -> Result<Tensor2, VisionError> {
        Ok(self.heads[concept].forward(&self.store, x)?.0)
    }

    /// Class probabilities for every object, one `K x n_a` matrix per concept.
    pub fn predict_probs(&self, features: &Tensor2) -> Result<Vec<Tensor2>, VisionError> {
        if features.ncols() != self.config.feature_dim {
            return Err(VisionError::Shape(format!(
                "features have {} columns, heads expect {}",
                features.ncols(),
                self.config.feature_dim
            )));
        }
        (0..self.heads.len())
            .map(|a| Ok(softmax_rows(&self.logits(a, features)?)))
            .collect()
    }

    pub fn predict(&self, features: &Tensor2, locations: &[BBox]) -> Result<VisualGraph, VisionError> {
        if features.nrows() != locations.len() {
            return Err(VisionError::Shape(format!(
                "{} feature rows for {} boxes",
                features.nrows(),
                locations.len()
            )));
        }
        let per_concept = self.predict_probs(features)?;
        let mut probs = Vec::with_capacity(locations.len() * self.cardinalities.len());
        for k in 0..locations.len() {
            for p in &per_concept {
                probs.push(p.row(k).to_vec());
            }
        }
        Ok(VisualGraph {
            cardinalities: self.cardinalities.clone(),
            locations: locations.to_vec(),
            probs,
        })
    }

    /// Mean cross-entropy of head `concept` over all of its labels.
    pub fn dataset_loss(&self, data: &VisionDataset, concept: usize) -> Result<f64, VisionError> {
        let idx: Vec<usize> = (0..data.count(concept)).collect();
        if idx.is_empty() {
            return Ok(0.0);
        }
        let (x, y) = data.batch(concept, &idx);
        Ok(cross_entropy(&self.logits(concept, &x)?, &y).0)
    }

    pub fn is_trainable(&self, data: &VisionDataset, concept: usize) -> bool {
        data.count(concept) >= self.config.min_labels_per_value * self.cardinalities[concept]
    }

    /// Runs `config.steps` minibatch Adam steps on every head whose concept
    /// has enough labels. Heads below the threshold are left untouched.
    pub fn train<R: Rng>(&mut self, data: &VisionDataset, rng: &mut R) -> Result<Vec<ConceptTrainReport>, VisionError> {
        self.train_steps(data, self.config.steps, rng)
    }

    pub fn train_steps<R: Rng>(
        &mut self,
        data: &VisionDataset,
        steps: usize,
        rng: &mut R,
    ) -> Result<Vec<ConceptTrainReport>, VisionError> {
        let active: Vec<usize> = (0..self.heads.len()).filter(|&a| self.is_trainable(data, a)).collect();
        if active.is_empty() || steps == 0 {
            return Ok(Vec::new());
        }
        let before: Vec<f64> = active
            .iter()
            .map(|&a| self.dataset_loss(data, a))
            .collect::<Result<_, _>>()?;
        for _ in 0..steps {
            let mut grads = self.store.zero_grads();
            for &a in &active {
                let n = data.count(a);
                let idx: Vec<usize> = (0..self.config.batch_size.min(n)).map(|_| rng.random_range(0..n)).collect();
                let (x, y) = data.batch(a, &idx);
                let (logits, cache) = self.heads[a].forward(&self.store, &x)?;
                let (_, dlogits) = cross_entropy(&logits, &y);
                self.heads[a].backward(&self.store, &cache, &dlogits, &mut grads);
            }
            self.store.adam_step(&grads, self.lr)?;
        }
        active
            .iter()
            .zip(before)
            .map(|(&a, loss_before)| {
                Ok(ConceptTrainReport {
                    concept: a,
                    labels: data.count(a),
                    loss_before,
                    loss_after: self.dataset_loss(data, a)?,
                })
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.store.to_checkpoint("vision")
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), VisionError> {
        Ok(self.store.load_checkpoint(ckpt, "vision")?)
    }
}

/// Argmax accuracy of the heads over every slot of `scenes`.
pub fn slot_accuracy(
    heads: &AttributeHeads,
    scenes: &[Scene],
    space: &FeatureSpace,
    sigma: f64,
) -> Result<f64, VisionError> {
    let (mut correct, mut total) = (0usize, 0usize);
    for scene in scenes {
        let f = featurize(scene, space, sigma)?;
        let probs = heads.predict_probs(&f)?;
        for (k, obj) in scene.objects.iter().enumerate() {
            for (a, &truth) in obj.attributes.iter().enumerate() {
                let row = probs[a].row(k);
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                correct += usize::from(best == truth);
                total += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}
