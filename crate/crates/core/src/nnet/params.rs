use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnetError, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Named parameter matrices with Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2>,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2) -> ParamId {
        let id = ParamId(self.values.len());
        self.names.push(name.into());
        self.m.push(Array2::zeros(value.raw_dim()));
        self.v.push(Array2::zeros(value.raw_dim()));
        self.values.push(value);
        id
    }

    /// Glorot-uniform matrix of shape `rows x cols`.
    pub fn add_glorot<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            tensors: self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect(),
        }
    }

    /// Clears the moment accumulators and step counter.
    pub fn reset_optimizer(&mut self) {
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.fill(0.0);
        }
        self.step = 0;
    }

    /// One Adam update with bias correction.
    pub fn adam_step(&mut self, grads: &Grads, lr: f64) -> Result<(), NnetError> {
        if grads.tensors.len() != self.values.len() {
            return Err(NnetError::Shape(format!(
                "{} gradients for {} parameters",
                grads.tensors.len(),
                self.values.len()
            )));
        }
        for (i, g) in grads.tensors.iter().enumerate() {
            if g.raw_dim() != self.values[i].raw_dim() {
                return Err(NnetError::Shape(format!("gradient shape for {}", self.names[i])));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NnetError::NonFinite(format!("gradient of {}", self.names[i])));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, g) in grads.tensors.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let w = &mut self.values[i];
            ndarray::Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *w -= lr * mh / (vh.sqrt() + ADAM_EPS);
            });
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, kind: &str) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: kind.to_string(),
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, v)| NamedParam {
                    name: n.clone(),
                    shape: [v.nrows(), v.ncols()],
                    data: v.iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Overwrites values from a checkpoint with identical names and shapes.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint, kind: &str) -> Result<(), NnetError> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.kind != kind {
            return Err(NnetError::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT}/{kind}, found {}/{}",
                ckpt.format, ckpt.kind
            )));
        }
        if ckpt.params.len() != self.values.len() {
            return Err(NnetError::Checkpoint(format!(
                "{} tensors in file, {} expected",
                ckpt.params.len(),
                self.values.len()
            )));
        }
        for (i, p) in ckpt.params.iter().enumerate() {
            if p.name != self.names[i] || p.shape != [self.values[i].nrows(), self.values[i].ncols()] {
                return Err(NnetError::Checkpoint(format!("tensor {} ({}) does not match", i, p.name)));
            }
            self.values[i] = Array2::from_shape_vec((p.shape[0], p.shape[1]), p.data.clone())
                .map_err(|e| NnetError::Checkpoint(e.to_string()))?;
        }
        self.reset_optimizer();
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "curio-params-v1";

/// Structured-text parameter file: a header plus named row-major tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub kind: String,
    pub params: Vec<NamedParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Tensor2>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.tensors[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|x| x * s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales to global norm `max_norm` if larger; returns the pre-clip norm.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_fresh_params() {
        let mut ps = ParamStore::new();
        let id = ps.add("w", array![[1.0, -2.0], [0.5, 3.0]]);
        let before = ps.get(id).clone();
        let g = ps.zero_grads();
        for _ in 0..5 {
            ps.adam_step(&g, 1e-2).unwrap();
        }
        assert_eq!(ps.get(id), &before);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        // f(w) = (w - 3)^2 starting at w = 0
        let mut ps = ParamStore::new();
        let id = ps.add("w", array![[0.0]]);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let w = ps.get(id)[[0, 0]];
            losses.push((w - 3.0).powi(2));
            let mut g = ps.zero_grads();
            g.get_mut(id)[[0, 0]] = 2.0 * (w - 3.0);
            ps.adam_step(&g, 0.01).unwrap();
        }
        for t in 10..199 {
            assert!(losses[t + 1] < losses[t], "step {t}: {} -> {}", losses[t], losses[t + 1]);
        }
    }

    #[test]
    fn clipping_and_checkpoints() {
        let mut ps = ParamStore::new();
        let id = ps.add("w", array![[1.0, 2.0]]);
        let mut g = ps.zero_grads();
        g.get_mut(id).assign(&array![[30.0, 40.0]]);
        assert_eq!(g.clip_norm(5.0), 50.0);
        assert!((g.norm() - 5.0).abs() < 1e-12);
        let ck = ps.to_checkpoint("test");
        let mut other = ParamStore::new();
        other.add("w", array![[0.0, 0.0]]);
        other.load_checkpoint(&ck, "test").unwrap();
        assert_eq!(other.get(id), ps.get(id));
        assert!(other.load_checkpoint(&ck, "vision").is_err());
        assert!(ps.adam_step(&Grads { tensors: vec![] }, 1e-3).is_err());
    }
}
