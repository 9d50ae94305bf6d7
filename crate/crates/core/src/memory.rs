//! The agent's graph memory: one probability simplex per (object, concept)
//! slot, updated bottom-up from the visual system and top-down from oracle
//! answers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qdsl::OracleAnswer;
use crate::scene::{AttributeSchema, BBox, Scene};

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("slot ({object}, {concept}) out of range")]
    OutOfRange { object: usize, concept: usize },
    #[error("image index {i} outside 1..={n}")]
    ImageIndex { i: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Unset,
    Vision,
    Oracle,
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

fn one_hot(n: usize, at: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[at] = 1.0;
    v
}

/// Bottom-up commitment threshold for image `i` of `n`: `max(0.9, exp(-i/n))`.
pub fn commit_threshold(i: usize, n: usize) -> f64 {
    (-(i as f64) / n as f64).exp().max(0.9)
}

/// Per-object, per-concept predictions of the visual system.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualGraph {
    pub cardinalities: Vec<usize>,
    pub locations: Vec<BBox>,
    /// Row `k * |A| + a` holds `v^a_k`.
    pub probs: Vec<Vec<f64>>,
}

impl VisualGraph {
    pub fn num_objects(&self) -> usize {
        self.locations.len()
    }

    pub fn slot(&self, k: usize, a: usize) -> &[f64] {
        &self.probs[k * self.cardinalities.len() + a]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMemory {
    cardinalities: Vec<usize>,
    locations: Vec<BBox>,
    probs: Vec<Vec<f64>>,
    provenance: Vec<Provenance>,
}

impl GraphMemory {
    /// Every slot uniform over its concept's values.
    pub fn init_uniform(locations: Vec<BBox>, schema: &AttributeSchema) -> Result<Self, MemoryError> {
        if locations.is_empty() {
            return Err(MemoryError::Shape("memory needs at least one object".into()));
        }
        let cardinalities = schema.cardinalities();
        let mut probs = Vec::with_capacity(locations.len() * cardinalities.len());
        for _ in &locations {
            for &n in &cardinalities {
                probs.push(vec![1.0 / n as f64; n]);
            }
        }
        let provenance = vec![Provenance::Unset; probs.len()];
        Ok(Self {
            cardinalities,
            locations,
            probs,
            provenance,
        })
    }

    pub fn for_scene(scene: &Scene, schema: &AttributeSchema) -> Result<Self, MemoryError> {
        Self::init_uniform(scene.boxes(), schema)
    }

    pub fn num_objects(&self) -> usize {
        self.locations.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn num_slots(&self) -> usize {
        self.probs.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn locations(&self) -> &[BBox] {
        &self.locations
    }

    fn index(&self, k: usize, a: usize) -> Result<usize, MemoryError> {
        if k >= self.num_objects() || a >= self.num_concepts() {
            return Err(MemoryError::OutOfRange { object: k, concept: a });
        }
        Ok(k * self.num_concepts() + a)
    }

    pub fn slot(&self, k: usize, a: usize) -> &[f64] {
        &self.probs[k * self.num_concepts() + a]
    }

    pub fn provenance(&self, k: usize, a: usize) -> Provenance {
        self.provenance[k * self.num_concepts() + a]
    }

    /// The committed value of a slot, if its distribution is one-hot.
    pub fn committed(&self, k: usize, a: usize) -> Option<usize> {
        let p = self.slot(k, a);
        p.iter().position(|&x| x == 1.0)
    }

    pub fn is_committed_flat(&self, slot: usize) -> bool {
        self.probs[slot].contains(&1.0)
    }

    pub fn all_committed(&self) -> bool {
        (0..self.num_slots()).all(|s| self.is_committed_flat(s))
    }

    pub fn count_provenance(&self, which: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == which).count()
    }

    /// Commits every slot whose visual prediction clears `τ_i`; oracle facts stay.
    /// Returns the number of newly committed slots.
    pub fn bottom_up_update(&mut self, vg: &VisualGraph, i: usize, n: usize) -> Result<usize, MemoryError> {
        if vg.cardinalities != self.cardinalities || vg.num_objects() != self.num_objects() {
            return Err(MemoryError::Shape(format!(
                "visual graph {}x{:?} vs memory {}x{:?}",
                vg.num_objects(),
                vg.cardinalities,
                self.num_objects(),
                self.cardinalities
            )));
        }
        if i == 0 || i > n {
            return Err(MemoryError::ImageIndex { i, n });
        }
        let tau = commit_threshold(i, n);
        let mut commits = 0;
        for (s, v) in vg.probs.iter().enumerate() {
            if v.len() != self.probs[s].len() {
                return Err(MemoryError::Shape(format!("slot {s} has {} entries", v.len())));
            }
            if self.provenance[s] == Provenance::Oracle {
                continue;
            }
            let best = argmax(v);
            if v[best] > tau {
                let was = self.is_committed_flat(s);
                self.probs[s] = one_hot(v.len(), best);
                self.provenance[s] = Provenance::Vision;
                if !was {
                    commits += 1;
                }
            }
        }
        Ok(commits)
    }

    /// Applies an oracle answer to the asked slot. Returns whether memory changed.
    pub fn top_down_update(&mut self, k: usize, a: usize, answer: &OracleAnswer) -> Result<bool, MemoryError> {
        let s = self.index(k, a)?;
        let OracleAnswer::Value { concept, value } = *answer else {
            return Ok(false);
        };
        if concept != a || value >= self.cardinalities[a] {
            return Err(MemoryError::Shape(format!(
                "answer ({concept}, {value}) does not fit slot ({k}, {a})"
            )));
        }
        let next = one_hot(self.cardinalities[a], value);
        let changed = self.probs[s] != next || self.provenance[s] != Provenance::Oracle;
        self.probs[s] = next;
        self.provenance[s] = Provenance::Oracle;
        Ok(changed)
    }

    pub fn slot_entropy(&self, k: usize, a: usize) -> f64 {
        entropy(self.slot(k, a))
    }

    pub fn object_mean_entropy(&self, k: usize) -> f64 {
        let a = self.num_concepts();
        (0..a).map(|c| self.slot_entropy(k, c)).sum::<f64>() / a as f64
    }

    /// Fraction of slots that are committed to the ground-truth value.
    pub fn recall(&self, scene: &Scene) -> Result<f64, MemoryError> {
        if scene.len() != self.num_objects() {
            return Err(MemoryError::Shape(format!(
                "scene has {} objects, memory {}",
                scene.len(),
                self.num_objects()
            )));
        }
        let mut correct = 0usize;
        for (k, obj) in scene.objects.iter().enumerate() {
            for (a, &truth) in obj.attributes.iter().enumerate() {
                if self.committed(k, a) == Some(truth) {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / self.num_slots() as f64)
    }

    /// Direct write used by tests and pretraining fixtures.
    pub fn set_slot(&mut self, k: usize, a: usize, p: Vec<f64>, provenance: Provenance) -> Result<(), MemoryError> {
        let s = self.index(k, a)?;
        if p.len() != self.cardinalities[a] {
            return Err(MemoryError::Shape(format!("slot ({k}, {a}) expects {} entries", self.cardinalities[a])));
        }
        self.probs[s] = p;
        self.provenance[s] = provenance;
        Ok(())
    }

    pub fn commit(&mut self, k: usize, a: usize, value: usize, provenance: Provenance) -> Result<(), MemoryError> {
        let n = *self
            .cardinalities
            .get(a)
            .ok_or(MemoryError::OutOfRange { object: k, concept: a })?;
        self.set_slot(k, a, one_hot(n, value), provenance)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("memory serializes")
    }
}
