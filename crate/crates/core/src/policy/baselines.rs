//! Heuristic question policies: uniform random, entropy-driven, and
//! entropy-driven with spatial context for reference selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::memory::GraphMemory;
use crate::nnet::dist::{masked_softmax, sample_categorical};
use crate::qdsl::QuestionAction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub temperature: f64,
    /// Candidate references for the context variant: nearest `neighbors` objects.
    pub neighbors: usize,
    /// A reference is used only if its mean slot entropy is below this (nats).
    pub reference_threshold: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            neighbors: 3,
            reference_threshold: 0.1,
        }
    }
}

fn uncommitted(mem: &GraphMemory) -> Result<Vec<bool>, PolicyError> {
    let mask: Vec<bool> = (0..mem.num_slots()).map(|s| !mem.is_committed_flat(s)).collect();
    if mask.iter().any(|&m| m) {
        Ok(mask)
    } else {
        Err(PolicyError::AllCommitted)
    }
}

fn split(mem: &GraphMemory, slot: usize) -> (usize, usize) {
    (slot / mem.num_concepts(), slot % mem.num_concepts())
}

/// Target slot uniform over uncommitted slots; fair coin for using a
/// reference; reference uniform over the other objects.
pub fn baseline_random<R: Rng>(mem: &GraphMemory, rng: &mut R) -> Result<QuestionAction, PolicyError> {
    let mask = uncommitted(mem)?;
    let open: Vec<usize> = (0..mask.len()).filter(|&s| mask[s]).collect();
    let (k, a) = split(mem, open[rng.random_range(0..open.len())]);
    let others = mem.num_objects() - 1;
    if others > 0 && rng.random_bool(0.5) {
        let mut r = rng.random_range(0..others);
        if r >= k {
            r += 1;
        }
        Ok(QuestionAction::one_hop(k, a, r))
    } else {
        Ok(QuestionAction::zero_hop(k, a))
    }
}

fn sample_target<R: Rng>(mem: &GraphMemory, cfg: &BaselineConfig, rng: &mut R) -> Result<(usize, usize), PolicyError> {
    let mask = uncommitted(mem)?;
    let logits: Vec<f64> = (0..mem.num_slots())
        .map(|s| {
            let (k, a) = split(mem, s);
            mem.slot_entropy(k, a) / cfg.temperature
        })
        .collect();
    let p = masked_softmax(&logits, &mask)?;
    Ok(split(mem, sample_categorical(&p, rng)))
}

/// Samples a reference among `candidates` with probability proportional to
/// `softmax(-entropy / temperature)`; none if even the most certain
/// candidate is above the threshold.
fn sample_reference<R: Rng>(
    mem: &GraphMemory,
    candidates: &[usize],
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Option<usize> {
    let ent: Vec<f64> = candidates.iter().map(|&j| mem.object_mean_entropy(j)).collect();
    let best = ent.iter().cloned().fold(f64::INFINITY, f64::min);
    if best.partial_cmp(&cfg.reference_threshold) != Some(std::cmp::Ordering::Less) {
        return None;
    }
    let logits: Vec<f64> = ent.iter().map(|e| -e / cfg.temperature).collect();
    let p = masked_softmax(&logits, &vec![true; logits.len()]).ok()?;
    Some(candidates[sample_categorical(&p, rng)])
}

/// High-entropy slots are likely targets; low-entropy objects are likely references.
pub fn baseline_entropy<R: Rng>(mem: &GraphMemory, cfg: &BaselineConfig, rng: &mut R) -> Result<QuestionAction, PolicyError> {
    let (k, a) = sample_target(mem, cfg, rng)?;
    let candidates: Vec<usize> = (0..mem.num_objects()).filter(|&j| j != k).collect();
    Ok(match sample_reference(mem, &candidates, cfg, rng) {
        Some(r) => QuestionAction::one_hop(k, a, r),
        None => QuestionAction::zero_hop(k, a),
    })
}

/// The `m` objects nearest to `k` by center distance, nearest first.
pub fn nearest_neighbors(mem: &GraphMemory, k: usize, m: usize) -> Vec<usize> {
    let boxes = mem.locations();
    let mut others: Vec<usize> = (0..boxes.len()).filter(|&j| j != k).collect();
    others.sort_by(|&x, &y| {
        boxes[x]
            .center_distance(&boxes[k])
            .total_cmp(&boxes[y].center_distance(&boxes[k]))
            .then(x.cmp(&y))
    });
    others.truncate(m);
    others
}

/// Like [`baseline_entropy`] but references come only from the target's
/// spatial neighbors.
pub fn baseline_entropy_context<R: Rng>(
    mem: &GraphMemory,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Result<QuestionAction, PolicyError> {
    let (k, a) = sample_target(mem, cfg, rng)?;
    let candidates = nearest_neighbors(mem, k, cfg.neighbors);
    Ok(match sample_reference(mem, &candidates, cfg, rng) {
        Some(r) => QuestionAction::one_hop(k, a, r),
        None => QuestionAction::zero_hop(k, a),
    })
}
