//! Fold evaluation: each fold is a fresh deployment in which the visual
//! system learns from scratch while the policy questions the fold's images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::scene::{AttributeSchema, Scene};
use crate::seeding::derive_seed;
use crate::trainer::{run_image, Agent, DialogRecord, RolloutSettings, VisualLearner};
use crate::vision::{slot_accuracy, AttributeHeads, FeatureSpace, VisionConfig, VisionDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    /// Seeds the fixed feature embeddings; must match the training run.
    pub world_seed: u64,
    pub budget: usize,
    pub folds: usize,
    pub fold_size: usize,
    /// Independent repetitions of every fold with different seeds.
    pub repeats: usize,
    /// Never train the visual system and skip bottom-up commits.
    pub static_vision: bool,
    /// Measure held-out visual accuracy every this many images (0: never).
    pub visual_every: usize,
    /// Held-out scenes scored at each visual checkpoint.
    pub visual_heldout: usize,
    pub vision: VisionConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world_seed: 0,
            budget: 20,
            folds: 6,
            fold_size: 50,
            repeats: 3,
            static_vision: false,
            visual_every: 0,
            visual_heldout: 50,
            vision: VisionConfig::default(),
        }
    }
}

/// One run of one fold.
#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub repeat: usize,
    /// Mean held recall after rounds `1..=budget`.
    pub curve: Vec<f64>,
    pub init_recall: f64,
    pub auc: f64,
    /// `(images seen, held-out accuracy)` at each visual checkpoint.
    pub visual_accuracy: Vec<(usize, f64)>,
    pub dialogs: Vec<DialogRecord>,
}

impl FoldResult {
    /// Recall at round `k`; rounds past the budget hold the last value.
    pub fn recall_at(&self, k: usize) -> f64 {
        recall_at(&self.curve, k)
    }
}

pub fn recall_at(curve: &[f64], k: usize) -> f64 {
    match curve.len() {
        0 => f64::NAN,
        n => curve[k.clamp(1, n) - 1],
    }
}

/// Mean of the recall curve over rounds `1..=T`.
pub fn auc(curve: &[f64]) -> f64 {
    curve.iter().sum::<f64>() / curve.len() as f64
}

/// Averages held per-dialog curves round by round.
pub fn mean_curve(dialogs: &[DialogRecord], budget: usize) -> Vec<f64> {
    let mut out = vec![0.0; budget];
    for d in dialogs {
        for (o, r) in out.iter_mut().zip(d.held_curve(budget)) {
            *o += r;
        }
    }
    let n = dialogs.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Deterministic seed for fold `fold` of repetition `repeat`.
pub fn fold_seed(seed: u64, repeat: usize, fold: usize) -> u64 {
    derive_seed("eval-fold", &[seed, repeat as u64, fold as u64])
}

/// Starting state of the visual system in every fold.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum VisionStart {
    Fresh,
    /// Pretrained heads and the labels they were fit on.
    Pretrained(AttributeHeads, VisionDataset),
}

/// Runs one fold from a fresh learner; independent of every other fold.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_fold(
    agent: &Agent<'_>,
    scenes: &[Scene],
    heldout: &[Scene],
    schema: &AttributeSchema,
    cfg: &EvalConfig,
    start: &VisionStart,
    fold: usize,
    repeat: usize,
) -> Result<FoldResult, HarnessError> {
    let seed = fold_seed(cfg.seed, repeat, fold);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = FeatureSpace::new(schema, cfg.world_seed, cfg.vision.feature_dim);
    let mut learner = match start {
        VisionStart::Fresh => VisualLearner::new(
            AttributeHeads::new(&schema.cardinalities(), cfg.vision.clone(), derive_seed("eval-vision", &[seed])),
            !cfg.static_vision,
        ),
        VisionStart::Pretrained(heads, data) => VisualLearner {
            heads: heads.clone(),
            data: data.clone(),
            active: !cfg.static_vision,
        },
    };
    let settings = RolloutSettings {
        budget: cfg.budget,
        sigma: cfg.vision.noise_sigma,
        sequence_len: scenes.len(),
    };
    let mut dialogs = Vec::with_capacity(scenes.len());
    let mut visual_accuracy = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let img = run_image(scene, schema, i + 1, agent, &mut learner, &space, &settings, &mut rng)?;
        dialogs.push(img.record);
        if cfg.visual_every > 0 && (i + 1) % cfg.visual_every == 0 {
            let acc = slot_accuracy(&learner.heads, heldout, &space, cfg.vision.noise_sigma)?;
            visual_accuracy.push((i + 1, acc));
        }
    }
    let curve = mean_curve(&dialogs, cfg.budget);
    let init_recall = dialogs.iter().map(|d| d.init_recall).sum::<f64>() / dialogs.len().max(1) as f64;
    Ok(FoldResult {
        fold,
        repeat,
        auc: auc(&curve),
        curve,
        init_recall,
        visual_accuracy,
        dialogs,
    })
}

/// Splits `scenes` into `cfg.folds` folds of `cfg.fold_size` and runs every
/// fold `cfg.repeats` times in parallel. Results are ordered by repeat, then fold.
pub fn evaluate(
    agent: &Agent<'_>,
    scenes: &[Scene],
    schema: &AttributeSchema,
    cfg: &EvalConfig,
    start: &VisionStart,
) -> Result<Vec<FoldResult>, HarnessError> {
    let needed = cfg.folds * cfg.fold_size;
    if cfg.folds == 0 || cfg.fold_size == 0 || cfg.repeats == 0 || cfg.budget == 0 {
        return Err(HarnessError::Config("folds, fold_size, repeats and budget must be positive".into()));
    }
    if scenes.len() < needed {
        return Err(HarnessError::Config(format!(
            "{} test scenes for {} folds of {}",
            scenes.len(),
            cfg.folds,
            cfg.fold_size
        )));
    }
    let folds: Vec<&[Scene]> = scenes[..needed].chunks_exact(cfg.fold_size).collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.repeats)
        .flat_map(|r| (0..cfg.folds).map(move |f| (r, f)))
        .collect();
    jobs.par_iter()
        .map(|&(r, f)| {
            let next = folds[(f + 1) % folds.len()];
            let heldout = &next[..cfg.visual_heldout.min(next.len())];
            evaluate_fold(agent, folds[f], heldout, schema, cfg, start, f, r)
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
